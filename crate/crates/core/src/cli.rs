//! Command-line front end: `train` (sweeps × seeds), `probe` and
//! `spectrum` on checkpoints, and `plot` for logs.
//!
//! Exit codes: 0 success (a diverged run that was logged counts as
//! success), 2 configuration or usage error, 3 I/O or file-format error,
//! 4 numerical abort.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{read_checkpoint, write_checkpoint, Model};
use crate::optim::{LrSchedule, Variant};
use crate::param::ParamVector;
use crate::plot::{label_logs, render, PlotKind};
use crate::probes::{run_probe, ProbeResult};
use crate::spectral::{estimate_spectrum, EigenSummary};
use crate::trainer::{hessian_subsample, lanczos_config, run_with_data, Datasets, ExperimentConfig, TrainingLog};

/// Environment variable that overrides the dataset root.
pub const DATA_ENV: &str = "SHARPPATH_DATA";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::State(_) | Error::AlignmentUndefined(_) => EXIT_CONFIG,
        Error::Io { .. } | Error::Format(_) => EXIT_IO,
        Error::Numerical { .. } | Error::Singular(_) => EXIT_NUMERICAL,
    }
}

#[derive(Debug, Parser)]
#[command(name = "sharppath", version, about = "Curvature-aware training experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment, or a sweep of experiments, writing one log per
    /// grid point and seed plus an index.
    Train(TrainArgs),
    /// Loss-change probe and surface scan on a checkpoint.
    Probe(ProbeArgs),
    /// Render logs to an SVG plot.
    Plot(PlotArgs),
    /// Top-K Hessian eigenpairs of a checkpoint.
    Spectrum(SpectrumArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated seeds; overrides the config file.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Runs executed concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output JSON file.
    #[arg(long)]
    pub out: PathBuf,
    /// Step number recorded in the result.
    #[arg(long, default_value_t = 0)]
    pub step: usize,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub kind: String,
    /// Output SVG file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(required = true)]
    pub logs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output JSON file.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write each eigenvector next to the output in checkpoint format.
    #[arg(long)]
    pub save_vectors: bool,
}

/// Sweep axes. Each listed axis replaces the corresponding experiment
/// setting; the grid is their Cartesian product.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default)]
    pub eta: Vec<f64>,
    #[serde(default)]
    pub batch_size: Vec<usize>,
    #[serde(default)]
    pub gamma: Vec<f64>,
    #[serde(default)]
    pub k_top: Vec<usize>,
    #[serde(default)]
    pub variant: Vec<Variant>,
    #[serde(default)]
    pub schedule: Vec<LrSchedule>,
}

/// Contents of a `--config` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    /// Seeds to run when `--seeds` is not given; defaults to the
    /// experiment's own seed.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub sweep: SweepAxes,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// One point of a sweep grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    /// Axis name → value, for the axes that were swept.
    pub axes: BTreeMap<String, serde_json::Value>,
    pub experiment: ExperimentConfig,
}

/// Everything `train` needs: config, output directory, seeds, grid.
#[derive(Clone, Debug)]
pub struct RunManifest {
    pub config_path: PathBuf,
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    pub grid: Vec<GridPoint>,
}

fn product<T: Clone>(points: Vec<GridPoint>, name: &str, values: &[T], apply: impl Fn(&mut ExperimentConfig, &T), show: impl Fn(&T) -> serde_json::Value) -> Vec<GridPoint> {
    if values.is_empty() {
        return points;
    }
    let mut out = Vec::with_capacity(points.len() * values.len());
    for p in points {
        for v in values {
            let mut q = p.clone();
            apply(&mut q.experiment, v);
            q.axes.insert(name.to_string(), show(v));
            out.push(q);
        }
    }
    out
}

/// Expands the sweep axes over `base`.
pub fn expand_grid(base: &ExperimentConfig, sweep: &SweepAxes) -> Vec<GridPoint> {
    let json = |v: serde_json::Result<serde_json::Value>| v.unwrap_or(serde_json::Value::Null);
    let mut grid = vec![GridPoint {
        axes: BTreeMap::new(),
        experiment: base.clone(),
    }];
    grid = product(grid, "eta", &sweep.eta, |c, v| c.optimizer.eta = *v, |v| json(serde_json::to_value(v)));
    grid = product(grid, "batch_size", &sweep.batch_size, |c, v| c.optimizer.batch_size = *v, |v| json(serde_json::to_value(v)));
    grid = product(grid, "gamma", &sweep.gamma, |c, v| c.optimizer.gamma = *v, |v| json(serde_json::to_value(v)));
    grid = product(grid, "k_top", &sweep.k_top, |c, v| c.optimizer.k_top = *v, |v| json(serde_json::to_value(v)));
    grid = product(
        grid,
        "variant",
        &sweep.variant,
        |c, v| c.optimizer = c.optimizer.clone().with_variant(*v),
        |v| json(serde_json::to_value(v)),
    );
    grid = product(grid, "schedule", &sweep.schedule, |c, v| c.schedule = v.clone(), |v| json(serde_json::to_value(v)));
    grid
}

impl RunManifest {
    pub fn new(config_path: &Path, out: &Path, seeds: Option<Vec<u64>>) -> Result<Self> {
        let file = ConfigFile::read(config_path)?;
        let seeds = seeds.or(file.seeds).unwrap_or_else(|| vec![file.experiment.seed]);
        if seeds.is_empty() {
            return Err(Error::config("no seeds to run"));
        }
        let grid = expand_grid(&file.experiment, &file.sweep);
        for p in &grid {
            p.experiment.validate()?;
        }
        Ok(Self {
            config_path: config_path.to_path_buf(),
            out: out.to_path_buf(),
            seeds,
            grid,
        })
    }
}

/// One row of the sweep index file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub point: usize,
    pub axes: BTreeMap<String, serde_json::Value>,
    pub seed: u64,
    pub log: String,
    pub checkpoints: Vec<String>,
    pub diverged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepIndex {
    pub config: String,
    pub runs: Vec<IndexEntry>,
}

/// Dataset root: `$SHARPPATH_DATA` if set, else the config file's directory.
pub fn data_root(config_path: &Path) -> PathBuf {
    match std::env::var_os(DATA_ENV) {
        Some(p) if !p.is_empty() => PathBuf::from(p),
        _ => config_path.parent().map(Path::to_path_buf).unwrap_or_default(),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn stem(cfg: &ExperimentConfig) -> String {
    let name: String = cfg
        .name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if name.is_empty() {
        "run".into()
    } else {
        name
    }
}

/// Runs every (grid point, seed) pair and writes logs, checkpoints and
/// `index.json` into the manifest's output directory.
pub fn cmd_train(manifest: &RunManifest, jobs: usize) -> Result<SweepIndex> {
    fs::create_dir_all(&manifest.out).map_err(|e| Error::io(&manifest.out, e))?;
    let root = data_root(&manifest.config_path);
    // Every grid point shares the data section, so the datasets are loaded once.
    let data = Datasets::load(&manifest.grid[0].experiment.data, &root)?;
    let tasks: Vec<(usize, u64)> = (0..manifest.grid.len()).flat_map(|p| manifest.seeds.iter().map(move |&s| (p, s))).collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<IndexEntry>>>> = Mutex::new((0..tasks.len()).map(|_| None).collect());
    let workers = jobs.clamp(1, tasks.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(point, seed)) = tasks.get(i) else { break };
                let entry = train_one(manifest, &data, point, seed);
                results.lock().expect("result slots")[i] = Some(entry);
            });
        }
    });
    let mut runs = Vec::with_capacity(tasks.len());
    for r in results.into_inner().expect("result slots") {
        runs.push(r.expect("every task ran")?);
    }
    let index = SweepIndex {
        config: manifest.config_path.display().to_string(),
        runs,
    };
    let text = serde_json::to_string_pretty(&index).map_err(|e| Error::format(e.to_string()))?;
    write_file(&manifest.out.join("index.json"), text.as_bytes())?;
    Ok(index)
}

fn train_one(manifest: &RunManifest, data: &Datasets, point: usize, seed: u64) -> Result<IndexEntry> {
    let gp = &manifest.grid[point];
    let mut cfg = gp.experiment.clone();
    cfg.seed = seed;
    let base = format!("{}-p{point:02}-s{seed}", stem(&cfg));
    log::info!("starting {base}");
    let out = run_with_data(&cfg, data)?;
    let log_name = format!("{base}.ndjson");
    out.log.write(&manifest.out.join(&log_name))?;
    let kind = cfg.model.kind();
    let mut checkpoints = Vec::new();
    for (epoch, params) in &out.checkpoints {
        let name = format!("{base}.ep{epoch}.ckpt");
        write_checkpoint(&manifest.out.join(&name), kind, params)?;
        checkpoints.push(name);
    }
    let name = format!("{base}.final.ckpt");
    write_checkpoint(&manifest.out.join(&name), kind, &out.final_params)?;
    checkpoints.push(name);
    log::info!("finished {base} in {:.1}s", out.log.wall_time_secs);
    Ok(IndexEntry {
        point,
        axes: gp.axes.clone(),
        seed,
        log: log_name,
        checkpoints,
        diverged: out.log.diverged(),
    })
}

struct Loaded {
    cfg: ExperimentConfig,
    model: Model,
    data: Datasets,
    params: ParamVector,
}

fn load_checkpoint_run(config: &Path, checkpoint: &Path) -> Result<Loaded> {
    let cfg = ConfigFile::read(config)?.experiment;
    cfg.validate()?;
    let model = Model::new(cfg.model.clone())?;
    let (kind, params) = read_checkpoint(checkpoint)?;
    if kind != cfg.model.kind() {
        return Err(Error::config(format!(
            "checkpoint holds a {kind:?} model but the config describes {:?}",
            cfg.model.kind()
        )));
    }
    if params.len() != model.param_count() {
        return Err(Error::config(format!(
            "checkpoint has {} parameters, the configured model {}",
            params.len(),
            model.param_count()
        )));
    }
    let data = Datasets::load(&cfg.data, &data_root(config))?;
    Ok(Loaded { cfg, model, data, params })
}

/// One-shot spectrum estimate of a checkpoint on the run's Hessian
/// subsample.
pub fn cmd_spectrum(args: &SpectrumArgs) -> Result<EigenSummary> {
    let l = load_checkpoint_run(&args.config, &args.checkpoint)?;
    let (hessian, seed) = hessian_subsample(&l.cfg, &l.data.train);
    let lc = lanczos_config(&l.cfg, 0, l.model.param_count());
    let est = estimate_spectrum(&l.model, &l.params, &hessian, &lc)?.with_subsample_seed(seed);
    let summary = est.summary();
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::format(e.to_string()))?;
    write_file(&args.out, text.as_bytes())?;
    if args.save_vectors {
        for (i, v) in est.vectors().into_iter().enumerate() {
            let path = args.out.with_extension(format!("v{}.ckpt", i + 1));
            write_checkpoint(&path, l.cfg.model.kind(), v)?;
        }
    }
    Ok(summary)
}

/// Loss-change probe on a checkpoint, using the config's probe settings
/// (or the defaults) and its learning rate.
pub fn cmd_probe(args: &ProbeArgs) -> Result<ProbeResult> {
    let l = load_checkpoint_run(&args.config, &args.checkpoint)?;
    let settings = l.cfg.probe.as_ref().map(|p| p.settings.clone()).unwrap_or_default();
    let (hessian, _) = hessian_subsample(&l.cfg, &l.data.train);
    let mut lc = lanczos_config(&l.cfg, args.step, l.model.param_count());
    lc.k = lc.k.max(settings.eig_index).min(l.model.param_count());
    let est = estimate_spectrum(&l.model, &l.params, &hessian, &lc)?.with_step(args.step);
    let result = run_probe(
        &l.model,
        &l.params,
        &est,
        &settings,
        l.cfg.optimizer.eta,
        l.cfg.optimizer.batch_size,
        &l.data.train,
        &hessian,
        args.step,
    )?;
    let text = serde_json::to_string_pretty(&result).map_err(|e| Error::format(e.to_string()))?;
    write_file(&args.out, text.as_bytes())?;
    Ok(result)
}

pub fn cmd_plot(args: &PlotArgs) -> Result<()> {
    let kind = PlotKind::parse(&args.kind).ok_or_else(|| {
        let names: Vec<&str> = PlotKind::ALL.iter().map(|k| k.name()).collect();
        Error::config(format!("unknown plot kind '{}'; expected one of {}", args.kind, names.join(", ")))
    })?;
    let mut logs = Vec::with_capacity(args.logs.len());
    for p in &args.logs {
        let log = TrainingLog::read(p)?;
        if log.entries.is_empty() {
            return Err(Error::config(format!("log {} is empty", p.display())));
        }
        logs.push(log);
    }
    let svg = render(kind, &label_logs(logs))?;
    write_file(&args.out, svg.as_bytes())
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Train(a) => RunManifest::new(&a.config, &a.out, a.seeds.clone()).and_then(|m| {
            let index = cmd_train(&m, a.jobs)?;
            println!("wrote {} logs and index.json to {}", index.runs.len(), a.out.display());
            Ok(())
        }),
        Command::Probe(a) => cmd_probe(a).map(|r| {
            for d in &r.deltas {
                println!("alpha {:>5}  delta {:+.6}", d[0], d[1]);
            }
        }),
        Command::Plot(a) => cmd_plot(a).map(|()| println!("wrote {}", a.out.display())),
        Command::Spectrum(a) => cmd_spectrum(a).map(|s| {
            for (i, (l, r)) in s.lambdas.iter().zip(&s.residuals).enumerate() {
                println!("lambda_{:<3} {l:+.6e}  residual {r:.2e}", i + 1);
            }
        }),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

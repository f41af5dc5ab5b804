//! The training loop: runs a model, update rule and schedule over a
//! dataset while recording the Hessian spectrum, gradient alignment and
//! probe results along the way.
//!
//! Time is counted in optimizer steps `t`. A record tagged `epoch = e` at
//! step `t` describes the parameters after `e` completed epochs and `t`
//! updates. Every source of randomness is a separate stream of the master
//! seed, so spectrum estimation and probing never alter the trajectory.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::batch::Batch;
use crate::data::{augment, batch_iter, random_subset, subsample_first_n, AugmentConfig, Dataset, DatasetSource, Split};
use crate::error::{Error, Result};
use crate::models::{Model, ModelSpec};
use crate::optim::{schedule_lr, step, LrSchedule, OptimizerConfig, OptimizerState};
use crate::param::ParamVector;
use crate::probes::{run_probe, ProbeConfig, ProbeResult};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::spectral::{alignment, estimate_spectrum, frobenius_trunc, subsample_size, CurvatureRecord, EigenEstimate, LanczosConfig};

/// Loss above which a run is declared diverged.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cadence {
    Off,
    /// At every epoch boundary.
    PerEpoch,
    /// Every `stride` steps from `start_step` until `first_steps`, plus
    /// every epoch boundary.
    PerIteration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    #[serde(default = "default_cadence")]
    pub cadence: Cadence,
    #[serde(default = "default_first_steps")]
    pub first_steps: usize,
    #[serde(default)]
    pub start_step: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// Eigenvalues estimated and logged per record.
    #[serde(default = "default_k_track")]
    pub k_track: usize,
    /// Fraction of the training set the Hessian is measured on.
    #[serde(default = "default_fraction")]
    pub subsample_fraction: f64,
    /// Overrides `subsample_fraction` with an absolute count.
    #[serde(default)]
    pub subsample_size: Option<usize>,
    #[serde(default)]
    pub max_iters: Option<usize>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Eigenvectors averaged in the alignment statistic.
    #[serde(default = "default_alignment_m")]
    pub alignment_m: usize,
}

fn default_cadence() -> Cadence {
    Cadence::PerEpoch
}

fn default_first_steps() -> usize {
    400
}

fn default_stride() -> usize {
    1
}

fn default_k_track() -> usize {
    10
}

fn default_fraction() -> f64 {
    0.05
}

fn default_tol() -> f64 {
    1e-6
}

fn default_alignment_m() -> usize {
    5
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            cadence: default_cadence(),
            first_steps: default_first_steps(),
            start_step: 0,
            stride: default_stride(),
            k_track: default_k_track(),
            subsample_fraction: default_fraction(),
            subsample_size: None,
            max_iters: None,
            tol: default_tol(),
            alignment_m: default_alignment_m(),
        }
    }
}

/// Probes run at every curvature record whose step lies in
/// `[start_step, end_step]`, along eigenvector `eig_index` of that record's
/// estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSchedule {
    #[serde(default)]
    pub start_step: usize,
    #[serde(default = "usize_max")]
    pub end_step: usize,
    #[serde(default)]
    pub settings: ProbeConfig,
}

fn usize_max() -> usize {
    usize::MAX
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: DatasetSource,
    /// Keep only the first `n` training examples.
    #[serde(default)]
    pub first_n: Option<usize>,
    /// Move the last `n` training examples into the validation set.
    #[serde(default)]
    pub val_last: Option<usize>,
    #[serde(default)]
    pub val: Option<DatasetSource>,
    #[serde(default)]
    pub test: Option<DatasetSource>,
    #[serde(default)]
    pub augment: Option<AugmentConfig>,
    #[serde(default = "default_true")]
    pub shuffle: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub epochs: usize,
    /// Stops early once this many steps have been taken.
    #[serde(default)]
    pub max_steps: Option<usize>,
    pub model: ModelSpec,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub schedule: LrSchedule,
    pub data: DataConfig,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub probe: Option<ProbeSchedule>,
    /// Epoch whose validation accuracy the summary reports.
    #[serde(default)]
    pub summary_val_epoch: Option<usize>,
    /// Epochs after which the parameters are kept as checkpoints.
    #[serde(default)]
    pub checkpoint_epochs: Vec<usize>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optimizer.validate()?;
        self.schedule.validate()?;
        let sp = &self.spectrum;
        let needed = self.optimizer.variant.basis_size(self.optimizer.k_top);
        if sp.k_track < needed {
            return Err(Error::config(format!(
                "spectrum.k_track = {} but the update rule needs {needed} eigenvectors",
                sp.k_track
            )));
        }
        if sp.cadence != Cadence::Off || needed > 0 {
            if sp.k_track == 0 {
                return Err(Error::config("spectrum.k_track must be at least 1"));
            }
            if !(sp.subsample_fraction > 0.0 && sp.subsample_fraction <= 1.0) {
                return Err(Error::config("spectrum.subsample_fraction must lie in (0, 1]"));
            }
            if !(sp.tol > 0.0) {
                return Err(Error::config("spectrum.tol must be positive"));
            }
            if sp.alignment_m == 0 || sp.alignment_m > sp.k_track {
                return Err(Error::config("spectrum.alignment_m must lie in 1..=k_track"));
            }
        }
        if sp.stride == 0 {
            return Err(Error::config("spectrum.stride must be at least 1"));
        }
        if let Some(p) = &self.probe {
            p.settings.validate()?;
            if p.settings.eig_index > sp.k_track {
                return Err(Error::config(format!(
                    "probe eig_index {} exceeds spectrum.k_track {}",
                    p.settings.eig_index, sp.k_track
                )));
            }
        }
        Ok(())
    }

    fn needs_spectrum(&self) -> bool {
        self.spectrum.cadence != Cadence::Off || self.optimizer.variant.needs_basis()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub t: usize,
    pub train_loss: f64,
    pub train_acc: Option<f64>,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub lr: f64,
    pub dist_from_init: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Epoch with the best validation accuracy (or loss, for models
    /// without accuracy), falling back to training metrics when there is no
    /// validation set. Ties keep the earliest.
    pub best_epoch: usize,
    pub test_acc_at_best: Option<f64>,
    pub val_acc_at_checkpoint: Option<f64>,
    pub frob_at_best: Option<f64>,
    pub frob_final: Option<f64>,
    pub final_loss: f64,
    pub dist_at_best: f64,
    pub steps: usize,
    pub diverged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogEntry {
    Config {
        config: Box<ExperimentConfig>,
        param_count: usize,
        train_size: usize,
        hessian_subsample: usize,
    },
    Epoch(EpochRecord),
    Curvature(CurvatureRecord),
    Probe(ProbeResult),
    Diverged {
        t: usize,
        epoch: usize,
        reason: String,
    },
    Summary(Summary),
}

/// Everything a run writes, in order. The wall time is kept out of the
/// serialized form so identical configs give identical files.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub entries: Vec<LogEntry>,
    pub wall_time_secs: f64,
}

impl TrainingLog {
    pub fn curvature(&self) -> impl Iterator<Item = &CurvatureRecord> {
        self.entries.iter().filter_map(|e| match e {
            LogEntry::Curvature(r) => Some(r),
            _ => None,
        })
    }

    pub fn epochs(&self) -> impl Iterator<Item = &EpochRecord> {
        self.entries.iter().filter_map(|e| match e {
            LogEntry::Epoch(r) => Some(r),
            _ => None,
        })
    }

    pub fn probes(&self) -> impl Iterator<Item = &ProbeResult> {
        self.entries.iter().filter_map(|e| match e {
            LogEntry::Probe(r) => Some(r),
            _ => None,
        })
    }

    pub fn summary(&self) -> Option<&Summary> {
        self.entries.iter().rev().find_map(|e| match e {
            LogEntry::Summary(s) => Some(s),
            _ => None,
        })
    }

    pub fn config(&self) -> Option<&ExperimentConfig> {
        self.entries.iter().find_map(|e| match e {
            LogEntry::Config { config, .. } => Some(config.as_ref()),
            _ => None,
        })
    }

    pub fn diverged(&self) -> bool {
        self.entries.iter().any(|e| matches!(e, LogEntry::Diverged { .. }))
    }

    /// One JSON object per line.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("log entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_ndjson(text: &str) -> Result<Self> {
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(format!("log line {}: {e}", i + 1))))
            .collect::<Result<Vec<LogEntry>>>()?;
        Ok(Self {
            entries,
            wall_time_secs: 0.0,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_ndjson().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_ndjson(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Recomputes the summary from the epoch and curvature records of `log`.
pub fn summarize(log: &TrainingLog, val_checkpoint: Option<usize>) -> Result<Summary> {
    let epochs: Vec<&EpochRecord> = log.epochs().collect();
    let last = *epochs.last().ok_or_else(|| Error::config("log has no epoch records"))?;
    let candidates: Vec<&EpochRecord> = if epochs.len() > 1 { epochs[1..].to_vec() } else { epochs.clone() };
    // larger is better
    let score = |r: &EpochRecord| -> f64 {
        r.val_acc
            .or(r.val_loss.map(|l| -l))
            .or(r.train_acc)
            .unwrap_or(-r.train_loss)
    };
    let mut best = candidates[0];
    for r in &candidates[1..] {
        if score(r) > score(best) {
            best = r;
        }
    }
    let frob_at = |t: usize| log.curvature().find(|c| c.t == t).map(|c| c.frob_trunc);
    let frob_final = log.curvature().last().map(|c| c.frob_trunc);
    Ok(Summary {
        best_epoch: best.epoch,
        test_acc_at_best: best.test_acc,
        val_acc_at_checkpoint: val_checkpoint.and_then(|e| epochs.iter().find(|r| r.epoch == e)).and_then(|r| r.val_acc),
        frob_at_best: frob_at(best.t),
        frob_final,
        final_loss: last.train_loss,
        dist_at_best: best.dist_from_init,
        steps: last.t,
        diverged: log.diverged(),
    })
}

/// Training, validation and test sets of a config.
pub struct Datasets {
    pub train: Dataset,
    pub val: Option<Dataset>,
    pub test: Option<Dataset>,
}

impl Datasets {
    pub fn load(cfg: &DataConfig, root: &Path) -> Result<Self> {
        let mut train = cfg.train.load(root, Split::Train)?;
        if let Some(n) = cfg.first_n {
            train = subsample_first_n(&train, n)?;
        }
        let mut val = match &cfg.val {
            Some(src) => Some(src.load(root, Split::Val)?),
            None => None,
        };
        if let Some(n) = cfg.val_last {
            if val.is_some() {
                return Err(Error::config("set either data.val or data.val_last, not both"));
            }
            let (t, v) = train.split_last(n)?;
            train = t;
            val = Some(v);
        }
        let test = match &cfg.test {
            Some(src) => Some(src.load(root, Split::Test)?),
            None => None,
        };
        Ok(Self { train, val, test })
    }
}

/// What a run produces besides its log.
pub struct RunOutput {
    pub log: TrainingLog,
    pub init_params: ParamVector,
    pub final_params: ParamVector,
    /// `(epoch, params)` for each requested checkpoint epoch reached.
    pub checkpoints: Vec<(usize, ParamVector)>,
    pub last_estimate: Option<EigenEstimate>,
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    model: Model,
    data: &'a Datasets,
    hessian: Batch,
    hessian_seed: u64,
    init: ParamVector,
    log: TrainingLog,
}

fn finite_loss(loss: f64) -> Option<String> {
    if !loss.is_finite() {
        Some(format!("non-finite loss {loss}"))
    } else if loss > DIVERGENCE_LOSS {
        Some(format!("loss {loss:e} exceeds {DIVERGENCE_LOSS:e}"))
    } else {
        None
    }
}

impl Run<'_> {
    fn accuracy(&self, params: &ParamVector, ds: &Dataset) -> Result<Option<f64>> {
        if self.model.spec().classes().is_none() {
            return Ok(None);
        }
        Ok(Some(self.model.accuracy(params, ds.inputs(), ds.labels())?))
    }

    fn evaluate(&self, params: &ParamVector, epoch: usize, t: usize, lr: f64) -> Result<EpochRecord> {
        let d = self.data;
        let train_loss = self.model.loss(params, &d.train.as_batch())?;
        let (val_loss, val_acc) = match &d.val {
            Some(v) => (Some(self.model.loss(params, &v.as_batch())?), self.accuracy(params, v)?),
            None => (None, None),
        };
        let test_acc = match &d.test {
            Some(ts) => self.accuracy(params, ts)?,
            None => None,
        };
        Ok(EpochRecord {
            epoch,
            t,
            train_loss,
            train_acc: self.accuracy(params, &d.train)?,
            val_loss,
            val_acc,
            test_acc,
            lr,
            dist_from_init: params.distance(&self.init),
        })
    }

    fn estimate(&self, params: &ParamVector, t: usize) -> Result<EigenEstimate> {
        let lc = lanczos_config(self.cfg, t, self.model.param_count());
        Ok(estimate_spectrum(&self.model, params, &self.hessian, &lc)?
            .with_step(t)
            .with_subsample_seed(self.hessian_seed))
    }

    /// Curvature record (and probe, when scheduled) at step `t`.
    /// `g` is the mini-batch gradient about to be applied.
    #[allow(clippy::too_many_arguments)]
    fn record(&mut self, params: &ParamVector, g: &[f64], t: usize, epoch: usize, lr: f64, est: &EigenEstimate) -> Result<()> {
        let sp = &self.cfg.spectrum;
        let align = match alignment(g, est, sp.alignment_m.min(est.pairs.len())) {
            Ok(a) => Some(a),
            Err(Error::AlignmentUndefined(_)) => None,
            Err(e) => return Err(e),
        };
        let (loss, train_acc) = (
            self.model.loss(params, &self.data.train.as_batch())?,
            self.accuracy(params, &self.data.train)?,
        );
        let val_acc = match &self.data.val {
            Some(v) => self.accuracy(params, v)?,
            None => None,
        };
        self.log.entries.push(LogEntry::Curvature(CurvatureRecord {
            t,
            epoch,
            loss,
            train_acc,
            val_acc,
            lambdas: est.lambdas(),
            residuals: est.residuals(),
            converged: est.converged_count(),
            frob_trunc: frobenius_trunc(est),
            alignment: align,
            dist_from_init: params.distance(&self.init),
            lr,
        }));
        if let Some(p) = &self.cfg.probe {
            if (p.start_step..=p.end_step).contains(&t) && p.settings.eig_index <= est.converged_count() {
                let result = run_probe(
                    &self.model,
                    params,
                    est,
                    &p.settings,
                    lr,
                    self.cfg.optimizer.batch_size,
                    &self.data.train,
                    &self.hessian,
                    t,
                )?;
                self.log.entries.push(LogEntry::Probe(result));
            }
        }
        Ok(())
    }

    fn per_iteration_due(&self, t: usize) -> bool {
        let sp = &self.cfg.spectrum;
        sp.cadence == Cadence::PerIteration && (sp.start_step..sp.first_steps).contains(&t) && t.is_multiple_of(sp.stride)
    }
}

fn diverged(log: &mut TrainingLog, t: usize, epoch: usize, reason: String) {
    log::warn!("run diverged at step {t}: {reason}");
    log.entries.push(LogEntry::Diverged { t, epoch, reason });
}

/// The fixed training subsample a run measures its Hessian on, and the seed
/// that selected it.
pub fn hessian_subsample(cfg: &ExperimentConfig, train: &Dataset) -> (Batch, u64) {
    let n = train.len();
    let count = cfg.spectrum.subsample_size.unwrap_or_else(|| subsample_size(n, cfg.spectrum.subsample_fraction)).clamp(1, n);
    let seed = derive_seed(cfg.seed, Stream::Subsample, &[]);
    (train.gather(&random_subset(n, count, seed)), seed)
}

/// Lanczos settings a run uses for its estimate at step `t`.
pub fn lanczos_config(cfg: &ExperimentConfig, t: usize, dim: usize) -> LanczosConfig {
    let sp = &cfg.spectrum;
    let mut lc = LanczosConfig::new(sp.k_track.min(dim), derive_seed(cfg.seed, Stream::Lanczos, &[t as u64])).with_tol(sp.tol);
    if let Some(m) = sp.max_iters {
        lc = lc.with_max_iters(m);
    }
    lc.max_iters = lc.max_iters.min(dim);
    lc
}

/// Runs `cfg` on datasets resolved against `data_root`.
pub fn run_experiment(cfg: &ExperimentConfig, data_root: &Path) -> Result<RunOutput> {
    cfg.validate()?;
    let data = Datasets::load(&cfg.data, data_root)?;
    run_with_data(cfg, &data)
}

/// Runs `cfg` on already loaded datasets (the config's data section is only
/// echoed into the log).
pub fn run_with_data(cfg: &ExperimentConfig, data: &Datasets) -> Result<RunOutput> {
    cfg.validate()?;
    let started = Instant::now();
    let model = Model::new(cfg.model.clone())?;
    let init = model.init_params(&mut stream_rng(cfg.seed, Stream::Init, &[]));
    let n = data.train.len();
    let (hessian, hessian_seed) = hessian_subsample(cfg, &data.train);
    let hessian_n = hessian.len();
    let mut run = Run {
        cfg,
        model,
        data,
        hessian,
        hessian_seed,
        init: init.clone(),
        log: TrainingLog::default(),
    };
    run.log.entries.push(LogEntry::Config {
        config: Box::new(cfg.clone()),
        param_count: run.model.param_count(),
        train_size: n,
        hessian_subsample: hessian_n,
    });

    let opt = &cfg.optimizer;
    let basis_k = opt.variant.basis_size(opt.k_top);
    let mut state = OptimizerState::new();
    let mut params = init.clone();
    let mut lr = opt.eta;
    let mut val_history: Vec<f64> = Vec::new();
    let mut checkpoints = Vec::new();
    let mut last_estimate: Option<EigenEstimate> = None;
    let mut t = 0usize;
    let mut epoch = 0usize;
    let mut halted = false;
    let mut opt_cfg = opt.clone();

    let first = run.evaluate(&params, 0, 0, lr)?;
    if let Some(reason) = finite_loss(first.train_loss) {
        diverged(&mut run.log, 0, 0, reason);
        halted = true;
    }
    run.log.entries.push(LogEntry::Epoch(first));

    while !halted && epoch < cfg.epochs && !cfg.max_steps.is_some_and(|m| t >= m) {
        opt_cfg.eta = lr;
        let mut boundary = cfg.needs_spectrum();
        let batches = batch_iter(&data.train, opt.batch_size, cfg.seed, epoch, cfg.data.shuffle)?;
        for (i, batch) in batches.enumerate() {
            if cfg.max_steps.is_some_and(|m| t >= m) {
                halted = true;
                break;
            }
            let batch = match &cfg.data.augment {
                Some(a) => augment(&batch, a, &mut stream_rng(a.seed ^ cfg.seed, Stream::Augment, &[epoch as u64, i as u64]))?,
                None => batch,
            };
            let (loss, g) = match run.model.loss_grad(&params, &batch) {
                Ok(v) => v,
                Err(Error::Numerical { context, .. }) => {
                    diverged(&mut run.log, t, epoch, context);
                    halted = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            if let Some(reason) = finite_loss(loss) {
                diverged(&mut run.log, t, epoch, reason);
                halted = true;
                break;
            }
            let due = (boundary && cfg.spectrum.cadence != Cadence::Off) || run.per_iteration_due(t);
            if boundary || due {
                let est = run.estimate(&params, t)?;
                if boundary && basis_k > 0 {
                    state.refresh_basis(&est, basis_k)?;
                }
                if due {
                    run.record(&params, &g, t, epoch, lr, &est)?;
                }
                last_estimate = Some(est);
                boundary = false;
            }
            params = match step(&params, &g, &opt_cfg, &mut state) {
                Ok(p) => p,
                Err(Error::Numerical { context, .. }) => {
                    diverged(&mut run.log, t, epoch, context);
                    halted = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            t += 1;
        }
        if halted && !cfg.max_steps.is_some_and(|m| t >= m) {
            break;
        }
        epoch += 1;
        let rec = match run.evaluate(&params, epoch, t, lr) {
            Ok(r) => r,
            Err(Error::Numerical { context, .. }) => {
                diverged(&mut run.log, t, epoch, context);
                break;
            }
            Err(e) => return Err(e),
        };
        if let Some(reason) = finite_loss(rec.train_loss) {
            diverged(&mut run.log, t, epoch, reason);
            run.log.entries.push(LogEntry::Epoch(rec));
            break;
        }
        log::info!(
            "epoch {epoch}: train loss {:.4}, train acc {:?}, lr {lr}",
            rec.train_loss,
            rec.train_acc
        );
        val_history.push(rec.val_loss.unwrap_or(rec.train_loss));
        run.log.entries.push(LogEntry::Epoch(rec));
        if cfg.checkpoint_epochs.contains(&epoch) {
            checkpoints.push((epoch, params.clone()));
        }
        lr = schedule_lr(&cfg.schedule, opt.eta, &val_history, epoch);
    }

    if !run.log.diverged() && cfg.spectrum.cadence != Cadence::Off {
        let final_t = t;
        let already = run.log.curvature().last().is_some_and(|c| c.t == final_t);
        if !already {
            let est = run.estimate(&params, final_t)?;
            let idx = random_subset(n, opt.batch_size, derive_seed(cfg.seed, Stream::Alignment, &[final_t as u64]));
            let g = run.model.loss_grad(&params, &data.train.gather(&idx))?.1;
            run.record(&params, &g, final_t, epoch, lr, &est)?;
            last_estimate = Some(est);
        }
    }

    let summary = summarize(&run.log, cfg.summary_val_epoch)?;
    run.log.entries.push(LogEntry::Summary(summary));
    run.log.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(RunOutput {
        log: run.log,
        init_params: init,
        final_params: params,
        checkpoints,
        last_estimate,
    })
}

//! Trains two short runs and writes every plot kind as SVG into the
//! directory given as the first argument (default: the temp dir).

use sharppath::data::DatasetSource;
use sharppath::models::ModelSpec;
use sharppath::optim::{LrSchedule, OptimizerConfig};
use sharppath::plot::{label_logs, render, PlotKind};
use sharppath::trainer::{run_experiment, Cadence, DataConfig, ExperimentConfig, ProbeSchedule, SpectrumConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir: std::path::PathBuf = std::env::args().nth(1).map(Into::into).unwrap_or_else(std::env::temp_dir);
    let mut logs = Vec::new();
    for eta in [0.02, 0.1] {
        let cfg = ExperimentConfig {
            name: format!("eta {eta}"),
            seed: 1,
            epochs: 3,
            max_steps: None,
            model: ModelSpec::mlp(vec![6, 24, 3]),
            optimizer: OptimizerConfig::sgd(eta, 20),
            schedule: LrSchedule::constant(),
            data: DataConfig {
                train: DatasetSource::SynthGaussian {
                    classes: 3,
                    n: 300,
                    dim: 6,
                    separation: 1.5,
                    seed: 2,
                },
                first_n: None,
                val_last: Some(60),
                val: None,
                test: None,
                augment: None,
                shuffle: true,
            },
            spectrum: SpectrumConfig {
                cadence: Cadence::PerIteration,
                first_steps: 30,
                stride: 3,
                k_track: 5,
                ..SpectrumConfig::default()
            },
            probe: Some(ProbeSchedule {
                start_step: 0,
                end_step: 30,
                settings: Default::default(),
            }),
            summary_val_epoch: None,
            checkpoint_epochs: vec![],
        };
        logs.push(run_experiment(&cfg, std::path::Path::new("."))?.log);
    }
    let logs = label_logs(logs);
    std::fs::create_dir_all(&out_dir)?;
    for kind in PlotKind::ALL {
        let path = std::path::Path::new(&out_dir).join(format!("{}.svg", kind.name()));
        std::fs::write(&path, render(kind, &logs)?)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

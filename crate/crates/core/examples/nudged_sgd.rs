//! Plain SGD against Nudged-SGD, which shrinks the learning rate by γ
//! inside the top-K Hessian eigenspace. Run with `--release`.

use sharppath::data::DatasetSource;
use sharppath::models::ModelSpec;
use sharppath::optim::{LrSchedule, OptimizerConfig};
use sharppath::trainer::{run_experiment, DataConfig, ExperimentConfig, SpectrumConfig};

fn main() -> sharppath::Result<()> {
    let base = ExperimentConfig {
        name: "sgd".into(),
        seed: 4,
        epochs: 6,
        max_steps: None,
        model: ModelSpec::mlp(vec![20, 64, 64, 4]),
        optimizer: OptimizerConfig::sgd(0.05, 32),
        schedule: LrSchedule::constant(),
        data: DataConfig {
            train: DatasetSource::SynthGaussian {
                classes: 4,
                n: 1000,
                dim: 20,
                separation: 2.0,
                seed: 7,
            },
            first_n: None,
            val_last: Some(200),
            val: None,
            test: None,
            augment: None,
            shuffle: true,
        },
        spectrum: SpectrumConfig {
            k_track: 5,
            ..SpectrumConfig::default()
        },
        probe: None,
        summary_val_epoch: None,
        checkpoint_epochs: vec![],
    };
    let mut nudged = base.clone();
    nudged.name = "nsgd".into();
    nudged.optimizer = OptimizerConfig::nsgd(0.05, 32, 0.01, 5);

    for cfg in [base, nudged] {
        let out = run_experiment(&cfg, std::path::Path::new("."))?;
        let trace: Vec<String> = out.log.curvature().map(|r| format!("{:.3}/{:.2}", r.train_acc.unwrap_or(0.0), r.lambdas[0])).collect();
        println!("{:<5} acc/λ₁ per epoch: {}", cfg.name, trace.join("  "));
    }
    Ok(())
}

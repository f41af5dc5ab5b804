//! λ₁ over the first epochs of SGD at two learning rates. Run with
//! `--release`; each epoch record costs a Lanczos solve.

use sharppath::data::{DatasetSource, SynthImageConfig};
use sharppath::models::ModelSpec;
use sharppath::optim::{LrSchedule, OptimizerConfig};
use sharppath::trainer::{run_with_data, DataConfig, Datasets, ExperimentConfig, SpectrumConfig};

fn main() -> sharppath::Result<()> {
    let mut images = SynthImageConfig::new(10, 1000, [8, 8, 3], 100);
    images.prototypes = 1;
    images.noise = 0.1;
    images.max_shift = 1;
    let data_cfg = DataConfig {
        train: DatasetSource::SynthImages(images),
        first_n: None,
        val_last: None,
        val: None,
        test: None,
        augment: None,
        shuffle: true,
    };
    let data = Datasets::load(&data_cfg, std::path::Path::new("."))?;

    for eta in [0.01, 0.1] {
        let cfg = ExperimentConfig {
            name: format!("eta-{eta}"),
            seed: 0,
            epochs: 8,
            max_steps: None,
            model: ModelSpec::mlp(vec![8 * 8 * 3, 64, 64, 10]),
            optimizer: OptimizerConfig::sgd(eta, 32),
            schedule: LrSchedule::constant(),
            data: data_cfg.clone(),
            spectrum: SpectrumConfig {
                k_track: 5,
                ..SpectrumConfig::default()
            },
            probe: None,
            summary_val_epoch: None,
            checkpoint_epochs: vec![],
        };
        let out = run_with_data(&cfg, &data)?;
        println!("η = {eta}");
        for r in out.log.curvature() {
            println!("  epoch {:>2}  λ₁ {:>8.3}  train acc {:.3}  |cos| {:.4}", r.epoch, r.lambdas[0], r.train_acc.unwrap_or(f64::NAN), r.alignment.unwrap_or(f64::NAN));
        }
    }
    Ok(())
}

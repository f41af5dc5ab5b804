//! Expected loss change of an SGD step restricted to the top eigenvector,
//! for several multiples α of the learning rate, plus a 1-D loss scan.

use sharppath::data::synth_gaussian;
use sharppath::models::ModelSpec;
use sharppath::probes::{run_probe, ProbeConfig};
use sharppath::rng::rng_from_seed;
use sharppath::spectral::estimate_spectrum;
use sharppath::{LanczosConfig, Model};

fn main() -> sharppath::Result<()> {
    let model = Model::new(ModelSpec::mlp(vec![10, 48, 3]))?;
    let train = synth_gaussian(3, 600, 10, 1.5, 5)?;
    let eval = train.gather(&(0..200).collect::<Vec<_>>());
    let params = model.init_params(&mut rng_from_seed(2));
    let est = estimate_spectrum(&model, &params, &eval, &LanczosConfig::new(3, 9))?;
    let eta = 2.0 / est.pairs[0].lambda;
    println!("λ₁ = {:.4}, probing at η = 2/λ₁ = {eta:.4}", est.pairs[0].lambda);

    let res = run_probe(&model, &params, &est, &ProbeConfig::default(), eta, 32, &train, &eval, 0)?;
    for [alpha, delta] in &res.deltas {
        println!("α = {alpha:<4}  E[ΔL] = {delta:+.3e}");
    }
    println!("expected step norm {:.4e}", res.step_norm);
    for [k, loss] in res.scan.iter().step_by(4) {
        println!("k = {k:+.1}  L = {loss:.6}");
    }
    Ok(())
}

//! On a two-level spectrum, Nudged-SGD with γ equal to the eigenvalue
//! ratio and K equal to the size of the top level takes the Newton step.

use sharppath::models::ModelSpec;
use sharppath::optim::{newton_step, nsgd_step, OptimizerConfig, OptimizerState};
use sharppath::spectral::estimate_spectrum;
use sharppath::{Batch, LanczosConfig, Model, ParamVector, QuadMatrix, Tensor};

fn main() -> sharppath::Result<()> {
    let diag = vec![100.0, 100.0, 100.0, 100.0, 100.0, 1.0, 1.0];
    let model = Model::new(ModelSpec::quadratic_diag(diag.clone(), vec![0.0; 7]))?;
    let params = ParamVector::new(vec![0.3, -1.0, 0.5, 2.0, -0.7, 1.1, 0.4]);
    let origin = Batch::unlabeled(Tensor::zeros(vec![1, 7]));
    let est = estimate_spectrum(&model, &params, &origin, &LanczosConfig::new(5, 1))?;

    let eta = 0.5;
    let mut state = OptimizerState::new();
    state.refresh_basis(&est, 5)?;
    let g = vec![1.0, -2.0, 0.5, 0.0, 3.0, -1.0, 0.25];
    let nsgd = nsgd_step(&params, &g, &OptimizerConfig::nsgd(eta, 1, 0.01, 5), &mut state)?;
    let newton = newton_step(&params, &g, &QuadMatrix::Diag(diag), eta, 0.0)?;
    for i in 0..7 {
        println!("{i}: nsgd {:>12.9}  newton {:>12.9}", nsgd[i], newton[i]);
    }
    let gap = nsgd.iter().zip(newton.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("max |difference| = {gap:.2e}");
    Ok(())
}

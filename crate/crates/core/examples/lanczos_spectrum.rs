//! Top Hessian eigenpairs of an MLP by Lanczos, with residuals and the
//! alignment of the gradient to the leading eigenvectors.

use sharppath::data::synth_gaussian;
use sharppath::models::ModelSpec;
use sharppath::rng::rng_from_seed;
use sharppath::spectral::{alignment, estimate_spectrum, frobenius_trunc, random_alignment_baseline};
use sharppath::{LanczosConfig, Model};

fn main() -> sharppath::Result<()> {
    let model = Model::new(ModelSpec::mlp(vec![20, 64, 64, 4]))?;
    let batch = synth_gaussian(4, 256, 20, 2.0, 3)?.as_batch();
    let params = model.init_params(&mut rng_from_seed(1));

    let est = estimate_spectrum(&model, &params, &batch, &LanczosConfig::new(5, 7).with_max_iters(200))?;
    println!("{:?} after {} iterations, {} converged", est.status, est.iterations, est.converged_count());
    for (i, p) in est.pairs.iter().enumerate() {
        println!("λ{:<2} = {:>10.5}  residual {:.1e}", i + 1, p.lambda, p.residual);
    }
    println!("truncated Frobenius norm {:.4}", frobenius_trunc(&est));

    let (_, g) = model.loss_grad(&params, &batch)?;
    let a = alignment(&g, &est, 5)?;
    let base = random_alignment_baseline(model.param_count());
    println!("alignment over top 5: {a:.4} ({:.0}x the random baseline {base:.5})", a / base);
    Ok(())
}

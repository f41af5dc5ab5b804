//! Loss, gradient and Hessian-vector product of a small MLP, with the HVP
//! checked against a central difference of gradients.

use sharppath::data::synth_gaussian;
use sharppath::models::ModelSpec;
use sharppath::param::norm;
use sharppath::rng::rng_from_seed;
use sharppath::Model;

fn main() -> sharppath::Result<()> {
    let model = Model::new(ModelSpec::mlp(vec![8, 32, 3]).with_l2(1e-4))?;
    let batch = synth_gaussian(3, 64, 8, 1.5, 1)?.as_batch();
    let params = model.init_params(&mut rng_from_seed(0));

    let (loss, grad) = model.loss_grad(&params, &batch)?;
    println!("D = {}, loss = {loss:.6}, |g| = {:.6}", model.param_count(), norm(&grad));

    let v: Vec<f64> = grad.iter().map(|g| g / norm(&grad)).collect();
    let hv = model.hvp(&params, &batch, &v)?;

    let h = 1e-5;
    let mut plus = params.clone();
    plus.axpy(h, &v);
    let mut minus = params.clone();
    minus.axpy(-h, &v);
    let (gp, gm) = (model.loss_grad(&plus, &batch)?.1, model.loss_grad(&minus, &batch)?.1);
    let fd: Vec<f64> = gp.iter().zip(gm.iter()).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    let diff: Vec<f64> = hv.iter().zip(&fd).map(|(a, b)| a - b).collect();
    println!("vᵀHv = {:.6}", sharppath::param::dot(&v, &hv));
    println!("|Hv - fd| / |Hv| = {:.2e}", norm(&diff) / norm(&hv));
    Ok(())
}

//! One step of each SGD variant on a quadratic with a dominant direction.
//! The top-only and no-top steps split the plain step between them.

use sharppath::models::ModelSpec;
use sharppath::optim::{step, OptimizerConfig, OptimizerState, Variant};
use sharppath::spectral::estimate_spectrum;
use sharppath::{Batch, LanczosConfig, Model, ParamVector, Tensor};

fn main() -> sharppath::Result<()> {
    let model = Model::new(ModelSpec::quadratic_diag(vec![10.0, 2.0, 1.0], vec![1.0, 1.0, 1.0]))?;
    let origin = Batch::unlabeled(Tensor::zeros(vec![1, 3]));
    let params = ParamVector::new(vec![1.0, 1.0, 1.0]);
    let (_, g) = model.loss_grad(&params, &origin)?;
    let est = estimate_spectrum(&model, &params, &origin, &LanczosConfig::new(2, 0))?;

    let base = OptimizerConfig::nsgd(0.1, 1, 0.1, 1);
    for variant in [Variant::Sgd, Variant::Nsgd, Variant::SgdTop, Variant::SgdConstantTop, Variant::SgdNoTop] {
        let mut state = OptimizerState::new();
        state.refresh_basis(&est, 1)?;
        let next = step(&params, &g, &base.clone().with_variant(variant), &mut state)?;
        println!("{:<16} θ' = [{:.3}, {:.3}, {:.3}]  loss {:.4}", format!("{variant:?}"), next[0], next[1], next[2], model.loss(&next, &origin)?);
    }
    Ok(())
}

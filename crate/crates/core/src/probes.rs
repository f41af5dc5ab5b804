//! Diagnostics along a single Hessian eigenvector `eᵢ`: the expected loss
//! change of a step restricted to `eᵢ`, the expected size of that step, and
//! a 1-D loss scan through the current point.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::batch::Batch;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::param::{dot, ParamVector};
use crate::rng::{stream_rng, Stream};
use crate::spectral::EigenEstimate;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// Multipliers of the learning rate along `eᵢ`.
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    /// Mini-batch gradients averaged per expectation.
    #[serde(default = "default_n_batches")]
    pub n_batches: usize,
    /// Scan offsets, in units of the expected step norm.
    #[serde(default = "default_k_range")]
    pub k_range: Vec<f64>,
    /// 1-based eigenvector index.
    #[serde(default = "default_eig_index")]
    pub eig_index: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_alphas() -> Vec<f64> {
    vec![0.25, 0.5, 1.0, 2.0, 4.0]
}

fn default_n_batches() -> usize {
    10
}

/// 21 evenly spaced points on `[-5, 5]`.
pub fn default_k_range() -> Vec<f64> {
    (0..21).map(|i| -5.0 + 0.5 * i as f64).collect()
}

fn default_eig_index() -> usize {
    1
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            alphas: default_alphas(),
            n_batches: default_n_batches(),
            k_range: default_k_range(),
            eig_index: default_eig_index(),
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() {
            return Err(Error::config("probe alphas must not be empty"));
        }
        if self.n_batches == 0 {
            return Err(Error::config("probe n_batches must be at least 1"));
        }
        if self.eig_index == 0 {
            return Err(Error::config("eig_index is 1-based"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub step: usize,
    pub eig_index: usize,
    pub base_loss: f64,
    /// `[α, E[L(θ − αη⟨g,eᵢ⟩eᵢ)] − L(θ)]` per α.
    pub deltas: Vec<[f64; 2]>,
    /// `η·E|⟨g, eᵢ⟩|`
    pub step_norm: f64,
    /// `[k, L(θ + k·step_norm·eᵢ)]`
    pub scan: Vec<[f64; 2]>,
}

impl ProbeResult {
    pub fn delta_at(&self, alpha: f64) -> Option<f64> {
        self.deltas.iter().find(|d| d[0] == alpha).map(|d| d[1])
    }
}

fn check_unit(e: &[f64]) -> Result<()> {
    let n = crate::param::norm(e);
    if (n - 1.0).abs() > 1e-8 {
        return Err(Error::config(format!("probe direction must be unit norm, has norm {n}")));
    }
    Ok(())
}

fn moved(params: &ParamVector, e: &[f64], by: f64) -> ParamVector {
    let mut p = params.clone();
    p.axpy(by, e);
    p
}

/// Projections `⟨g_b, e⟩` of the gradient of every batch.
pub fn gradient_projections(model: &Model, params: &ParamVector, e: &[f64], batches: &[Batch]) -> Result<Vec<f64>> {
    batches
        .iter()
        .map(|b| Ok(dot(&model.loss_grad(params, b)?.1, e)))
        .collect()
}

/// Mean over the mini-batch projections `cᵦ = ⟨g_b, e⟩` of
/// `L_eval(θ − αη·cᵦ·e) − L_eval(θ)`, one value per α.
pub fn loss_change_from_projections(
    model: &Model,
    params: &ParamVector,
    e: &[f64],
    projections: &[f64],
    alphas: &[f64],
    eta: f64,
    eval: &Batch,
) -> Result<Vec<f64>> {
    check_unit(e)?;
    if projections.is_empty() {
        return Err(Error::config("loss-change probe needs at least one gradient"));
    }
    let base = model.loss(params, eval)?;
    alphas
        .iter()
        .map(|&alpha| {
            let mut total = 0.0;
            for &c in projections {
                total += model.loss(&moved(params, e, -alpha * eta * c), eval)? - base;
            }
            Ok(total / projections.len() as f64)
        })
        .collect()
}

/// `E[L(θ − αη⟨g,e⟩e)] − L(θ)` for each α, the expectation taken over the
/// gradients of `batches` and the loss measured on `eval`.
pub fn loss_change_probe(
    model: &Model,
    params: &ParamVector,
    e: &[f64],
    alphas: &[f64],
    eta: f64,
    batches: &[Batch],
    eval: &Batch,
) -> Result<Vec<f64>> {
    let proj = gradient_projections(model, params, e, batches)?;
    loss_change_from_projections(model, params, e, &proj, alphas, eta, eval)
}

/// `η·mean|⟨g_b, e⟩|` over `batches`.
pub fn expected_step_norm(model: &Model, params: &ParamVector, e: &[f64], eta: f64, batches: &[Batch]) -> Result<f64> {
    check_unit(e)?;
    let proj = gradient_projections(model, params, e, batches)?;
    Ok(step_norm_from_projections(&proj, eta))
}

pub fn step_norm_from_projections(projections: &[f64], eta: f64) -> f64 {
    eta * projections.iter().map(|c| c.abs()).sum::<f64>() / projections.len().max(1) as f64
}

/// `L(θ + k·step_norm·e)` on `eval` for each `k`.
pub fn surface_scan(model: &Model, params: &ParamVector, e: &[f64], step_norm: f64, k_range: &[f64], eval: &Batch) -> Result<Vec<[f64; 2]>> {
    k_range
        .iter()
        .map(|&k| Ok([k, model.loss(&moved(params, e, k * step_norm), eval)?]))
        .collect()
}

/// `count` mini-batches of `size` examples, each drawn without replacement.
pub fn sample_batches(dataset: &Dataset, size: usize, count: usize, seed: u64, step: usize) -> Vec<Batch> {
    let mut rng = stream_rng(seed, Stream::Probe, &[step as u64]);
    let size = size.min(dataset.len());
    (0..count)
        .map(|_| {
            let mut idx = sample(&mut rng, dataset.len(), size).into_vec();
            idx.sort_unstable();
            dataset.gather(&idx)
        })
        .collect()
}

/// All three diagnostics for eigenvector `cfg.eig_index` of `est`.
/// Gradients come from `cfg.n_batches` mini-batches of `batch_size`
/// drawn from `train`; losses are measured on `eval`.
#[allow(clippy::too_many_arguments)]
pub fn run_probe(
    model: &Model,
    params: &ParamVector,
    est: &EigenEstimate,
    cfg: &ProbeConfig,
    eta: f64,
    batch_size: usize,
    train: &Dataset,
    eval: &Batch,
    step: usize,
) -> Result<ProbeResult> {
    cfg.validate()?;
    let available = est.converged_count();
    if cfg.eig_index > available {
        return Err(Error::config(format!(
            "eig_index {} requested but only {available} converged eigenpairs are available",
            cfg.eig_index
        )));
    }
    let e = &est.pairs[cfg.eig_index - 1].vector;
    let batches = sample_batches(train, batch_size, cfg.n_batches, cfg.seed, step);
    let proj = gradient_projections(model, params, e, &batches)?;
    let deltas = loss_change_from_projections(model, params, e, &proj, &cfg.alphas, eta, eval)?;
    let step_norm = step_norm_from_projections(&proj, eta);
    let scan = surface_scan(model, params, e, step_norm, &cfg.k_range, eval)?;
    Ok(ProbeResult {
        step,
        eig_index: cfg.eig_index,
        base_loss: model.loss(params, eval)?,
        deltas: cfg.alphas.iter().zip(deltas).map(|(&a, d)| [a, d]).collect(),
        step_norm,
        scan,
    })
}

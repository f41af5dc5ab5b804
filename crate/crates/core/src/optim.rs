//! Update rules: SGD with heavy-ball momentum, Nudged-SGD, the three
//! single-eigenvector projection variants, a damped Newton step for the
//! explicit quadratic, and learning-rate schedules.
//!
//! Every rule first forms an effective gradient `ĝ` from the raw mini-batch
//! gradient and the cached eigenbasis, then applies the same momentum
//! recurrence to it. With `γ = 1` Nudged-SGD therefore coincides exactly with
//! SGD, momentum included.

use serde::{Deserialize, Serialize};

use crate::autodiff::QuadMatrix;
use crate::error::{Error, Result};
use crate::param::{axpy, dot, ParamVector};
use crate::spectral::EigenEstimate;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Sgd,
    /// Learning rate `γη` inside the top-K eigenspace, `η` elsewhere.
    Nsgd,
    /// Step only along the current top eigenvector.
    SgdTop,
    /// Step only along the top eigenvector measured at the first estimate.
    SgdConstantTop,
    /// Step with the current top-eigenvector component removed.
    SgdNoTop,
}

impl Variant {
    pub fn needs_basis(self) -> bool {
        self != Variant::Sgd
    }

    /// Number of eigenvectors the rule reads.
    pub fn basis_size(self, k_top: usize) -> usize {
        match self {
            Variant::Sgd => 0,
            Variant::Nsgd => k_top,
            _ => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub eta: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub k_top: usize,
    #[serde(default = "default_variant")]
    pub variant: Variant,
}

fn default_gamma() -> f64 {
    1.0
}

fn default_variant() -> Variant {
    Variant::Sgd
}

impl OptimizerConfig {
    pub fn sgd(eta: f64, batch_size: usize) -> Self {
        Self {
            eta,
            batch_size,
            momentum: 0.0,
            gamma: 1.0,
            k_top: 0,
            variant: Variant::Sgd,
        }
    }

    pub fn nsgd(eta: f64, batch_size: usize, gamma: f64, k_top: usize) -> Self {
        Self {
            gamma,
            k_top,
            variant: Variant::Nsgd,
            ..Self::sgd(eta, batch_size)
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        if variant != Variant::Sgd && variant != Variant::Nsgd {
            self.k_top = 1;
        }
        self
    }

    pub fn with_momentum(mut self, momentum: f64) -> Self {
        self.momentum = momentum;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.eta)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::config(format!("gamma must be positive, got {}", self.gamma)));
        }
        match self.variant {
            Variant::Sgd => {}
            Variant::Nsgd if self.k_top == 0 => {
                return Err(Error::config("nsgd needs k_top ≥ 1"));
            }
            Variant::Nsgd => {}
            v if self.k_top != 1 => {
                return Err(Error::config(format!("{v:?} uses exactly one eigenvector; set k_top = 1")));
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    /// Heavy-ball velocity; stays empty while momentum is zero.
    pub velocity: Option<ParamVector>,
    /// Orthonormal eigenvectors from the most recent estimate.
    pub basis: Vec<ParamVector>,
    /// Step at which `basis` was estimated.
    pub basis_step: Option<usize>,
    /// Top eigenvector of the first estimate, for `SgdConstantTop`.
    pub frozen_e1: Option<ParamVector>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replaces the cached basis with the first `k` converged pairs of
    /// `est`. Fewer converged pairs than `k` leaves a smaller basis and logs
    /// a warning; none at all is an error.
    pub fn refresh_basis(&mut self, est: &EigenEstimate, k: usize) -> Result<()> {
        let usable = est.converged_count().min(k);
        if usable < k {
            log::warn!(
                "only {usable} of {k} requested eigenpairs converged at step {}; using the converged subset",
                est.step
            );
        }
        if usable == 0 && k > 0 {
            return Err(Error::State(format!("no converged eigenpairs at step {}", est.step)));
        }
        self.basis = est.pairs[..usable].iter().map(|p| p.vector.clone()).collect();
        self.basis_step = Some(est.step);
        if self.frozen_e1.is_none() {
            self.frozen_e1 = self.basis.first().cloned();
        }
        Ok(())
    }

    fn require_basis(&self, k: usize) -> Result<&[ParamVector]> {
        if self.basis.is_empty() {
            return Err(Error::State("update rule needs an eigenbasis but none has been computed".into()));
        }
        Ok(&self.basis[..k.min(self.basis.len())])
    }
}

/// `Σ ⟨g, eᵢ⟩ eᵢ` over `basis`.
pub fn project(g: &[f64], basis: &[ParamVector]) -> Vec<f64> {
    let mut out = vec![0.0; g.len()];
    for e in basis {
        axpy(dot(g, e), e, &mut out);
    }
    out
}

fn check_dims(params: &[f64], g: &[f64]) -> Result<()> {
    if params.len() != g.len() {
        return Err(Error::config(format!(
            "gradient has {} entries, parameters {}",
            g.len(),
            params.len()
        )));
    }
    Ok(())
}

/// Applies `θ ← θ − η·ĝ`, or the heavy-ball recurrence
/// `v ← μ·v − η·ĝ; θ ← θ + v` when momentum is on.
fn apply(params: &ParamVector, effective: &[f64], cfg: &OptimizerConfig, state: &mut OptimizerState) -> Result<ParamVector> {
    let mut next = params.clone();
    if cfg.momentum > 0.0 {
        let v = state.velocity.get_or_insert_with(|| ParamVector::zeros(params.len()));
        if v.len() != params.len() {
            return Err(Error::State("velocity dimension does not match the parameters".into()));
        }
        let mut proposed = v.clone();
        proposed.scale(cfg.momentum);
        proposed.axpy(-cfg.eta, effective);
        if !proposed.is_finite() {
            return Err(Error::numerical(None, "non-finite momentum update"));
        }
        next.axpy(1.0, &proposed);
        *v = proposed;
    } else {
        next.axpy(-cfg.eta, effective);
    }
    if !next.is_finite() {
        return Err(Error::numerical(None, "non-finite parameters after update"));
    }
    Ok(next)
}

pub fn sgd_step(params: &ParamVector, g: &[f64], cfg: &OptimizerConfig, state: &mut OptimizerState) -> Result<ParamVector> {
    check_dims(params, g)?;
    apply(params, g, cfg, state)
}

/// `ĝ = g − (1 − γ)·g_top` with `g_top` the projection of `g` on the
/// top-K basis, i.e. `θ − η(g − g_top) − γη·g_top` without momentum.
pub fn nsgd_step(params: &ParamVector, g: &[f64], cfg: &OptimizerConfig, state: &mut OptimizerState) -> Result<ParamVector> {
    check_dims(params, g)?;
    let basis = state.require_basis(cfg.k_top)?;
    let top = project(g, basis);
    let mut effective = g.to_vec();
    axpy(-(1.0 - cfg.gamma), &top, &mut effective);
    apply(params, &effective, cfg, state)
}

/// The `SgdTop`, `SgdConstantTop` and `SgdNoTop` rules.
pub fn variant_step(params: &ParamVector, g: &[f64], cfg: &OptimizerConfig, state: &mut OptimizerState) -> Result<ParamVector> {
    check_dims(params, g)?;
    let effective = match cfg.variant {
        Variant::SgdTop => project(g, state.require_basis(1)?),
        Variant::SgdConstantTop => {
            let e = state
                .frozen_e1
                .as_ref()
                .ok_or_else(|| Error::State("sgd_constant_top needs the initial top eigenvector".into()))?;
            project(g, std::slice::from_ref(e))
        }
        Variant::SgdNoTop => {
            let top = project(g, state.require_basis(1)?);
            let mut rest = g.to_vec();
            axpy(-1.0, &top, &mut rest);
            rest
        }
        v => return Err(Error::config(format!("{v:?} is not a projection variant"))),
    };
    apply(params, &effective, cfg, state)
}

/// Dispatches on `cfg.variant`.
pub fn step(params: &ParamVector, g: &[f64], cfg: &OptimizerConfig, state: &mut OptimizerState) -> Result<ParamVector> {
    match cfg.variant {
        Variant::Sgd => sgd_step(params, g, cfg, state),
        Variant::Nsgd => nsgd_step(params, g, cfg, state),
        _ => variant_step(params, g, cfg, state),
    }
}

/// `θ − η(H + λI)⁻¹g` for an explicit symmetric `H`.
pub fn newton_step(params: &ParamVector, g: &[f64], h: &QuadMatrix, eta: f64, lambda_damp: f64) -> Result<ParamVector> {
    check_dims(params, g)?;
    let d = h.dim();
    if d != g.len() {
        return Err(Error::config(format!("Hessian is {d}×{d}, gradient has {} entries", g.len())));
    }
    let direction = match h {
        QuadMatrix::Diag(diag) => {
            let mut x = Vec::with_capacity(d);
            for (i, (&hi, &gi)) in diag.iter().zip(g).enumerate() {
                let pivot = hi + lambda_damp;
                if pivot == 0.0 || !pivot.is_finite() {
                    return Err(Error::Singular(format!("H + λI has zero diagonal entry {i}")));
                }
                x.push(gi / pivot);
            }
            x
        }
        QuadMatrix::Dense { n, values } => {
            let mut a = values.clone();
            for i in 0..*n {
                a[i * n + i] += lambda_damp;
            }
            solve_dense(*n, a, g.to_vec())?
        }
    };
    let mut next = params.clone();
    next.axpy(-eta, &direction);
    if !next.is_finite() {
        return Err(Error::numerical(None, "non-finite Newton update"));
    }
    Ok(next)
}

/// Gaussian elimination with partial pivoting on the row-major `n×n` `a`.
fn solve_dense(n: usize, mut a: Vec<f64>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tiny = scale * n as f64 * f64::EPSILON;
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .expect("non-empty range");
        let pivot = a[pivot_row * n + col];
        if pivot.abs() <= tiny || scale == 0.0 {
            return Err(Error::Singular(format!("H + λI is singular at column {col}")));
        }
        if pivot_row != col {
            for k in 0..n {
                a.swap(col * n + k, pivot_row * n + k);
            }
            b.swap(col, pivot_row);
        }
        for r in col + 1..n {
            let f = a[r * n + col] / pivot;
            if f != 0.0 {
                for k in col..n {
                    a[r * n + k] -= f * a[col * n + k];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r * n + k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r * n + r];
    }
    Ok(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    /// Divide by `factor` after `patience` epochs without a new best
    /// validation loss.
    Plateau,
    /// `stage_etas[0]` for the first `stage_length` epochs, then
    /// `stage_etas[1]`.
    Staged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_factor")]
    pub factor: f64,
    #[serde(default)]
    pub stage_length: usize,
    #[serde(default)]
    pub stage_etas: Vec<f64>,
}

fn default_patience() -> usize {
    100
}

fn default_factor() -> f64 {
    10.0
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self::constant()
    }
}

impl LrSchedule {
    pub fn constant() -> Self {
        Self {
            kind: ScheduleKind::Constant,
            patience: default_patience(),
            factor: default_factor(),
            stage_length: 0,
            stage_etas: Vec::new(),
        }
    }

    pub fn plateau(patience: usize, factor: f64) -> Self {
        Self {
            kind: ScheduleKind::Plateau,
            patience,
            factor,
            ..Self::constant()
        }
    }

    pub fn staged(stage_length: usize, first: f64, second: f64) -> Self {
        Self {
            kind: ScheduleKind::Staged,
            stage_length,
            stage_etas: vec![first, second],
            ..Self::constant()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 1.0) {
            return Err(Error::config(format!("schedule factor must exceed 1, got {}", self.factor)));
        }
        if self.patience == 0 {
            return Err(Error::config("schedule patience must be at least 1"));
        }
        if self.kind == ScheduleKind::Staged && (self.stage_etas.len() != 2 || self.stage_etas.iter().any(|e| !(*e > 0.0))) {
            return Err(Error::config("staged schedule needs two positive stage_etas"));
        }
        Ok(())
    }
}

/// Learning rate for `epoch` given the validation losses recorded at the
/// end of every earlier epoch (`val_losses[i]` for epoch `i`).
///
/// The plateau rule is replayed from the whole history, so the result is a
/// pure function of its inputs. Improvement means a strictly lower
/// best-so-far loss.
pub fn schedule_lr(sched: &LrSchedule, base_eta: f64, val_losses: &[f64], epoch: usize) -> f64 {
    match sched.kind {
        ScheduleKind::Constant => base_eta,
        ScheduleKind::Staged => {
            if epoch < sched.stage_length {
                sched.stage_etas[0]
            } else {
                sched.stage_etas[1]
            }
        }
        ScheduleKind::Plateau => {
            let mut eta = base_eta;
            let mut best = f64::INFINITY;
            let mut stale = 0;
            for &loss in val_losses.iter().take(epoch) {
                if loss < best {
                    best = loss;
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= sched.patience {
                        eta /= sched.factor;
                        stale = 0;
                    }
                }
            }
            eta
        }
    }
}

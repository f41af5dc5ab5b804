//! Top-K Hessian eigenpairs by Lanczos iteration, plus the curvature
//! statistics derived from them.
//!
//! The Lanczos basis is fully reorthogonalized (two Gram-Schmidt passes) at
//! every step. When the Krylov space becomes invariant (`β ≈ 0`) the
//! iteration restarts from a fresh random vector orthogonal to the basis, so
//! repeated eigenvalues are recovered with their full multiplicity.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::batch::Batch;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::param::{axpy, dot, norm, ParamVector};
use crate::rng::rng_from_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanczosConfig {
    /// Number of eigenpairs requested.
    pub k: usize,
    pub max_iters: usize,
    /// Residual tolerance relative to `max(1, |λ|)`.
    pub tol: f64,
    /// Seed of the random start vector.
    pub seed: u64,
}

impl LanczosConfig {
    /// `max_iters = max(4k, k + 20)`, `tol = 1e-6`.
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_iters: (4 * k).max(k + 20),
            tol: 1e-6,
            seed,
        }
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenPair {
    pub lambda: f64,
    /// Unit norm, sign fixed so the largest-magnitude entry is positive.
    pub vector: ParamVector,
    /// `‖H·v − λ·v‖`, measured when the estimate was built.
    pub residual: f64,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LanczosStatus {
    /// All requested pairs met the residual tolerance.
    Converged,
    /// `max_iters` ran out first; see the per-pair flags.
    MaxIterations,
    /// The Krylov space closed and no new direction could be found.
    Breakdown,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenEstimate {
    /// Ordered by decreasing `|λ|`.
    pub pairs: Vec<EigenPair>,
    pub status: LanczosStatus,
    pub iterations: usize,
    /// Training step at which the estimate was taken.
    pub step: usize,
    /// Seed identifying the data subsample the Hessian was measured on.
    pub subsample_seed: u64,
}

/// Serialized form of an [`EigenEstimate`], without the vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenSummary {
    pub step: usize,
    pub lambdas: Vec<f64>,
    pub residuals: Vec<f64>,
    pub subsample_seed: u64,
}

impl EigenEstimate {
    pub fn lambdas(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.lambda).collect()
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.residual).collect()
    }

    pub fn converged_count(&self) -> usize {
        self.pairs.iter().take_while(|p| p.converged).count()
    }

    pub fn vectors(&self) -> Vec<&ParamVector> {
        self.pairs.iter().map(|p| &p.vector).collect()
    }

    pub fn summary(&self) -> EigenSummary {
        EigenSummary {
            step: self.step,
            lambdas: self.lambdas(),
            residuals: self.residuals(),
            subsample_seed: self.subsample_seed,
        }
    }

    pub fn with_step(mut self, step: usize) -> Self {
        self.step = step;
        self
    }

    pub fn with_subsample_seed(mut self, seed: u64) -> Self {
        self.subsample_seed = seed;
        self
    }
}

/// One row of the curvature trace logged during training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureRecord {
    /// Optimizer steps taken so far.
    pub t: usize,
    /// Epochs completed so far.
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: Option<f64>,
    pub val_acc: Option<f64>,
    /// Top eigenvalues by decreasing `|λ|`.
    pub lambdas: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Number of leading pairs that met the residual tolerance.
    pub converged: usize,
    /// `sqrt(Σ λᵢ²)` over `lambdas`.
    pub frob_trunc: f64,
    /// Mean `|cos|` between the mini-batch gradient and the top eigenvectors.
    pub alignment: Option<f64>,
    /// `‖θ(t) − θ(0)‖₂`
    pub dist_from_init: f64,
    pub lr: f64,
}

/// Eigen-decomposition of the symmetric tridiagonal matrix with diagonal
/// `diag` and off-diagonal `off` (`off[i]` couples `i` and `i+1`).
///
/// Returns eigenvalues and the row-major `n×n` matrix whose column `j` is
/// the eigenvector of eigenvalue `j`. Implicit QL with Wilkinson shifts.
pub fn tridiagonal_eigen(diag: &[f64], off: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = diag.len();
    if n == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    if off.len() + 1 != n {
        return Err(Error::config("off-diagonal must have n-1 entries"));
    }
    let mut d = diag.to_vec();
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(off);
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m == n {
            m = n - 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 60 {
                    return Err(Error::numerical(None, "tridiagonal QL iteration did not converge"));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        let hk = v[k * n + i + 1];
                        v[k * n + i + 1] = s * v[k * n + i] + c * hk;
                        v[k * n + i] = c * v[k * n + i] - s * hk;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok((d, v))
}

/// Indices of `values` sorted by decreasing magnitude (ties: larger value first).
fn order_by_magnitude(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b]
            .abs()
            .total_cmp(&values[a].abs())
            .then(values[b].total_cmp(&values[a]))
    });
    idx
}

fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let c = dot(w, q);
            axpy(-c, q, w);
        }
    }
}

fn random_unit(d: usize, rng: &mut crate::rng::SeededRng, basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    for _ in 0..4 {
        let mut r: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let before = norm(&r);
        orthogonalize(&mut r, basis);
        let after = norm(&r);
        if after > 1e-8 * before {
            r.iter_mut().for_each(|x| *x /= after);
            return Some(r);
        }
    }
    None
}

/// Flips `v` so its largest-magnitude entry is positive.
pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0.0f64;
    let mut sign = 1.0;
    for &x in v.iter() {
        if x.abs() > best {
            best = x.abs();
            sign = x.signum();
        }
    }
    if sign < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// The `k` Ritz pairs of largest `|λ|` of the symmetric operator `apply_h`
/// on `R^d`. Each pair's residual is measured with one extra application of
/// the operator; pairs above tolerance are flagged unconverged.
pub fn lanczos_topk<F>(mut apply_h: F, d: usize, cfg: &LanczosConfig) -> Result<EigenEstimate>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if cfg.k == 0 || cfg.k > d {
        return Err(Error::config(format!("requested {} eigenpairs of a {d}-dimensional operator", cfg.k)));
    }
    if !(cfg.tol > 0.0) {
        return Err(Error::config("Lanczos tolerance must be positive"));
    }
    if cfg.max_iters < cfg.k {
        return Err(Error::config("Lanczos max_iters must be at least k"));
    }
    let max_iters = cfg.max_iters.min(d);
    let k = cfg.k;
    let mut rng = rng_from_seed(cfg.seed);

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(max_iters);
    let mut alphas: Vec<f64> = Vec::with_capacity(max_iters);
    let mut betas: Vec<f64> = Vec::with_capacity(max_iters);
    let mut scale: f64 = 0.0;
    let mut status = LanczosStatus::MaxIterations;
    let mut q = random_unit(d, &mut rng, &[]).ok_or_else(|| Error::numerical(None, "could not draw a start vector"))?;

    loop {
        let j = basis.len();
        let mut w = apply_h(&q)?;
        if w.len() != d {
            return Err(Error::config("operator returned a vector of the wrong dimension"));
        }
        let alpha = dot(&w, &q);
        axpy(-alpha, &q, &mut w);
        if j > 0 {
            axpy(-betas[j - 1], &basis[j - 1], &mut w);
        }
        basis.push(q);
        orthogonalize(&mut w, &basis);
        let beta = norm(&w);
        alphas.push(alpha);
        scale = scale.max(alpha.abs() + beta);

        let m = basis.len();
        // An invariant subspace says nothing about eigenvalues outside it,
        // so convergence is only judged on regular steps or once the basis
        // spans the whole space.
        let invariant = beta <= 1e-10 * scale.max(f64::MIN_POSITIVE);
        let check = m >= k && (m <= 100 || m.is_multiple_of(5) || m == max_iters);
        if check && (!invariant || m == d) {
            let (theta, s) = tridiagonal_eigen(&alphas, &betas)?;
            let top = order_by_magnitude(&theta);
            let all = top[..k].iter().all(|&i| {
                let estimate = beta * s[(m - 1) * m + i].abs();
                estimate <= cfg.tol * theta[i].abs().max(1.0)
            });
            if all {
                status = LanczosStatus::Converged;
                break;
            }
        }
        if m >= max_iters {
            break;
        }
        if invariant {
            match random_unit(d, &mut rng, &basis) {
                Some(r) => {
                    q = r;
                    betas.push(0.0);
                }
                None => {
                    status = LanczosStatus::Breakdown;
                    break;
                }
            }
        } else {
            w.iter_mut().for_each(|x| *x /= beta);
            q = w;
            betas.push(beta);
        }
    }

    let m = basis.len();
    let (theta, s) = tridiagonal_eigen(&alphas, &betas[..m - 1])?;
    let top = order_by_magnitude(&theta);
    let mut pairs = Vec::with_capacity(k);
    for &i in top.iter().take(k.min(m)) {
        let mut y = vec![0.0; d];
        for (r, qr) in basis.iter().enumerate() {
            axpy(s[r * m + i], qr, &mut y);
        }
        let ny = norm(&y);
        y.iter_mut().for_each(|x| *x /= ny);
        fix_sign(&mut y);
        let lambda = theta[i];
        let mut r = apply_h(&y)?;
        axpy(-lambda, &y, &mut r);
        let residual = norm(&r);
        pairs.push(EigenPair {
            lambda,
            vector: ParamVector::new(y),
            residual,
            converged: residual <= cfg.tol * lambda.abs().max(1.0),
        });
    }
    if status == LanczosStatus::Converged && pairs.iter().any(|p| !p.converged) {
        status = LanczosStatus::MaxIterations;
    }
    if pairs.len() < k && status != LanczosStatus::Breakdown {
        status = LanczosStatus::Breakdown;
    }
    Ok(EigenEstimate {
        pairs,
        status,
        iterations: m,
        step: 0,
        subsample_seed: cfg.seed,
    })
}

/// Top-K eigenpairs of the Hessian of `model`'s loss (including any L2
/// term) on a fixed subsample.
pub fn estimate_spectrum(model: &Model, params: &ParamVector, subsample: &Batch, cfg: &LanczosConfig) -> Result<EigenEstimate> {
    lanczos_topk(
        |v| Ok(model.hvp(params, subsample, v)?.into_inner()),
        model.param_count(),
        cfg,
    )
}

/// Number of examples in a `fraction` subsample of `n`, at least one.
pub fn subsample_size(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n.max(1))
}

/// `sqrt(Σ λᵢ²)` over the stored eigenvalues: a lower bound on `‖H‖_F`.
pub fn frobenius_trunc(est: &EigenEstimate) -> f64 {
    frobenius_from_lambdas(&est.lambdas())
}

pub fn frobenius_from_lambdas(lambdas: &[f64]) -> f64 {
    lambdas.iter().map(|l| l * l).sum::<f64>().sqrt()
}

/// Mean `|cos(g, eᵢ)|` over the top `m` eigenvectors.
pub fn alignment(g: &[f64], est: &EigenEstimate, m: usize) -> Result<f64> {
    if m == 0 || m > est.pairs.len() {
        return Err(Error::config(format!(
            "alignment over {m} eigenvectors requested, estimate holds {}",
            est.pairs.len()
        )));
    }
    let gn = norm(g);
    if gn == 0.0 || !gn.is_finite() {
        return Err(Error::AlignmentUndefined("gradient has zero or non-finite norm".into()));
    }
    let total: f64 = est.pairs[..m]
        .iter()
        .map(|p| (dot(g, &p.vector) / (gn * p.vector.norm())).abs())
        .sum();
    Ok(total / m as f64)
}

/// `sqrt(2/(π·d))`, the large-`d` value of `E|cos|` between a uniformly
/// random direction and a fixed one.
pub fn random_alignment_baseline(d: usize) -> f64 {
    (2.0 / (std::f64::consts::PI * d as f64)).sqrt()
}

//! Reverse-mode differentiation over a closed set of tensor ops, with
//! Hessian-vector products computed forward-over-reverse.
//!
//! A [`Graph`] is a topologically ordered list of nodes ending in a scalar
//! loss. Evaluation runs up to three sweeps per shard of the batch:
//!
//! 1. forward: node values, plus tangents `ẋ = J·v` when an HVP is requested;
//! 2. reverse: adjoints `x̄ = Jᵀ·ȳ`;
//! 3. (fused with 2) tangent adjoints, the directional derivative of the
//!    reverse sweep along `v`. Its value at the parameter leaves is `H·v`.
//!
//! ReLU and max-pool are piecewise linear; their second derivative is taken
//! as zero, so their tangent rules reuse the forward activation pattern.
//!
//! Batches are split into fixed-size shards evaluated in order and combined
//! with weights `n_shard / n`. The shard layout depends only on the batch
//! size, so results are bit-reproducible.

use crate::batch::Batch;
use crate::error::{Error, Result};
use crate::param::ParamVector;
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

pub type NodeId = usize;

/// Explicit symmetric matrix of the quadratic test loss.
#[derive(Clone, Debug, PartialEq)]
pub enum QuadMatrix {
    Diag(Vec<f64>),
    /// Row-major `n×n`, assumed symmetric.
    Dense { n: usize, values: Vec<f64> },
}

impl QuadMatrix {
    pub fn dim(&self) -> usize {
        match self {
            QuadMatrix::Diag(d) => d.len(),
            QuadMatrix::Dense { n, .. } => *n,
        }
    }

    /// `out = A·x`
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        match self {
            QuadMatrix::Diag(d) => {
                for ((o, a), v) in out.iter_mut().zip(d).zip(x) {
                    *o = a * v;
                }
            }
            QuadMatrix::Dense { n, values } => {
                for (i, o) in out.iter_mut().enumerate().take(*n) {
                    *o = values[i * n..(i + 1) * n]
                        .iter()
                        .zip(x)
                        .map(|(a, v)| a * v)
                        .sum();
                }
            }
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            QuadMatrix::Diag(d) => {
                if i == j {
                    d[i]
                } else {
                    0.0
                }
            }
            QuadMatrix::Dense { n, values } => values[i * n + j],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    /// The batch inputs.
    Input,
    /// A slice of the parameter vector.
    Param { offset: usize, shape: Vec<usize> },
    /// `[x: N×in, w: out×in] → N×out`, computing `x·wᵀ`.
    Dense,
    /// `[x: N×H×W×C, w: O×3×3×C] → N×H×W×O`, stride 1, zero 'same' padding.
    Conv3x3,
    /// `[x: …×C, b: C]`
    BiasAdd,
    Relu,
    /// 2×2 window, stride 2, trailing odd row/column dropped.
    MaxPool2,
    /// `N×… → N×(prod …)`
    Flatten,
    /// `[logits: N×C]` with labels from the batch → mean cross-entropy.
    SoftmaxCrossEntropy,
    /// `½·coef·Σ‖w‖²` over all inputs.
    L2Penalty { coef: f64 },
    Add,
    /// `[θ: D, targets: N×D] → mean_n ½(θ−yₙ)ᵀA(θ−yₙ) + bᵀθ`
    Quadratic { matrix: QuadMatrix, linear: Vec<f64> },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param { .. } => "param",
            Op::Dense => "dense",
            Op::Conv3x3 => "conv3x3",
            Op::BiasAdd => "bias_add",
            Op::Relu => "relu",
            Op::MaxPool2 => "maxpool2",
            Op::Flatten => "flatten",
            Op::SoftmaxCrossEntropy => "softmax_cross_entropy",
            Op::L2Penalty { .. } => "l2_penalty",
            Op::Add => "add",
            Op::Quadratic { .. } => "quadratic",
        }
    }

    fn is_scalar_valued(&self) -> bool {
        matches!(
            self,
            Op::SoftmaxCrossEntropy | Op::L2Penalty { .. } | Op::Add | Op::Quadratic { .. }
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub op: Op,
    pub inputs: Vec<NodeId>,
}

#[derive(Clone, Debug, Default)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    param_count: usize,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>) -> NodeId {
        self.nodes.push(Node { op, inputs });
        self.nodes.len() - 1
    }

    pub fn input(&mut self) -> NodeId {
        self.push(Op::Input, vec![])
    }

    /// Allocates the next `prod(shape)` entries of the parameter vector.
    pub fn param(&mut self, shape: Vec<usize>) -> NodeId {
        let offset = self.param_count;
        self.param_count += shape.iter().product::<usize>();
        self.push(Op::Param { offset, shape }, vec![])
    }

    pub fn dense(&mut self, x: NodeId, w: NodeId) -> NodeId {
        self.push(Op::Dense, vec![x, w])
    }

    pub fn conv3x3(&mut self, x: NodeId, w: NodeId) -> NodeId {
        self.push(Op::Conv3x3, vec![x, w])
    }

    pub fn bias_add(&mut self, x: NodeId, b: NodeId) -> NodeId {
        self.push(Op::BiasAdd, vec![x, b])
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Relu, vec![x])
    }

    pub fn maxpool2(&mut self, x: NodeId) -> NodeId {
        self.push(Op::MaxPool2, vec![x])
    }

    pub fn flatten(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Flatten, vec![x])
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId) -> NodeId {
        self.push(Op::SoftmaxCrossEntropy, vec![logits])
    }

    pub fn l2_penalty(&mut self, weights: &[NodeId], coef: f64) -> NodeId {
        self.push(Op::L2Penalty { coef }, weights.to_vec())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add, vec![a, b])
    }

    pub fn quadratic(&mut self, theta: NodeId, targets: NodeId, matrix: QuadMatrix, linear: Vec<f64>) -> NodeId {
        self.push(Op::Quadratic { matrix, linear }, vec![theta, targets])
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    /// Finishes the graph with `output` as the loss. `logits`, when given,
    /// is the node [`Graph::logits`] evaluates for predictions.
    pub fn finish(self, output: NodeId, logits: Option<NodeId>) -> Result<Graph> {
        let out = self
            .nodes
            .get(output)
            .ok_or_else(|| Error::config("graph output node does not exist"))?;
        if !out.op.is_scalar_valued() {
            return Err(Error::config(format!(
                "graph output must be scalar, got op {}",
                out.op.name()
            )));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.inputs.iter().any(|&j| j >= i) {
                return Err(Error::config(format!("node {i} consumes a later node")));
            }
        }
        let mut requires_grad = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            let r = matches!(n.op, Op::Param { .. }) || n.inputs.iter().any(|&j| requires_grad[j]);
            requires_grad.push(r);
        }
        Ok(Graph {
            nodes: self.nodes,
            output,
            logits,
            param_count: self.param_count,
            shard_size: DEFAULT_SHARD_SIZE,
            requires_grad,
        })
    }
}

pub const DEFAULT_SHARD_SIZE: usize = 32;

#[derive(Clone, Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    output: NodeId,
    logits: Option<NodeId>,
    param_count: usize,
    shard_size: usize,
    /// Whether a node depends on any parameter; adjoints of the others are
    /// never needed.
    requires_grad: Vec<bool>,
}

/// Per-node values kept from the forward sweep for the reverse sweep.
enum Cache {
    None,
    Cols { cols: Vec<f64>, tcols: Option<Vec<f64>> },
    Pool { argmax: Vec<usize> },
    Probs(Vec<f64>),
    Residual(Vec<f64>),
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Loss,
    Grad,
    Hvp,
}

struct ShardOut {
    loss: f64,
    grad: Option<Vec<f64>>,
    hvp: Option<Vec<f64>>,
}

impl Graph {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn shard_size(&self) -> usize {
        self.shard_size
    }

    pub fn with_shard_size(mut self, shard_size: usize) -> Self {
        self.shard_size = shard_size.max(1);
        self
    }

    /// Mean loss over `batch`.
    pub fn forward_eval(&self, params: &ParamVector, batch: &Batch) -> Result<f64> {
        Ok(self.run(params, None, batch, Mode::Loss)?.loss)
    }

    /// Gradient of the mean loss.
    pub fn grad(&self, params: &ParamVector, batch: &Batch) -> Result<ParamVector> {
        Ok(self.loss_grad(params, batch)?.1)
    }

    pub fn loss_grad(&self, params: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
        let out = self.run(params, None, batch, Mode::Grad)?;
        Ok((out.loss, ParamVector::new(out.grad.unwrap_or_default())))
    }

    /// `H·v` for the Hessian `H` of the mean loss at `params`.
    pub fn hvp(&self, params: &ParamVector, batch: &Batch, v: &[f64]) -> Result<ParamVector> {
        Ok(self.loss_grad_hvp(params, batch, v)?.2)
    }

    pub fn loss_grad_hvp(
        &self,
        params: &ParamVector,
        batch: &Batch,
        v: &[f64],
    ) -> Result<(f64, ParamVector, ParamVector)> {
        if v.len() != self.param_count {
            return Err(Error::config(format!(
                "hvp direction has dimension {}, graph has {} parameters",
                v.len(),
                self.param_count
            )));
        }
        let out = self.run(params, Some(v), batch, Mode::Hvp)?;
        Ok((
            out.loss,
            ParamVector::new(out.grad.unwrap_or_default()),
            ParamVector::new(out.hvp.unwrap_or_default()),
        ))
    }

    /// Values of the logits node for `inputs`, row per example.
    pub fn logits(&self, params: &ParamVector, inputs: &Tensor) -> Result<Tensor> {
        let target = self
            .logits
            .ok_or_else(|| Error::config("graph has no logits node"))?;
        self.check_params(params)?;
        let n = inputs.rows();
        let mut rows = Vec::new();
        let mut width = 0;
        let mut start = 0;
        while start < n {
            let end = (start + self.shard_size).min(n);
            let shard = Batch::unlabeled(inputs.slice_rows(start, end));
            let mut vals: Vec<Option<Tensor>> = Vec::with_capacity(target + 1);
            let mut tans = Vec::new();
            let mut caches = Vec::new();
            for i in 0..=target {
                let (v, _, c) = self.forward_node(i, params, None, &shard, &vals, &tans, Mode::Loss)?;
                vals.push(Some(v));
                tans.push(None);
                caches.push(c);
            }
            let t = vals.pop().flatten().expect("logits value");
            width = t.row_len();
            rows.extend_from_slice(t.data());
            start = end;
        }
        Tensor::new(vec![n, width], rows)
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.dim() != self.param_count {
            return Err(Error::config(format!(
                "parameter vector has dimension {}, graph expects {}",
                params.dim(),
                self.param_count
            )));
        }
        Ok(())
    }

    fn run(&self, params: &ParamVector, v: Option<&[f64]>, batch: &Batch, mode: Mode) -> Result<ShardOut> {
        self.check_params(params)?;
        let n = batch.len();
        if n == 0 {
            return Err(Error::config("cannot evaluate an empty batch"));
        }
        let mut total = ShardOut {
            loss: 0.0,
            grad: (mode != Mode::Loss).then(|| vec![0.0; self.param_count]),
            hvp: (mode == Mode::Hvp).then(|| vec![0.0; self.param_count]),
        };
        let mut start = 0;
        while start < n {
            let end = (start + self.shard_size).min(n);
            let weight = (end - start) as f64 / n as f64;
            let shard = if start == 0 && end == n {
                None
            } else {
                Some(batch.slice(start, end))
            };
            let out = self.run_shard(params, v, shard.as_ref().unwrap_or(batch), mode)?;
            total.loss += weight * out.loss;
            if let (Some(acc), Some(g)) = (total.grad.as_mut(), out.grad.as_ref()) {
                crate::param::axpy(weight, g, acc);
            }
            if let (Some(acc), Some(h)) = (total.hvp.as_mut(), out.hvp.as_ref()) {
                crate::param::axpy(weight, h, acc);
            }
            start = end;
        }
        if !total.loss.is_finite() {
            return Err(Error::numerical(Some(self.output), "non-finite loss"));
        }
        if let Some(g) = &total.grad {
            if let Some(i) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::numerical(self.param_node_of(i), "non-finite gradient"));
            }
        }
        if let Some(h) = &total.hvp {
            if let Some(i) = h.iter().position(|x| !x.is_finite()) {
                return Err(Error::numerical(self.param_node_of(i), "non-finite Hessian-vector product"));
            }
        }
        Ok(total)
    }

    fn param_node_of(&self, index: usize) -> Option<NodeId> {
        self.nodes.iter().position(|n| match &n.op {
            Op::Param { offset, shape } => {
                index >= *offset && index < offset + shape.iter().product::<usize>()
            }
            _ => false,
        })
    }

    fn run_shard(&self, params: &ParamVector, v: Option<&[f64]>, batch: &Batch, mode: Mode) -> Result<ShardOut> {
        let count = self.output + 1;
        let mut vals: Vec<Option<Tensor>> = Vec::with_capacity(count);
        let mut tans: Vec<Option<Tensor>> = Vec::with_capacity(count);
        let mut caches = Vec::with_capacity(count);
        for i in 0..count {
            let (val, tan, cache) = self.forward_node(i, params, v, batch, &vals, &tans, mode)?;
            vals.push(Some(val));
            tans.push(tan);
            caches.push(cache);
        }
        let loss = vals[self.output].as_ref().expect("output value").item();
        if mode == Mode::Loss {
            return Ok(ShardOut {
                loss,
                grad: None,
                hvp: None,
            });
        }

        let mut grad = vec![0.0; self.param_count];
        let mut hvp = (mode == Mode::Hvp).then(|| vec![0.0; self.param_count]);
        let mut adj: Vec<Option<Tensor>> = vec![None; count];
        let mut tadj: Vec<Option<Tensor>> = vec![None; count];
        adj[self.output] = Some(Tensor::scalar(1.0));

        for i in (0..count).rev() {
            let Some(ybar) = adj[i].take() else { continue };
            let ybar_dot = tadj[i].take();
            if !ybar.is_finite() || ybar_dot.as_ref().is_some_and(|t| !t.is_finite()) {
                return Err(Error::numerical(Some(i), format!("non-finite adjoint in {}", self.nodes[i].op.name())));
            }
            self.backward_node(
                i,
                &ybar,
                ybar_dot.as_ref(),
                &vals,
                &tans,
                &caches[i],
                batch,
                &mut adj,
                &mut tadj,
                &mut grad,
                hvp.as_deref_mut(),
            )?;
        }
        Ok(ShardOut {
            loss,
            grad: Some(grad),
            hvp,
        })
    }

    #[allow(clippy::too_many_arguments, clippy::type_complexity)]
    fn forward_node(
        &self,
        i: NodeId,
        params: &ParamVector,
        v: Option<&[f64]>,
        batch: &Batch,
        vals: &[Option<Tensor>],
        tans: &[Option<Tensor>],
        mode: Mode,
    ) -> Result<(Tensor, Option<Tensor>, Cache)> {
        let node = &self.nodes[i];
        let val = |k: usize| vals[node.inputs[k]].as_ref().expect("input evaluated");
        let tan = |k: usize| {
            if mode == Mode::Hvp {
                tans[node.inputs[k]].as_ref()
            } else {
                None
            }
        };
        let shape_err = |msg: String| Error::config(format!("node {i} ({}): {msg}", node.op.name()));

        let (out, tangent, cache) = match &node.op {
            Op::Input => (batch.inputs().clone(), None, Cache::None),
            Op::Param { offset, shape } => {
                let n: usize = shape.iter().product();
                let t = Tensor::new(shape.clone(), params[*offset..offset + n].to_vec())?;
                let dt = match (mode, v) {
                    (Mode::Hvp, Some(v)) => Some(Tensor::new(shape.clone(), v[*offset..offset + n].to_vec())?),
                    _ => None,
                };
                (t, dt, Cache::None)
            }
            Op::Dense => {
                let (x, w) = (val(0), val(1));
                if x.shape().len() != 2 || w.shape().len() != 2 || x.shape()[1] != w.shape()[1] {
                    return Err(shape_err(format!("incompatible shapes {:?} and {:?}", x.shape(), w.shape())));
                }
                let (n, k, m) = (x.shape()[0], x.shape()[1], w.shape()[0]);
                let mut y = vec![0.0; n * m];
                gemm_nt(n, m, k, x.data(), w.data(), &mut y);
                let dy = match (tan(0), tan(1)) {
                    (None, None) => None,
                    (dx, dw) => {
                        let mut dy = vec![0.0; n * m];
                        if let Some(dx) = dx {
                            gemm_nt(n, m, k, dx.data(), w.data(), &mut dy);
                        }
                        if let Some(dw) = dw {
                            gemm_nt(n, m, k, x.data(), dw.data(), &mut dy);
                        }
                        Some(Tensor::new(vec![n, m], dy)?)
                    }
                };
                (Tensor::new(vec![n, m], y)?, dy, Cache::None)
            }
            Op::Conv3x3 => {
                let (x, w) = (val(0), val(1));
                let xs = x.shape();
                let ws = w.shape();
                if xs.len() != 4 || ws.len() != 4 || ws[1] != 3 || ws[2] != 3 || ws[3] != xs[3] {
                    return Err(shape_err(format!("incompatible shapes {xs:?} and {ws:?}")));
                }
                let (n, h, wd, c) = (xs[0], xs[1], xs[2], xs[3]);
                let o = ws[0];
                let rows = n * h * wd;
                let k = 9 * c;
                let cols = im2col(x.data(), n, h, wd, c);
                let mut y = vec![0.0; rows * o];
                gemm_nt(rows, o, k, &cols, w.data(), &mut y);
                let (dy, tcols) = match (tan(0), tan(1)) {
                    (None, None) => (None, None),
                    (dx, dw) => {
                        let mut dy = vec![0.0; rows * o];
                        let tcols = dx.map(|dx| im2col(dx.data(), n, h, wd, c));
                        if let Some(tc) = &tcols {
                            gemm_nt(rows, o, k, tc, w.data(), &mut dy);
                        }
                        if let Some(dw) = dw {
                            gemm_nt(rows, o, k, &cols, dw.data(), &mut dy);
                        }
                        (Some(Tensor::new(vec![n, h, wd, o], dy)?), tcols)
                    }
                };
                let cache = if mode == Mode::Loss {
                    Cache::None
                } else {
                    Cache::Cols { cols, tcols }
                };
                (Tensor::new(vec![n, h, wd, o], y)?, dy, cache)
            }
            Op::BiasAdd => {
                let (x, b) = (val(0), val(1));
                let c = b.len();
                if x.shape().last() != Some(&c) {
                    return Err(shape_err(format!("bias of length {c} for input {:?}", x.shape())));
                }
                let mut y = x.clone();
                for row in y.data_mut().chunks_mut(c) {
                    for (yi, bi) in row.iter_mut().zip(b.data()) {
                        *yi += bi;
                    }
                }
                let dy = match (tan(0), tan(1)) {
                    (None, None) => None,
                    (dx, db) => {
                        let mut dy = dx.cloned().unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));
                        if let Some(db) = db {
                            for row in dy.data_mut().chunks_mut(c) {
                                for (yi, bi) in row.iter_mut().zip(db.data()) {
                                    *yi += bi;
                                }
                            }
                        }
                        Some(dy)
                    }
                };
                (y, dy, Cache::None)
            }
            Op::Relu => {
                let x = val(0);
                let mut y = x.clone();
                y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                let dy = tan(0).map(|dx| {
                    let mut d = dx.clone();
                    for (di, xi) in d.data_mut().iter_mut().zip(x.data()) {
                        if *xi <= 0.0 {
                            *di = 0.0;
                        }
                    }
                    d
                });
                (y, dy, Cache::None)
            }
            Op::MaxPool2 => {
                let x = val(0);
                let xs = x.shape();
                if xs.len() != 4 || xs[1] < 2 || xs[2] < 2 {
                    return Err(shape_err(format!("cannot pool input of shape {xs:?}")));
                }
                let (n, h, w, c) = (xs[0], xs[1], xs[2], xs[3]);
                let (ho, wo) = (h / 2, w / 2);
                let mut y = vec![0.0; n * ho * wo * c];
                let mut argmax = vec![0usize; y.len()];
                let xd = x.data();
                for b in 0..n {
                    for i in 0..ho {
                        for j in 0..wo {
                            for ch in 0..c {
                                let mut best = usize::MAX;
                                let mut bv = f64::NEG_INFINITY;
                                for di in 0..2 {
                                    for dj in 0..2 {
                                        let idx = ((b * h + 2 * i + di) * w + 2 * j + dj) * c + ch;
                                        if best == usize::MAX || xd[idx] > bv {
                                            bv = xd[idx];
                                            best = idx;
                                        }
                                    }
                                }
                                let o = ((b * ho + i) * wo + j) * c + ch;
                                y[o] = bv;
                                argmax[o] = best;
                            }
                        }
                    }
                }
                let shape = vec![n, ho, wo, c];
                let dy = match tan(0) {
                    Some(dx) => Some(Tensor::new(shape.clone(), argmax.iter().map(|&a| dx.data()[a]).collect())?),
                    None => None,
                };
                (Tensor::new(shape, y)?, dy, Cache::Pool { argmax })
            }
            Op::Flatten => {
                let x = val(0);
                let shape = vec![x.rows(), x.row_len()];
                let dy = match tan(0) {
                    Some(dx) => Some(dx.clone().reshape(shape.clone())?),
                    None => None,
                };
                (x.clone().reshape(shape)?, dy, Cache::None)
            }
            Op::SoftmaxCrossEntropy => {
                let z = val(0);
                if z.shape().len() != 2 {
                    return Err(shape_err(format!("logits must be N×C, got {:?}", z.shape())));
                }
                let (n, c) = (z.shape()[0], z.shape()[1]);
                let labels = batch.labels();
                if labels.len() != n {
                    return Err(shape_err(format!("{n} logit rows but {} labels", labels.len())));
                }
                let mut probs = vec![0.0; n * c];
                let mut loss = 0.0;
                for r in 0..n {
                    let zr = &z.data()[r * c..(r + 1) * c];
                    let y = labels[r];
                    if y >= c {
                        return Err(shape_err(format!("label {y} out of range for {c} classes")));
                    }
                    let m = zr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let pr = &mut probs[r * c..(r + 1) * c];
                    let mut s = 0.0;
                    for (p, &zv) in pr.iter_mut().zip(zr) {
                        *p = (zv - m).exp();
                        s += *p;
                    }
                    pr.iter_mut().for_each(|p| *p /= s);
                    loss += s.ln() + m - zr[y];
                }
                loss /= n as f64;
                let dl = match tan(0) {
                    Some(dz) => {
                        let mut acc = 0.0;
                        for r in 0..n {
                            let y = labels[r];
                            for k in 0..c {
                                let delta = if k == y { 1.0 } else { 0.0 };
                                acc += (probs[r * c + k] - delta) * dz.data()[r * c + k];
                            }
                        }
                        Some(Tensor::scalar(acc / n as f64))
                    }
                    None => None,
                };
                (Tensor::scalar(loss), dl, Cache::Probs(probs))
            }
            Op::L2Penalty { coef } => {
                let mut sq = 0.0;
                let mut dot = 0.0;
                let mut any_tangent = false;
                for k in 0..node.inputs.len() {
                    let w = val(k);
                    sq += w.data().iter().map(|x| x * x).sum::<f64>();
                    if let Some(dw) = tan(k) {
                        any_tangent = true;
                        dot += w.data().iter().zip(dw.data()).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                let dl = any_tangent.then(|| Tensor::scalar(coef * dot));
                (Tensor::scalar(0.5 * coef * sq), dl, Cache::None)
            }
            Op::Add => {
                let (a, b) = (val(0), val(1));
                if a.shape() != b.shape() {
                    return Err(shape_err(format!("cannot add {:?} and {:?}", a.shape(), b.shape())));
                }
                let mut y = a.clone();
                crate::param::axpy(1.0, b.data(), y.data_mut());
                let dy = match (tan(0), tan(1)) {
                    (None, None) => None,
                    (Some(t), None) | (None, Some(t)) => Some(t.clone()),
                    (Some(ta), Some(tb)) => {
                        let mut d = ta.clone();
                        crate::param::axpy(1.0, tb.data(), d.data_mut());
                        Some(d)
                    }
                };
                (y, dy, Cache::None)
            }
            Op::Quadratic { matrix, linear } => {
                let (theta, targets) = (val(0), val(1));
                let d = matrix.dim();
                if theta.len() != d || targets.row_len() != d || linear.len() != d {
                    return Err(shape_err(format!(
                        "quadratic of dimension {d} with θ {:?}, targets {:?}, linear term {}",
                        theta.shape(),
                        targets.shape(),
                        linear.len()
                    )));
                }
                let n = targets.rows();
                let mut diff = vec![0.0; d];
                let mut adiff = vec![0.0; d];
                let mut mean_target = vec![0.0; d];
                let mut loss = 0.0;
                for r in 0..n {
                    let y = &targets.data()[r * d..(r + 1) * d];
                    for k in 0..d {
                        diff[k] = theta.data()[k] - y[k];
                        mean_target[k] += y[k] / n as f64;
                    }
                    matrix.apply(&diff, &mut adiff);
                    loss += 0.5 * crate::param::dot(&diff, &adiff);
                }
                loss /= n as f64;
                loss += crate::param::dot(linear, theta.data());
                // ∂L/∂θ = A(θ − ȳ) + b
                for k in 0..d {
                    diff[k] = theta.data()[k] - mean_target[k];
                }
                let mut residual = vec![0.0; d];
                matrix.apply(&diff, &mut residual);
                crate::param::axpy(1.0, linear, &mut residual);
                let dl = tan(0).map(|dt| Tensor::scalar(crate::param::dot(&residual, dt.data())));
                (Tensor::scalar(loss), dl, Cache::Residual(residual))
            }
        };
        if !out.is_finite() {
            return Err(Error::numerical(Some(i), format!("non-finite value in {}", node.op.name())));
        }
        if tangent.as_ref().is_some_and(|t| !t.is_finite()) {
            return Err(Error::numerical(Some(i), format!("non-finite tangent in {}", node.op.name())));
        }
        Ok((out, tangent, cache))
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_node(
        &self,
        i: NodeId,
        ybar: &Tensor,
        ybar_dot: Option<&Tensor>,
        vals: &[Option<Tensor>],
        tans: &[Option<Tensor>],
        cache: &Cache,
        batch: &Batch,
        adj: &mut [Option<Tensor>],
        tadj: &mut [Option<Tensor>],
        grad: &mut [f64],
        hvp: Option<&mut [f64]>,
    ) -> Result<()> {
        let node = &self.nodes[i];
        let rg = &self.requires_grad;
        let want_tangent = hvp.is_some();
        let inp = |k: usize| node.inputs[k];
        let val = |k: usize| vals[node.inputs[k]].as_ref().expect("input evaluated");
        let tan = |k: usize| if want_tangent { tans[node.inputs[k]].as_ref() } else { None };

        match &node.op {
            Op::Input => {}
            Op::Param { offset, .. } => {
                let n = ybar.len();
                crate::param::axpy(1.0, ybar.data(), &mut grad[*offset..offset + n]);
                if let (Some(h), Some(t)) = (hvp, ybar_dot) {
                    crate::param::axpy(1.0, t.data(), &mut h[*offset..offset + n]);
                }
            }
            Op::Dense => {
                let (x, w) = (val(0), val(1));
                let (n, k, m) = (x.shape()[0], x.shape()[1], w.shape()[0]);
                // x̄ = ȳ·w, w̄ = ȳᵀ·x
                accumulate(rg, adj, inp(0), x.shape(), |buf| gemm_nn(n, k, m, ybar.data(), w.data(), buf));
                accumulate(rg, adj, inp(1), w.shape(), |buf| gemm_tn(m, k, n, ybar.data(), x.data(), buf));
                if want_tangent {
                    let (dx, dw) = (tan(0), tan(1));
                    accumulate(rg, tadj, inp(0), x.shape(), |buf| {
                        if let Some(yd) = ybar_dot {
                            gemm_nn(n, k, m, yd.data(), w.data(), buf);
                        }
                        if let Some(dw) = dw {
                            gemm_nn(n, k, m, ybar.data(), dw.data(), buf);
                        }
                    });
                    accumulate(rg, tadj, inp(1), w.shape(), |buf| {
                        if let Some(yd) = ybar_dot {
                            gemm_tn(m, k, n, yd.data(), x.data(), buf);
                        }
                        if let Some(dx) = dx {
                            gemm_tn(m, k, n, ybar.data(), dx.data(), buf);
                        }
                    });
                }
            }
            Op::Conv3x3 => {
                let (x, w) = (val(0), val(1));
                let xs = x.shape();
                let (n, h, wd, c) = (xs[0], xs[1], xs[2], xs[3]);
                let o = w.shape()[0];
                let rows = n * h * wd;
                let k = 9 * c;
                let Cache::Cols { cols, tcols } = cache else {
                    unreachable!("conv cache missing")
                };
                let needs_input_adjoint = rg[inp(0)];
                if needs_input_adjoint {
                    accumulate(rg, adj, inp(0), xs, |buf| {
                        conv_input_adjoint(&[(ybar.data(), w.data())], o, n, h, wd, c, buf)
                    });
                }
                accumulate(rg, adj, inp(1), w.shape(), |buf| gemm_tn(o, k, rows, ybar.data(), cols, buf));
                if want_tangent {
                    let dw = tan(1);
                    if needs_input_adjoint {
                        let mut terms = Vec::with_capacity(2);
                        if let Some(yd) = ybar_dot {
                            terms.push((yd.data(), w.data()));
                        }
                        if let Some(dw) = dw {
                            terms.push((ybar.data(), dw.data()));
                        }
                        accumulate(rg, tadj, inp(0), xs, |buf| conv_input_adjoint(&terms, o, n, h, wd, c, buf));
                    }
                    accumulate(rg, tadj, inp(1), w.shape(), |buf| {
                        if let Some(yd) = ybar_dot {
                            gemm_tn(o, k, rows, yd.data(), cols, buf);
                        }
                        if let Some(tc) = tcols {
                            gemm_tn(o, k, rows, ybar.data(), tc, buf);
                        }
                    });
                }
            }
            Op::BiasAdd => {
                let (x, b) = (val(0), val(1));
                let c = b.len();
                let sum_rows = |src: &Tensor, buf: &mut [f64]| {
                    for row in src.data().chunks(c) {
                        crate::param::axpy(1.0, row, buf);
                    }
                };
                accumulate(rg, adj, inp(0), x.shape(), |buf| crate::param::axpy(1.0, ybar.data(), buf));
                accumulate(rg, adj, inp(1), b.shape(), |buf| sum_rows(ybar, buf));
                if let Some(yd) = ybar_dot {
                    accumulate(rg, tadj, inp(0), x.shape(), |buf| crate::param::axpy(1.0, yd.data(), buf));
                    accumulate(rg, tadj, inp(1), b.shape(), |buf| sum_rows(yd, buf));
                }
            }
            Op::Relu => {
                let x = val(0);
                let masked = |src: &Tensor, buf: &mut [f64]| {
                    for ((b, s), xv) in buf.iter_mut().zip(src.data()).zip(x.data()) {
                        if *xv > 0.0 {
                            *b += s;
                        }
                    }
                };
                accumulate(rg, adj, inp(0), x.shape(), |buf| masked(ybar, buf));
                if let Some(yd) = ybar_dot {
                    accumulate(rg, tadj, inp(0), x.shape(), |buf| masked(yd, buf));
                }
            }
            Op::MaxPool2 => {
                let x = val(0);
                let Cache::Pool { argmax } = cache else {
                    unreachable!("pool cache missing")
                };
                let scatter = |src: &Tensor, buf: &mut [f64]| {
                    for (s, &a) in src.data().iter().zip(argmax) {
                        buf[a] += s;
                    }
                };
                accumulate(rg, adj, inp(0), x.shape(), |buf| scatter(ybar, buf));
                if let Some(yd) = ybar_dot {
                    accumulate(rg, tadj, inp(0), x.shape(), |buf| scatter(yd, buf));
                }
            }
            Op::Flatten => {
                let x = val(0);
                accumulate(rg, adj, inp(0), x.shape(), |buf| crate::param::axpy(1.0, ybar.data(), buf));
                if let Some(yd) = ybar_dot {
                    accumulate(rg, tadj, inp(0), x.shape(), |buf| crate::param::axpy(1.0, yd.data(), buf));
                }
            }
            Op::SoftmaxCrossEntropy => {
                let z = val(0);
                let (n, c) = (z.shape()[0], z.shape()[1]);
                let Cache::Probs(probs) = cache else {
                    unreachable!("softmax cache missing")
                };
                let labels = batch.labels();
                let lbar = ybar.item();
                let scale = lbar / n as f64;
                accumulate(rg, adj, inp(0), z.shape(), |buf| {
                    for r in 0..n {
                        for k in 0..c {
                            buf[r * c + k] += scale * probs[r * c + k];
                        }
                        buf[r * c + labels[r]] -= scale;
                    }
                });
                if want_tangent {
                    let lbar_dot = ybar_dot.map(|t| t.item()).unwrap_or(0.0);
                    let dz = tan(0);
                    accumulate(rg, tadj, inp(0), z.shape(), |buf| {
                        for r in 0..n {
                            let p = &probs[r * c..(r + 1) * c];
                            if lbar_dot != 0.0 {
                                let s = lbar_dot / n as f64;
                                for k in 0..c {
                                    buf[r * c + k] += s * p[k];
                                }
                                buf[r * c + labels[r]] -= s;
                            }
                            if let Some(dz) = dz {
                                // ṗ = p ⊙ (ż − ⟨p, ż⟩)
                                let dzr = &dz.data()[r * c..(r + 1) * c];
                                let mean = crate::param::dot(p, dzr);
                                for k in 0..c {
                                    buf[r * c + k] += scale * p[k] * (dzr[k] - mean);
                                }
                            }
                        }
                    });
                }
            }
            Op::L2Penalty { coef } => {
                let lbar = ybar.item();
                let lbar_dot = ybar_dot.map(|t| t.item()).unwrap_or(0.0);
                for k in 0..node.inputs.len() {
                    let w = val(k);
                    accumulate(rg, adj, inp(k), w.shape(), |buf| crate::param::axpy(coef * lbar, w.data(), buf));
                    if want_tangent {
                        let dw = tan(k);
                        accumulate(rg, tadj, inp(k), w.shape(), |buf| {
                            if lbar_dot != 0.0 {
                                crate::param::axpy(coef * lbar_dot, w.data(), buf);
                            }
                            if let Some(dw) = dw {
                                crate::param::axpy(coef * lbar, dw.data(), buf);
                            }
                        });
                    }
                }
            }
            Op::Add => {
                for k in 0..2 {
                    let shape = val(k).shape().to_vec();
                    accumulate(rg, adj, inp(k), &shape, |buf| crate::param::axpy(1.0, ybar.data(), buf));
                    if let Some(yd) = ybar_dot {
                        accumulate(rg, tadj, inp(k), &shape, |buf| crate::param::axpy(1.0, yd.data(), buf));
                    }
                }
            }
            Op::Quadratic { matrix, .. } => {
                let theta = val(0);
                let Cache::Residual(residual) = cache else {
                    unreachable!("quadratic cache missing")
                };
                let lbar = ybar.item();
                accumulate(rg, adj, inp(0), theta.shape(), |buf| crate::param::axpy(lbar, residual, buf));
                if want_tangent {
                    let lbar_dot = ybar_dot.map(|t| t.item()).unwrap_or(0.0);
                    let dtheta = tan(0);
                    accumulate(rg, tadj, inp(0), theta.shape(), |buf| {
                        if lbar_dot != 0.0 {
                            crate::param::axpy(lbar_dot, residual, buf);
                        }
                        if let Some(dt) = dtheta {
                            let mut ad = vec![0.0; dt.len()];
                            matrix.apply(dt.data(), &mut ad);
                            crate::param::axpy(lbar, &ad, buf);
                        }
                    });
                }
            }
        }
        Ok(())
    }
}

/// Adds `f`'s contribution into the (lazily allocated) adjoint of `target`.
fn accumulate(
    requires_grad: &[bool],
    store: &mut [Option<Tensor>],
    target: NodeId,
    shape: &[usize],
    f: impl FnOnce(&mut [f64]),
) {
    if !requires_grad[target] {
        return;
    }
    let slot = store[target].get_or_insert_with(|| Tensor::zeros(shape.to_vec()));
    f(slot.data_mut());
}

/// Lowers a 3×3 'same' convolution input to a `(N·H·W) × (9·C)` matrix with
/// columns ordered `(kh, kw, c)`.
fn im2col(x: &[f64], n: usize, h: usize, w: usize, c: usize) -> Vec<f64> {
    let zeros = vec![0.0; c];
    let mut cols = Vec::with_capacity(n * h * w * 9 * c);
    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                for kh in 0..3 {
                    let ii = i + kh;
                    for kw in 0..3 {
                        let jj = j + kw;
                        if ii == 0 || ii > h || jj == 0 || jj > w {
                            cols.extend_from_slice(&zeros);
                        } else {
                            let src = ((b * h + ii - 1) * w + jj - 1) * c;
                            cols.extend_from_slice(&x[src..src + c]);
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adds `Σ_t col2im(ybar_t · w_t)` into `out` one output pixel at a time, so
/// the full column matrix is never materialized.
fn conv_input_adjoint(terms: &[(&[f64], &[f64])], o: usize, n: usize, h: usize, w: usize, c: usize, out: &mut [f64]) {
    let k = 9 * c;
    let mut dcol = vec![0.0; k];
    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                let r = (b * h + i) * w + j;
                dcol.fill(0.0);
                for (ybar, wt) in terms {
                    for (oo, &g) in ybar[r * o..(r + 1) * o].iter().enumerate() {
                        if g != 0.0 {
                            crate::param::axpy(g, &wt[oo * k..(oo + 1) * k], &mut dcol);
                        }
                    }
                }
                for kh in 0..3 {
                    let ii = i + kh;
                    if ii == 0 || ii > h {
                        continue;
                    }
                    for kw in 0..3 {
                        let jj = j + kw;
                        if jj == 0 || jj > w {
                            continue;
                        }
                        let dst = ((b * h + ii - 1) * w + jj - 1) * c;
                        let src = (kh * 3 + kw) * c;
                        crate::param::axpy(1.0, &dcol[src..src + c], &mut out[dst..dst + c]);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
fn col2im_add(cols: &[f64], n: usize, h: usize, w: usize, c: usize, out: &mut [f64]) {
    let k = 9 * c;
    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                let row = ((b * h + i) * w + j) * k;
                for kh in 0..3 {
                    let ii = i + kh;
                    if ii == 0 || ii > h {
                        continue;
                    }
                    for kw in 0..3 {
                        let jj = j + kw;
                        if jj == 0 || jj > w {
                            continue;
                        }
                        let dst = ((b * h + ii - 1) * w + jj - 1) * c;
                        let src = row + (kh * 3 + kw) * c;
                        crate::param::axpy(1.0, &cols[src..src + c], &mut out[dst..dst + c]);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_graph(diag: Vec<f64>, linear: Vec<f64>) -> Graph {
        let mut b = GraphBuilder::new();
        let theta = b.param(vec![diag.len()]);
        let t = b.input();
        let q = b.quadratic(theta, t, QuadMatrix::Diag(diag), linear);
        b.finish(q, None).unwrap()
    }

    fn zero_targets(n: usize, d: usize) -> Batch {
        Batch::unlabeled(Tensor::zeros(vec![n, d]))
    }

    #[test]
    fn quadratic_value_gradient_and_hvp() {
        let g = quadratic_graph(vec![2.0, 6.0], vec![0.0, 0.0]);
        let p = ParamVector::new(vec![1.0, 1.0]);
        let batch = zero_targets(1, 2);
        assert_eq!(g.forward_eval(&p, &batch).unwrap(), 4.0);
        assert_eq!(g.grad(&p, &batch).unwrap().to_vec(), vec![2.0, 6.0]);
        assert_eq!(g.hvp(&p, &batch, &[1.0, 1.0]).unwrap().to_vec(), vec![2.0, 6.0]);
    }

    #[test]
    fn linear_loss_has_zero_hessian() {
        let g = quadratic_graph(vec![0.0; 3], vec![1.0, -2.0, 0.5]);
        let p = ParamVector::new(vec![0.3, 0.1, -4.0]);
        let batch = zero_targets(2, 3);
        let hv = g.hvp(&p, &batch, &[0.7, -1.1, 2.0]).unwrap();
        assert!(hv.iter().all(|&x| x == 0.0));
        assert_eq!(g.grad(&p, &batch).unwrap().to_vec(), vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn norm_squared_gradient() {
        // ‖θ‖² = ½θᵀ(2I)θ
        let g = quadratic_graph(vec![2.0, 2.0], vec![0.0, 0.0]);
        let grad = g.grad(&ParamVector::new(vec![1.0, 2.0]), &zero_targets(1, 2)).unwrap();
        assert_eq!(grad.to_vec(), vec![2.0, 4.0]);
    }

    fn logits_graph(c: usize) -> Graph {
        // logits are the parameters themselves (broadcast through a bias)
        let mut b = GraphBuilder::new();
        let x = b.input();
        let bias = b.param(vec![c]);
        let z = b.bias_add(x, bias);
        let l = b.softmax_cross_entropy(z);
        b.finish(l, Some(z)).unwrap()
    }

    #[test]
    fn uniform_logits_cross_entropy() {
        let g = logits_graph(10);
        let batch = Batch::new(Tensor::zeros(vec![1, 10]), vec![0]).unwrap();
        let p = ParamVector::zeros(10);
        let loss = g.forward_eval(&p, &batch).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        let grad = g.grad(&p, &batch).unwrap();
        assert!((grad[0] - (0.1 - 1.0)).abs() < 1e-12);
        for &v in &grad[1..] {
            assert!((v - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_loss_reports_node() {
        let g = logits_graph(3);
        let batch = Batch::new(Tensor::zeros(vec![1, 3]), vec![0]).unwrap();
        let p = ParamVector::new(vec![f64::NAN, 0.0, 0.0]);
        match g.forward_eval(&p, &batch) {
            Err(Error::Numerical { node: Some(n), .. }) => assert_eq!(n, 1),
            other => panic!("expected numerical error, got {other:?}"),
        }
    }

    #[test]
    fn output_must_be_scalar() {
        let mut b = GraphBuilder::new();
        let x = b.input();
        let r = b.relu(x);
        assert!(b.finish(r, None).is_err());
    }

    #[test]
    fn im2col_roundtrip_counts_window_overlap() {
        // col2im(im2col(1)) counts how many 3×3 windows cover each pixel
        let (n, h, w, c) = (1, 3, 4, 2);
        let x = vec![1.0; n * h * w * c];
        let cols = im2col(&x, n, h, w, c);
        let mut back = vec![0.0; x.len()];
        col2im_add(&cols, n, h, w, c, &mut back);
        // corner pixel is covered by 4 windows, interior by 9
        assert_eq!(back[0], 4.0);
        assert_eq!(back[(w + 1) * c], 9.0);
    }

    #[test]
    fn maxpool_floors_odd_extent() {
        let mut b = GraphBuilder::new();
        let x = b.input();
        let p = b.maxpool2(x);
        let f = b.flatten(p);
        let w = b.param(vec![1, 1]);
        let z = b.dense(f, w);
        let l = b.softmax_cross_entropy(z);
        let g = b.finish(l, Some(p)).unwrap();
        let input = Tensor::new(vec![1, 3, 3, 1], (0..9).map(|v| v as f64).collect()).unwrap();
        let out = g.logits(&ParamVector::zeros(1), &input).unwrap();
        assert_eq!(out.data(), &[4.0]);
    }
}

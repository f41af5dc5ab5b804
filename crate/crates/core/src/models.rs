//! Concrete loss surfaces: the four-conv SimpleCNN, a ReLU MLP and an
//! explicit quadratic whose Hessian is known exactly.

use std::io::{Read, Write};
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, GraphBuilder, NodeId, QuadMatrix};
use crate::batch::Batch;
use crate::error::{Error, Result};
use crate::param::ParamVector;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub arch: Architecture,
    /// Coefficient of `½·c·‖w‖²` over weight blocks (biases excluded).
    #[serde(default)]
    pub l2_coefficient: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    SimpleCnn {
        /// `[height, width, channels]`
        input_shape: [usize; 3],
        classes: usize,
        #[serde(default)]
        widths: CnnWidths,
    },
    /// `layers[0]` is the flattened input size, the last entry the class count.
    Mlp { layers: Vec<usize> },
    Quadratic {
        matrix: QuadSpec,
        #[serde(default)]
        linear: Vec<f64>,
        start: Vec<f64>,
    },
}

/// Filter counts of the four conv layers and the hidden dense width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CnnWidths {
    pub conv: [usize; 4],
    pub dense: usize,
}

impl Default for CnnWidths {
    fn default() -> Self {
        Self {
            conv: [32, 32, 64, 64],
            dense: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadSpec {
    Diag(Vec<f64>),
    Dense(Vec<Vec<f64>>),
}

impl QuadSpec {
    pub fn to_matrix(&self) -> Result<QuadMatrix> {
        match self {
            QuadSpec::Diag(d) => Ok(QuadMatrix::Diag(d.clone())),
            QuadSpec::Dense(rows) => {
                let n = rows.len();
                let mut values = Vec::with_capacity(n * n);
                for r in rows {
                    if r.len() != n {
                        return Err(Error::config("quadratic matrix must be square"));
                    }
                    values.extend_from_slice(r);
                }
                for i in 0..n {
                    for j in 0..i {
                        if values[i * n + j] != values[j * n + i] {
                            return Err(Error::config("quadratic matrix must be symmetric"));
                        }
                    }
                }
                Ok(QuadMatrix::Dense { n, values })
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SimpleCnn,
    Mlp,
    Quadratic,
}

impl ModelKind {
    fn tag(self) -> u8 {
        match self {
            ModelKind::SimpleCnn => 0,
            ModelKind::Mlp => 1,
            ModelKind::Quadratic => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(ModelKind::SimpleCnn),
            1 => Ok(ModelKind::Mlp),
            2 => Ok(ModelKind::Quadratic),
            t => Err(Error::format(format!("unknown model kind tag {t}"))),
        }
    }
}

/// SimpleCNN with the reference widths: conv 32, 32, pool, conv 64, 64,
/// pool, dense 128, dense `classes`.
pub fn build_simple_cnn(input_shape: [usize; 3], classes: usize) -> Result<ModelSpec> {
    build_simple_cnn_with(input_shape, classes, CnnWidths::default())
}

/// Same topology as [`build_simple_cnn`] with custom widths, for runs too
/// small for the full-size network.
pub fn build_simple_cnn_with(input_shape: [usize; 3], classes: usize, widths: CnnWidths) -> Result<ModelSpec> {
    let spec = ModelSpec {
        arch: Architecture::SimpleCnn {
            input_shape,
            classes,
            widths,
        },
        l2_coefficient: 0.0,
    };
    spec.validate()?;
    Ok(spec)
}

impl ModelSpec {
    pub fn mlp(layers: Vec<usize>) -> Self {
        Self {
            arch: Architecture::Mlp { layers },
            l2_coefficient: 0.0,
        }
    }

    pub fn quadratic_diag(diag: Vec<f64>, start: Vec<f64>) -> Self {
        Self {
            arch: Architecture::Quadratic {
                matrix: QuadSpec::Diag(diag),
                linear: Vec::new(),
                start,
            },
            l2_coefficient: 0.0,
        }
    }

    pub fn with_l2(mut self, coefficient: f64) -> Self {
        self.l2_coefficient = coefficient;
        self
    }

    pub fn kind(&self) -> ModelKind {
        match self.arch {
            Architecture::SimpleCnn { .. } => ModelKind::SimpleCnn,
            Architecture::Mlp { .. } => ModelKind::Mlp,
            Architecture::Quadratic { .. } => ModelKind::Quadratic,
        }
    }

    pub fn classes(&self) -> Option<usize> {
        match &self.arch {
            Architecture::SimpleCnn { classes, .. } => Some(*classes),
            Architecture::Mlp { layers } => layers.last().copied(),
            Architecture::Quadratic { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l2_coefficient >= 0.0 && self.l2_coefficient.is_finite()) {
            return Err(Error::config("l2_coefficient must be a finite non-negative number"));
        }
        match &self.arch {
            Architecture::SimpleCnn {
                input_shape,
                classes,
                widths,
            } => {
                let [h, w, c] = *input_shape;
                if h < 4 || w < 4 {
                    return Err(Error::config(format!(
                        "SimpleCNN input {h}×{w} is smaller than 4×4; two 2×2 poolings would empty it"
                    )));
                }
                if c == 0 || *classes < 2 || widths.conv.contains(&0) || widths.dense == 0 {
                    return Err(Error::config("SimpleCNN extents must be positive and classes ≥ 2"));
                }
            }
            Architecture::Mlp { layers } => {
                if layers.len() < 2 || layers.contains(&0) {
                    return Err(Error::config("MLP needs at least input and output layers, all non-empty"));
                }
                if *layers.last().unwrap() < 2 {
                    return Err(Error::config("MLP needs at least two classes"));
                }
            }
            Architecture::Quadratic { matrix, linear, start } => {
                let m = matrix.to_matrix()?;
                if start.len() != m.dim() || (!linear.is_empty() && linear.len() != m.dim()) {
                    return Err(Error::config("quadratic start point and linear term must match the matrix dimension"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Weight,
    Bias,
}

/// Where one layer's tensor lives inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
    pub kind: BlockKind,
    pub fan_in: usize,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// A model specification bound to its differentiable graph.
#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    graph: Graph,
    layout: Vec<ParamBlock>,
}

struct LayoutBuilder {
    builder: GraphBuilder,
    layout: Vec<ParamBlock>,
    weights: Vec<NodeId>,
}

impl LayoutBuilder {
    fn block(&mut self, name: String, shape: Vec<usize>, kind: BlockKind, fan_in: usize) -> NodeId {
        let offset = self.builder.param_count();
        let id = self.builder.param(shape.clone());
        if kind == BlockKind::Weight {
            self.weights.push(id);
        }
        self.layout.push(ParamBlock {
            name,
            offset,
            shape,
            kind,
            fan_in,
        });
        id
    }

    fn conv(&mut self, x: NodeId, name: &str, cin: usize, cout: usize) -> NodeId {
        let w = self.block(format!("{name}.weight"), vec![cout, 3, 3, cin], BlockKind::Weight, 9 * cin);
        let b = self.block(format!("{name}.bias"), vec![cout], BlockKind::Bias, 9 * cin);
        let y = self.builder.conv3x3(x, w);
        let y = self.builder.bias_add(y, b);
        self.builder.relu(y)
    }

    fn dense(&mut self, x: NodeId, name: &str, fin: usize, fout: usize, relu: bool) -> NodeId {
        let w = self.block(format!("{name}.weight"), vec![fout, fin], BlockKind::Weight, fin);
        let b = self.block(format!("{name}.bias"), vec![fout], BlockKind::Bias, fin);
        let y = self.builder.dense(x, w);
        let y = self.builder.bias_add(y, b);
        if relu {
            self.builder.relu(y)
        } else {
            y
        }
    }
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut lb = LayoutBuilder {
            builder: GraphBuilder::new(),
            layout: Vec::new(),
            weights: Vec::new(),
        };
        let (data_loss, logits) = match &spec.arch {
            Architecture::SimpleCnn {
                input_shape,
                classes,
                widths,
            } => {
                let [h, w, c] = *input_shape;
                let [c1, c2, c3, c4] = widths.conv;
                let x = lb.builder.input();
                let y = lb.conv(x, "conv1", c, c1);
                let y = lb.conv(y, "conv2", c1, c2);
                let y = lb.builder.maxpool2(y);
                let y = lb.conv(y, "conv3", c2, c3);
                let y = lb.conv(y, "conv4", c3, c4);
                let y = lb.builder.maxpool2(y);
                let y = lb.builder.flatten(y);
                let flat = (h / 2 / 2) * (w / 2 / 2) * c4;
                let y = lb.dense(y, "dense1", flat, widths.dense, true);
                let z = lb.dense(y, "dense2", widths.dense, *classes, false);
                (lb.builder.softmax_cross_entropy(z), Some(z))
            }
            Architecture::Mlp { layers } => {
                let x = lb.builder.input();
                let mut y = lb.builder.flatten(x);
                for (i, pair) in layers.windows(2).enumerate() {
                    let last = i + 2 == layers.len();
                    y = lb.dense(y, &format!("dense{}", i + 1), pair[0], pair[1], !last);
                }
                (lb.builder.softmax_cross_entropy(y), Some(y))
            }
            Architecture::Quadratic { matrix, linear, start } => {
                let d = start.len();
                let theta = lb.block("theta".into(), vec![d], BlockKind::Weight, d);
                let targets = lb.builder.input();
                let linear = if linear.is_empty() { vec![0.0; d] } else { linear.clone() };
                (lb.builder.quadratic(theta, targets, matrix.to_matrix()?, linear), None)
            }
        };
        let output = if spec.l2_coefficient > 0.0 {
            let weights = lb.weights.clone();
            let pen = lb.builder.l2_penalty(&weights, spec.l2_coefficient);
            lb.builder.add(data_loss, pen)
        } else {
            data_loss
        };
        let graph = lb.builder.finish(output, logits)?;
        Ok(Self {
            spec,
            graph,
            layout: lb.layout,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn layout(&self) -> &[ParamBlock] {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.graph.param_count()
    }

    /// He-normal weights (std `sqrt(2/fan_in)`) and zero biases. The
    /// quadratic model starts at its configured point.
    pub fn init_params(&self, rng: &mut SeededRng) -> ParamVector {
        if let Architecture::Quadratic { start, .. } = &self.spec.arch {
            return ParamVector::new(start.clone());
        }
        let mut values = vec![0.0; self.param_count()];
        for block in &self.layout {
            if block.kind == BlockKind::Weight {
                let normal = Normal::new(0.0, (2.0 / block.fan_in as f64).sqrt()).expect("positive std");
                for v in &mut values[block.range()] {
                    *v = normal.sample(rng);
                }
            }
        }
        ParamVector::new(values)
    }

    pub fn loss(&self, params: &ParamVector, batch: &Batch) -> Result<f64> {
        self.graph.forward_eval(params, batch)
    }

    /// Mean loss and its gradient; includes the L2 term when configured.
    pub fn loss_grad(&self, params: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
        self.graph.loss_grad(params, batch)
    }

    pub fn hvp(&self, params: &ParamVector, batch: &Batch, v: &[f64]) -> Result<ParamVector> {
        self.graph.hvp(params, batch, v)
    }

    pub fn predict(&self, params: &ParamVector, inputs: &Tensor) -> Result<Vec<usize>> {
        let logits = self.graph.logits(params, inputs)?;
        let c = logits.row_len();
        Ok(logits
            .data()
            .chunks(c)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect())
    }

    /// Fraction of examples whose arg-max prediction equals the label.
    pub fn accuracy(&self, params: &ParamVector, inputs: &Tensor, labels: &[usize]) -> Result<f64> {
        if labels.is_empty() || inputs.rows() == 0 {
            return Err(Error::config("accuracy of an empty dataset is undefined"));
        }
        if self.spec.kind() == ModelKind::Quadratic {
            return Err(Error::config("accuracy is undefined for the quadratic model"));
        }
        let pred = self.predict(params, inputs)?;
        let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / labels.len() as f64)
    }

    /// Splits a flat vector into per-block tensors.
    pub fn unflatten(&self, params: &ParamVector) -> Result<Vec<Tensor>> {
        if params.dim() != self.param_count() {
            return Err(Error::config(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.dim()
            )));
        }
        self.layout
            .iter()
            .map(|b| Tensor::new(b.shape.clone(), params[b.range()].to_vec()))
            .collect()
    }

    pub fn flatten(&self, tensors: &[Tensor]) -> Result<ParamVector> {
        if tensors.len() != self.layout.len() {
            return Err(Error::config("tensor count does not match the parameter layout"));
        }
        let mut out = Vec::with_capacity(self.param_count());
        for (t, b) in tensors.iter().zip(&self.layout) {
            if t.shape() != b.shape.as_slice() {
                return Err(Error::config(format!("block {} expects shape {:?}", b.name, b.shape)));
            }
            out.extend_from_slice(t.data());
        }
        Ok(ParamVector::new(out))
    }

    /// `‖w‖²` over weight blocks only.
    pub fn weight_norm_sq(&self, params: &ParamVector) -> f64 {
        self.layout
            .iter()
            .filter(|b| b.kind == BlockKind::Weight)
            .map(|b| params[b.range()].iter().map(|x| x * x).sum::<f64>())
            .sum()
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 10] = b"SHARPPATH1";

/// Checkpoint bytes: magic, one model-kind byte, `D` as little-endian u64,
/// then `D` little-endian f64 values.
pub fn encode_checkpoint(kind: ModelKind, params: &ParamVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(CHECKPOINT_MAGIC.len() + 9 + 8 * params.dim());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(kind.tag());
    out.extend_from_slice(&(params.dim() as u64).to_le_bytes());
    for v in params.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelKind, ParamVector)> {
    let header = CHECKPOINT_MAGIC.len() + 9;
    if bytes.len() < header || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
        return Err(Error::format("missing SHARPPATH1 checkpoint header"));
    }
    let kind = ModelKind::from_tag(bytes[CHECKPOINT_MAGIC.len()])?;
    let mut dbuf = [0u8; 8];
    dbuf.copy_from_slice(&bytes[CHECKPOINT_MAGIC.len() + 1..header]);
    let d = u64::from_le_bytes(dbuf) as usize;
    let body = &bytes[header..];
    if body.len() != d.checked_mul(8).ok_or_else(|| Error::format("checkpoint dimension overflows"))? {
        return Err(Error::format(format!(
            "checkpoint declares {d} values but carries {} bytes",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((kind, ParamVector::new(values)))
}

pub fn write_checkpoint(path: &Path, kind: ModelKind, params: &ParamVector) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_checkpoint(kind, params))
        .map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<(ModelKind, ParamVector)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A set of examples evaluated together. `inputs` has the examples along its
/// leading axis. Classification batches carry one label per example;
/// target-vector batches (the quadratic model) carry none.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    inputs: Tensor,
    labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        if inputs.shape().is_empty() {
            return Err(Error::config("batch inputs need a leading example axis"));
        }
        if !labels.is_empty() && labels.len() != inputs.rows() {
            return Err(Error::config(format!(
                "batch has {} examples but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn unlabeled(inputs: Tensor) -> Self {
        Self {
            inputs,
            labels: Vec::new(),
        }
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice(&self, start: usize, end: usize) -> Batch {
        Batch {
            inputs: self.inputs.slice_rows(start, end),
            labels: if self.labels.is_empty() {
                Vec::new()
            } else {
                self.labels[start..end].to_vec()
            },
        }
    }

    pub fn gather(&self, idx: &[usize]) -> Batch {
        Batch {
            inputs: self.inputs.gather_rows(idx),
            labels: if self.labels.is_empty() {
                Vec::new()
            } else {
                idx.iter().map(|&i| self.labels[i]).collect()
            },
        }
    }

    pub fn into_parts(self) -> (Tensor, Vec<usize>) {
        (self.inputs, self.labels)
    }
}

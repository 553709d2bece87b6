//! A minimal dense reverse-mode differentiation engine.
//!
//! Operations are recorded on a [`Tape`] in evaluation order, which is a
//! topological order of the computation; [`Tape::backward`] walks it once in
//! reverse. Ops are coarse (whole matrices, whole arc lists) so that the
//! bookkeeping cost is per batch rather than per scalar. Everything is `f64`.
//!
//! Every forward op checks its output for NaN/Inf and fails with
//! [`DiffError::NonFinite`] instead of letting it propagate.

mod optim;
mod tape;

pub use optim::{Adam, AdamConfig, PlateauConfig, PlateauSchedule};
pub use tape::{BatchNorm, Gradients, NormMode, Tape, Var};

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiffError {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: &'static str },
    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar loss")]
    NotScalar,
    #[error("{op}: needs at least 2 rows")]
    TooFewRows { op: &'static str },
}

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, DiffError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(DiffError::Shape {
                op: "tensor",
                detail: "data length differs from shape volume",
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            data: vec![0.0; shape.iter().product()],
            shape: shape.to_vec(),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, DiffError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// First value; the loss of a scalar tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Trailing dimension (1 for scalars).
    pub fn cols(&self) -> usize {
        if self.shape.len() < 2 {
            return 1;
        }
        self.shape[1..].iter().product()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

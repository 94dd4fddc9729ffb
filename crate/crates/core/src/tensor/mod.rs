//! Dense numeric substrate: tensors, layer descriptors, forward kernels with
//! FLOP counting, a reverse-mode gradient tape and a finite-difference checker.
//!
//! FLOP conventions used by every kernel:
//!
//! | primitive                 | FLOPs                         |
//! |---------------------------|-------------------------------|
//! | dense `in -> out`         | `2*in*out` (+ `out` with bias)|
//! | relu                      | `n`                           |
//! | softmax                   | `4n - 1`                      |
//! | sigmoid                   | `4n`                          |
//! | embedding lookup          | `0`                           |
//!
//! A multiply-accumulate is two FLOPs; exponentials, divisions, negations and
//! comparisons count one each.

mod gradcheck;
mod ops;
mod tape;

pub use gradcheck::{finite_diff_check, numeric_gradient, GradCheck, FD_ABS_FLOOR, FD_STEP};
pub use ops::{
    activation_forward, argmax, cross_entropy, dense_forward, embedding_lookup, sgd_step,
    sigmoid_scalar, soft_cross_entropy, CE_FLOOR,
};
pub use tape::{GradTape, Gradients, ValueId};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major array of `f64` with a shape. Values are always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor", into = "RawTensor")]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TryFrom<RawTensor> for Tensor {
    type Error = Error;

    fn try_from(raw: RawTensor) -> Result<Self> {
        Tensor::new(raw.shape, raw.data)
    }
}

impl From<Tensor> for RawTensor {
    fn from(t: Tensor) -> Self {
        RawTensor {
            shape: t.shape,
            data: t.data,
        }
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Domain(format!("shape {shape:?} must be non-empty with positive extents")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim("tensor", format!("{n} elements for shape {shape:?}"), data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor data".into()));
        }
        Ok(Tensor { shape, data })
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Domain("empty vector".into()));
        }
        Tensor::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Tensor::new(vec![1], vec![value])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        assert!(n > 0, "zeros: shape {shape:?} has no elements");
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    /// Builds a tensor whose data were produced by a kernel, checking finiteness.
    pub(crate) fn from_kernel(shape: Vec<usize>, data: Vec<f64>, what: &str) -> Result<Self> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(what.to_string()));
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_vector(&self) -> bool {
        self.shape.len() == 1
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Same shape, new data. Fails on a length mismatch or non-finite values.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Tensor::new(self.shape.clone(), data)
    }

    /// Largest absolute coordinate difference.
    pub fn linf_distance(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::dim("linf_distance", format!("{:?}", self.shape), format!("{:?}", other.shape)));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Dense,
    Relu,
    Softmax,
    Sigmoid,
    EmbeddingLookup,
}

/// Shape-level description of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    #[serde(default)]
    pub has_bias: bool,
}

impl LayerSpec {
    pub fn dense(in_dim: usize, out_dim: usize, has_bias: bool) -> Self {
        LayerSpec {
            kind: LayerKind::Dense,
            in_dim,
            out_dim,
            has_bias,
        }
    }

    pub fn relu(dim: usize) -> Self {
        Self::elementwise(LayerKind::Relu, dim)
    }

    pub fn softmax(dim: usize) -> Self {
        Self::elementwise(LayerKind::Softmax, dim)
    }

    pub fn sigmoid(dim: usize) -> Self {
        Self::elementwise(LayerKind::Sigmoid, dim)
    }

    /// `vocab` rows looked up into `dim`-wide vectors.
    pub fn embedding(vocab: usize, dim: usize) -> Self {
        LayerSpec {
            kind: LayerKind::EmbeddingLookup,
            in_dim: vocab,
            out_dim: dim,
            has_bias: false,
        }
    }

    fn elementwise(kind: LayerKind, dim: usize) -> Self {
        LayerSpec {
            kind,
            in_dim: dim,
            out_dim: dim,
            has_bias: false,
        }
    }

    pub fn validate(&self, context: &str) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::invalid(context, format!("{:?} layer needs positive dims", self.kind)));
        }
        match self.kind {
            LayerKind::Relu | LayerKind::Softmax | LayerKind::Sigmoid if self.in_dim != self.out_dim => Err(
                Error::invalid(context, format!("{:?} requires in_dim == out_dim", self.kind)),
            ),
            LayerKind::EmbeddingLookup if self.has_bias => {
                Err(Error::invalid(context, "embedding lookup has no bias"))
            }
            _ => Ok(()),
        }
    }
}

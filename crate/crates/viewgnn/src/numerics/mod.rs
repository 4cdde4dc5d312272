//! Dense 2-D `f64` tensors with reverse-mode automatic differentiation.
//!
//! The design splits values from gradients: a [`GradTensor`] is an immutable
//! matrix plus an optional handle onto the [`Tape`] that recorded it.
//! [`Tape::backward`] consumes the tape and returns a [`Gradients`] map from
//! recorded tensors to their `dLoss/dInput` buffers, so tensors themselves
//! stay freely shareable across threads.
//!
//! Every forward kernel here is deterministic with a fixed, row-independent
//! summation order. That is load-bearing: the sampled-neighborhood forward
//! must equal the full-graph forward bit-exactly whenever sampling covers
//! every neighbor, and repeated runs must reproduce metrics byte-for-byte.

mod kernels;
mod tape;

pub use tape::{Gradients, Tape};

use std::sync::Arc;

use ndarray::Array2;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

/// Identifies a tensor recorded on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct NodeRef {
    pub token: u64,
    pub slot: usize,
}

/// An immutable `f64` matrix, optionally attached to a differentiation tape.
///
/// Cloning is cheap (the value buffer is shared). Detached tensors take part
/// in tape ops as constants: no gradient flows to them.
#[derive(Clone)]
pub struct GradTensor {
    values: Arc<Array2<f64>>,
    node: Option<NodeRef>,
}

impl GradTensor {
    /// A constant (detached) tensor. The buffer is normalized to standard
    /// row-major layout so downstream kernels can assume contiguous rows.
    pub fn constant(values: Array2<f64>) -> Self {
        Self { values: Arc::new(standardize(values)), node: None }
    }

    /// Share an existing buffer without copying when it is already row-major.
    pub fn from_arc(values: Arc<Array2<f64>>) -> Self {
        if values.as_slice().is_some() {
            Self { values, node: None }
        } else {
            Self::constant(values.as_ref().clone())
        }
    }

    pub(crate) fn with_node(values: Arc<Array2<f64>>, node: Option<NodeRef>) -> Self {
        Self { values, node }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub(crate) fn values_arc(&self) -> Arc<Array2<f64>> {
        Arc::clone(&self.values)
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Stops gradient flow: the returned tensor shares the buffer but has no
    /// tape attachment. Used for the consistency-loss teacher.
    pub fn detach(&self) -> Self {
        Self { values: Arc::clone(&self.values), node: None }
    }

    pub fn is_attached(&self) -> bool {
        self.node.is_some()
    }

    pub(crate) fn node(&self) -> Option<NodeRef> {
        self.node
    }

    /// The single entry of a 1x1 tensor.
    pub fn item(&self) -> Result<f64> {
        if self.dim() != (1, 1) {
            return Err(Error::Shape(format!("item() needs a 1x1 tensor, got {:?}", self.dim())));
        }
        Ok(self.values[[0, 0]])
    }
}

impl std::fmt::Debug for GradTensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GradTensor")
            .field("dim", &self.dim())
            .field("attached", &self.is_attached())
            .finish()
    }
}

fn standardize(values: Array2<f64>) -> Array2<f64> {
    if values.as_slice().is_some() {
        values
    } else {
        values.as_standard_layout().into_owned()
    }
}

pub(crate) fn finite_check(op: &'static str, values: &Array2<f64>) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

/// Inverted-dropout mask: entries are `1/keep` with probability `keep`, else
/// `0`. The caller multiplies it in, so all randomness stays in seeded RNG
/// streams owned by the engine.
pub fn dropout_mask(
    rng: &mut ChaCha20Rng,
    rows: usize,
    cols: usize,
    rate: f64,
) -> Result<Array2<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must be in [0,1), got {rate}")));
    }
    let keep = 1.0 - rate;
    let inv = 1.0 / keep;
    let mut mask = Array2::zeros((rows, cols));
    for v in mask.iter_mut() {
        if rand::Rng::random::<f64>(rng) < keep {
            *v = inv;
        }
    }
    Ok(mask)
}

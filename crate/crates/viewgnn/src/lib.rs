//! Minibatch graph neural network training with neighborhood-view
//! self-ensembling and consistency regularization.
//!
//! The crate is organized bottom-up:
//!
//! * [`numerics`]: a small reverse-mode autodiff engine over dense `f64`
//!   matrices, with deterministic kernels so identical inputs produce
//!   bit-identical outputs.
//! * [`graphstore`]: CSR graphs, datasets (features, labels, splits), file
//!   formats, synthetic benchmark generation, and multi-source BFS.
//! * [`sampler`]: layer-wise neighborhood fanout sampling into reindexed
//!   block stacks, plus the node/edge dropping used on small graphs.
//! * [`models`]: GCN and GAT forward passes over block stacks, parameter
//!   initialization, and binary checkpoints.
//! * [`losses`]: temperature sharpening, row-wise KL, the multi-view
//!   consistency loss, confidence-masked cross-entropy, and distillation.
//! * [`engine`]: Adam, the training loop (transductive, inductive, and the
//!   small-graph node-dropping variant), self-ensembled prediction, the
//!   ensemble-by-views grid, and accuracy-by-distance analysis.

pub mod engine;
pub mod error;
pub mod graphstore;
pub mod losses;
pub mod models;
pub mod numerics;
pub mod rng;
pub mod sampler;
pub mod testing;

pub use error::{Error, Result};

//! GCN and GAT forward passes over sampled block stacks or full graphs,
//! producing per-node class logits.
//!
//! Parameters are plain `f64` matrices owned by [`Model`]. A training step
//! binds them onto a tape with [`Model::bind`], runs any number of forwards
//! against the shared leaves (supervised batch plus consistency views), and
//! reads per-parameter gradients back through those leaves. Forwards are
//! pure functions of `(params, blocks, features, masks)`, so two calls with
//! identical inputs produce bit-identical outputs.

mod checkpoint;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::ProbabilityMatrix;
use crate::numerics::{GradTensor, Tape};
use crate::sampler::BlockStack;

/// Message-passing architecture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Gcn,
    Gat,
}

/// Shape of the network. `hidden_dim` is the width of every hidden
/// representation for both architectures; GAT splits it evenly across that
/// layer's heads (concatenated back after attention), so `hidden_dim` must
/// be divisible by the head count of every hidden layer. The final GAT
/// layer averages heads instead and is exempt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    /// Per-layer head counts; required for GAT, rejected for GCN.
    #[serde(default)]
    pub heads: Option<Vec<usize>>,
    /// Dropout on hidden representations (never on attention weights).
    #[serde(default)]
    pub dropout_rate: f64,
    /// Negative slope of the attention nonlinearity.
    #[serde(default = "default_leaky_slope")]
    pub leaky_slope: f64,
}

fn default_leaky_slope() -> f64 {
    0.2
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::Config("num_layers must be >= 1".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be >= 1".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must be in [0,1), got {}",
                self.dropout_rate
            )));
        }
        if !self.leaky_slope.is_finite() || !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::Config(format!(
                "leaky_slope must be in [0,1), got {}",
                self.leaky_slope
            )));
        }
        match (self.arch, &self.heads) {
            (Arch::Gcn, Some(_)) => {
                Err(Error::Config("heads only apply to the gat architecture".into()))
            }
            (Arch::Gat, None) => Err(Error::Config("gat requires per-layer heads".into())),
            (Arch::Gat, Some(heads)) => {
                if heads.len() != self.num_layers {
                    return Err(Error::Config(format!(
                        "expected {} head counts, got {}",
                        self.num_layers,
                        heads.len()
                    )));
                }
                if heads.iter().any(|&h| h == 0) {
                    return Err(Error::Config("every layer needs at least one head".into()));
                }
                for (l, &h) in heads.iter().enumerate() {
                    // Hidden layers concatenate heads back to hidden_dim.
                    if l + 1 < self.num_layers && self.hidden_dim % h != 0 {
                        return Err(Error::Config(format!(
                            "hidden_dim {} is not divisible by layer {l}'s {h} heads",
                            self.hidden_dim
                        )));
                    }
                }
                Ok(())
            }
            (Arch::Gcn, None) => Ok(()),
        }
    }

    /// `(d_in, d_out)` of each layer's node representations.
    fn layer_dims(&self, input_dim: usize) -> Vec<(usize, usize)> {
        (0..self.num_layers)
            .map(|l| {
                let d_in = if l == 0 { input_dim } else { self.hidden_dim };
                let d_out =
                    if l + 1 == self.num_layers { self.num_classes } else { self.hidden_dim };
                (d_in, d_out)
            })
            .collect()
    }

    /// Per-head output width of a GAT layer.
    fn head_dim(&self, layer: usize) -> usize {
        let heads = self.heads.as_ref().expect("validated gat config")[layer];
        if layer + 1 == self.num_layers {
            self.num_classes
        } else {
            self.hidden_dim / heads
        }
    }
}

/// One GCN layer: `h' = act(mean-aggregate(h) W + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnLayer {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcnParams {
    pub layers: Vec<GcnLayer>,
}

/// One attention head: projection plus the two attention vectors scoring
/// source and destination sides.
#[derive(Clone, Debug, PartialEq)]
pub struct GatHead {
    pub weight: Array2<f64>,
    pub a_src: Array2<f64>,
    pub a_dst: Array2<f64>,
}

/// One GAT layer: heads share a single bias applied after merging.
#[derive(Clone, Debug, PartialEq)]
pub struct GatLayer {
    pub heads: Vec<GatHead>,
    pub bias: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GatParams {
    pub layers: Vec<GatLayer>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelParams {
    Gcn(GcnParams),
    Gat(GatParams),
}

/// A configured architecture with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    cfg: ModelConfig,
    input_dim: usize,
    params: ModelParams,
}

/// Tape leaves for every parameter, in declaration order (the same order as
/// [`Model::params_flat`]). Lets gradients from several forwards on one
/// tape accumulate per parameter.
pub struct BoundParams {
    leaves: Vec<GradTensor>,
}

impl BoundParams {
    pub fn leaves(&self) -> &[GradTensor] {
        &self.leaves
    }

    /// Wraps externally built leaves; order and shapes must match
    /// `params_flat`. Used by gradient checks that perturb parameters.
    pub fn from_leaves(leaves: Vec<GradTensor>) -> Self {
        Self { leaves }
    }
}

impl Model {
    /// Validates configuration against parameter shapes.
    pub fn new(cfg: ModelConfig, input_dim: usize, params: ModelParams) -> Result<Model> {
        cfg.validate()?;
        if input_dim == 0 {
            return Err(Error::Config("input_dim must be >= 1".into()));
        }
        let dims = cfg.layer_dims(input_dim);
        match (&cfg.arch, &params) {
            (Arch::Gcn, ModelParams::Gcn(p)) => {
                if p.layers.len() != cfg.num_layers {
                    return Err(Error::Shape(format!(
                        "expected {} gcn layers, got {}",
                        cfg.num_layers,
                        p.layers.len()
                    )));
                }
                for (l, (layer, &(d_in, d_out))) in p.layers.iter().zip(&dims).enumerate() {
                    expect_shape("weight", l, &layer.weight, (d_in, d_out))?;
                    expect_shape("bias", l, &layer.bias, (1, d_out))?;
                }
            }
            (Arch::Gat, ModelParams::Gat(p)) => {
                if p.layers.len() != cfg.num_layers {
                    return Err(Error::Shape(format!(
                        "expected {} gat layers, got {}",
                        cfg.num_layers,
                        p.layers.len()
                    )));
                }
                let head_counts = cfg.heads.as_ref().expect("validated gat config");
                for (l, (layer, &(d_in, _))) in p.layers.iter().zip(&dims).enumerate() {
                    if layer.heads.len() != head_counts[l] {
                        return Err(Error::Shape(format!(
                            "layer {l}: expected {} heads, got {}",
                            head_counts[l],
                            layer.heads.len()
                        )));
                    }
                    let d_h = cfg.head_dim(l);
                    for head in &layer.heads {
                        expect_shape("weight", l, &head.weight, (d_in, d_h))?;
                        expect_shape("a_src", l, &head.a_src, (d_h, 1))?;
                        expect_shape("a_dst", l, &head.a_dst, (d_h, 1))?;
                    }
                    let bias_cols =
                        if l + 1 == cfg.num_layers { d_h } else { d_h * head_counts[l] };
                    expect_shape("bias", l, &layer.bias, (1, bias_cols))?;
                }
            }
            _ => return Err(Error::Config("architecture and parameters disagree".into())),
        }
        let model = Model { cfg, input_dim, params };
        for p in model.params_flat() {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { op: "model parameters" });
            }
        }
        Ok(model)
    }

    /// Glorot-uniform weights and attention vectors, zero biases. Draws in
    /// declaration order, so initialization is reproducible from the RNG
    /// stream alone.
    pub fn init(cfg: ModelConfig, input_dim: usize, rng: &mut ChaCha20Rng) -> Result<Model> {
        cfg.validate()?;
        if input_dim == 0 {
            return Err(Error::Config("input_dim must be >= 1".into()));
        }
        let dims = cfg.layer_dims(input_dim);
        let params = match cfg.arch {
            Arch::Gcn => ModelParams::Gcn(GcnParams {
                layers: dims
                    .iter()
                    .map(|&(d_in, d_out)| GcnLayer {
                        weight: glorot(rng, d_in, d_out),
                        bias: Array2::zeros((1, d_out)),
                    })
                    .collect(),
            }),
            Arch::Gat => {
                let head_counts = cfg.heads.clone().expect("validated gat config");
                let layers = dims
                    .iter()
                    .enumerate()
                    .map(|(l, &(d_in, _))| {
                        let d_h = cfg.head_dim(l);
                        let heads = (0..head_counts[l])
                            .map(|_| GatHead {
                                weight: glorot(rng, d_in, d_h),
                                a_src: glorot(rng, d_h, 1),
                                a_dst: glorot(rng, d_h, 1),
                            })
                            .collect();
                        let bias_cols =
                            if l + 1 == cfg.num_layers { d_h } else { d_h * head_counts[l] };
                        GatLayer { heads, bias: Array2::zeros((1, bias_cols)) }
                    })
                    .collect();
                ModelParams::Gat(GatParams { layers })
            }
        };
        Model::new(cfg, input_dim, params)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// All parameter tensors in declaration order: GCN `[W, b]` per layer;
    /// GAT `[W, a_src, a_dst]` per head then the layer bias.
    pub fn params_flat(&self) -> Vec<&Array2<f64>> {
        let mut out = Vec::new();
        match &self.params {
            ModelParams::Gcn(p) => {
                for layer in &p.layers {
                    out.push(&layer.weight);
                    out.push(&layer.bias);
                }
            }
            ModelParams::Gat(p) => {
                for layer in &p.layers {
                    for head in &layer.heads {
                        out.push(&head.weight);
                        out.push(&head.a_src);
                        out.push(&head.a_dst);
                    }
                    out.push(&layer.bias);
                }
            }
        }
        out
    }

    /// Mutable view in the same order as [`Model::params_flat`].
    pub fn params_flat_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = Vec::new();
        match &mut self.params {
            ModelParams::Gcn(p) => {
                for layer in &mut p.layers {
                    out.push(&mut layer.weight);
                    out.push(&mut layer.bias);
                }
            }
            ModelParams::Gat(p) => {
                for layer in &mut p.layers {
                    for head in &mut layer.heads {
                        out.push(&mut head.weight);
                        out.push(&mut head.a_src);
                        out.push(&mut head.a_dst);
                    }
                    out.push(&mut layer.bias);
                }
            }
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.params_flat().iter().map(|p| p.len()).sum()
    }

    /// Registers every parameter as a tape leaf.
    pub fn bind(&self, tape: &Tape) -> Result<BoundParams> {
        let leaves = self
            .params_flat()
            .into_iter()
            .map(|p| tape.leaf(p.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundParams { leaves })
    }

    /// Shapes of the hidden-layer dropout masks for a given block stack.
    pub fn dropout_mask_shapes(&self, blocks: &BlockStack) -> Vec<(usize, usize)> {
        blocks.blocks()[..blocks.num_layers().saturating_sub(1)]
            .iter()
            .map(|b| (b.num_dst(), self.cfg.hidden_dim))
            .collect()
    }

    /// Runs the architecture over `blocks`, reading parameters from
    /// `bound`. `features` is indexed by global node id and must cover the
    /// stack's input nodes. `masks`, when given, holds one multiplicative
    /// mask per hidden layer (see [`crate::numerics::dropout_mask`]).
    pub fn forward(
        &self,
        tape: &Tape,
        bound: &BoundParams,
        blocks: &BlockStack,
        features: &GradTensor,
        masks: Option<&[Array2<f64>]>,
    ) -> Result<GradTensor> {
        if blocks.num_layers() != self.cfg.num_layers {
            return Err(Error::Shape(format!(
                "{}-layer model got a {}-block stack",
                self.cfg.num_layers,
                blocks.num_layers()
            )));
        }
        if features.dim().1 != self.input_dim {
            return Err(Error::Shape(format!(
                "features have {} columns, model expects {}",
                features.dim().1,
                self.input_dim
            )));
        }
        let expected_leaves = self.params_flat().len();
        if bound.leaves.len() != expected_leaves {
            return Err(Error::Shape(format!(
                "expected {expected_leaves} bound parameters, got {}",
                bound.leaves.len()
            )));
        }
        if let Some(masks) = masks {
            if masks.len() + 1 != self.cfg.num_layers {
                return Err(Error::Config(format!(
                    "expected {} dropout masks, got {}",
                    self.cfg.num_layers - 1,
                    masks.len()
                )));
            }
            for (mask, shape) in masks.iter().zip(self.dropout_mask_shapes(blocks)) {
                if mask.dim() != shape {
                    return Err(Error::Shape(format!(
                        "dropout mask is {:?}, expected {:?}",
                        mask.dim(),
                        shape
                    )));
                }
            }
        }

        let mut h = tape.gather_rows(features, blocks.input_nodes())?;
        let mut leaves = bound.leaves.iter();
        for (l, block) in blocks.blocks().iter().enumerate() {
            let last = l + 1 == self.cfg.num_layers;
            h = match self.cfg.arch {
                Arch::Gcn => {
                    let w = leaves.next().expect("leaf count validated");
                    let b = leaves.next().expect("leaf count validated");
                    let msg = tape.gather_rows(&h, block.edge_src_indices())?;
                    let agg = tape.segment_mean(&msg, block.edge_dst_indices(), block.num_dst())?;
                    let pre = tape.add_bias(&tape.matmul(&agg, w)?, b)?;
                    if last {
                        pre
                    } else {
                        tape.relu(&pre)?
                    }
                }
                Arch::Gat => {
                    let head_count = self.cfg.heads.as_ref().expect("validated gat config")[l];
                    let mut head_outs = Vec::with_capacity(head_count);
                    for _ in 0..head_count {
                        let w = leaves.next().expect("leaf count validated");
                        let a_src = leaves.next().expect("leaf count validated");
                        let a_dst = leaves.next().expect("leaf count validated");
                        head_outs.push(self.attention_head(tape, block, &h, w, a_src, a_dst)?);
                    }
                    let b = leaves.next().expect("leaf count validated");
                    if last {
                        // Output layer averages heads into the logits.
                        let mut acc = head_outs[0].clone();
                        for part in &head_outs[1..] {
                            acc = tape.add(&acc, part)?;
                        }
                        let mean = tape.scale(&acc, 1.0 / head_count as f64)?;
                        tape.add_bias(&mean, b)?
                    } else {
                        let cat = tape.concat_cols(&head_outs)?;
                        tape.elu(&tape.add_bias(&cat, b)?)?
                    }
                }
            };
            if !last {
                if let Some(masks) = masks {
                    h = tape.multiply(&h, &GradTensor::constant(masks[l].clone()))?;
                }
            }
        }
        Ok(h)
    }

    /// One attention head over a block: scores every edge with
    /// `LeakyReLU(a_src . W h_u + a_dst . W h_v)`, normalizes per
    /// destination, and sums attention-weighted projected sources.
    fn attention_head(
        &self,
        tape: &Tape,
        block: &crate::sampler::Block,
        h: &GradTensor,
        w: &GradTensor,
        a_src: &GradTensor,
        a_dst: &GradTensor,
    ) -> Result<GradTensor> {
        let src_idx = block.edge_src_indices();
        let dst_idx = block.edge_dst_indices();
        let k = block.num_dst();

        let z = tape.matmul(h, w)?;
        let s_src = tape.matmul(&z, a_src)?;
        let s_dst = tape.matmul(&z, a_dst)?;
        // Destinations are a prefix of the sources, so a destination's row
        // in z is its destination index.
        let e_raw =
            tape.add(&tape.gather_rows(&s_src, src_idx)?, &tape.gather_rows(&s_dst, dst_idx)?)?;
        let e = tape.leaky_relu(&e_raw, self.cfg.leaky_slope)?;

        // Stabilized segment softmax: subtracting the detached per-segment
        // max leaves the distribution (and its gradient) unchanged. Every
        // segment holds its self-edge, so no max is -inf and denominators
        // are at least e^0.
        let mut seg_max = Array2::from_elem((k, 1), f64::NEG_INFINITY);
        for (i, &d) in dst_idx.iter().enumerate() {
            seg_max[[d, 0]] = seg_max[[d, 0]].max(e.values()[[i, 0]]);
        }
        let shifted = tape.sub(&e, &tape.gather_rows(&GradTensor::constant(seg_max), dst_idx)?)?;
        let ex = tape.exp(&shifted)?;
        let denom = tape.segment_sum(&ex, dst_idx, k)?;
        let inv = tape.pow(&tape.gather_rows(&denom, dst_idx)?, -1.0)?;
        let alpha = tape.multiply(&ex, &inv)?;

        let msg = tape.mul_col(&tape.gather_rows(&z, src_idx)?, &alpha)?;
        tape.segment_sum(&msg, dst_idx, k)
    }

    /// Convenience inference pass: constant parameters, no dropout,
    /// detached output values.
    pub fn forward_detached(
        &self,
        blocks: &BlockStack,
        features: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        let tape = Tape::new();
        let bound = BoundParams {
            leaves: self
                .params_flat()
                .into_iter()
                .map(|p| GradTensor::constant(p.clone()))
                .collect(),
        };
        let x = GradTensor::constant(features.clone());
        let logits = self.forward(&tape, &bound, blocks, &x, None)?;
        Ok(logits.values().clone())
    }
}

fn expect_shape(what: &str, layer: usize, got: &Array2<f64>, want: (usize, usize)) -> Result<()> {
    if got.dim() != want {
        return Err(Error::Shape(format!(
            "layer {layer} {what}: expected {want:?}, got {:?}",
            got.dim()
        )));
    }
    Ok(())
}

fn glorot(rng: &mut ChaCha20Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || (rng.random::<f64>() * 2.0 - 1.0) * limit)
}

/// Row-softmax of logits, detached from any tape: the model's predictive
/// distribution.
pub fn predict_proba(logits: &GradTensor) -> Result<ProbabilityMatrix> {
    let tape = Tape::new();
    ProbabilityMatrix::from_logits(&tape, &logits.detach())
}

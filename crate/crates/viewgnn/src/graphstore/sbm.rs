//! Planted-partition benchmark generator.
//!
//! Produces homophilous graphs at desk scale: `blocks` groups of
//! `nodes_per_block` nodes, in-block edge probability `p_in`, cross-block
//! `p_out`, labels = block ids, features = a one-hot block mean plus
//! Gaussian noise. The split is 10%/10%/80% train/val/test, stratified by
//! block. Self-loops are added before returning, like every loader here.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{build_csr, Dataset, Split};
use crate::error::{Error, Result};
use crate::rng::substream_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmConfig {
    pub blocks: usize,
    pub nodes_per_block: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Standard deviation of the Gaussian feature noise.
    pub feature_noise: f64,
}

/// Standard-normal draw via Box–Muller over the seeded stream.
fn gaussian(rng: &mut ChaCha20Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn generate_sbm(cfg: &SbmConfig, seed: u64) -> Result<Dataset> {
    for (name, p) in [("p_in", cfg.p_in), ("p_out", cfg.p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("{name} must be in [0,1], got {p}")));
        }
    }
    let (k, m) = (cfg.blocks, cfg.nodes_per_block);
    let n = k * m;
    if n < 2 {
        return Err(Error::Config("an SBM needs at least 2 nodes".into()));
    }
    if cfg.feature_dim == 0 {
        return Err(Error::Config("feature_dim must be at least 1".into()));
    }
    if cfg.feature_noise < 0.0 {
        return Err(Error::Config("feature_noise must be non-negative".into()));
    }
    let block_of = |v: usize| v / m;

    let mut edge_rng = substream_rng(seed, "sbm-edges", &[]);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if block_of(u) == block_of(v) { cfg.p_in } else { cfg.p_out };
            if edge_rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let graph = build_csr(n, &edges, true)?.with_self_loops();

    let mut feat_rng = substream_rng(seed, "sbm-features", &[]);
    let mut features = Array2::zeros((n, cfg.feature_dim));
    for v in 0..n {
        let hot = block_of(v) % cfg.feature_dim;
        for j in 0..cfg.feature_dim {
            let mean = if j == hot { 1.0 } else { 0.0 };
            features[[v, j]] = mean + cfg.feature_noise * gaussian(&mut feat_rng);
        }
    }

    let labels: Vec<i64> = (0..n).map(|v| block_of(v) as i64).collect();

    let mut split_rng = substream_rng(seed, "sbm-split", &[]);
    let mut split = Split::default();
    for b in 0..k {
        let mut ids: Vec<usize> = (b * m..(b + 1) * m).collect();
        ids.shuffle(&mut split_rng);
        let n_train = ((0.1 * m as f64).round() as usize).max(1).min(m);
        let n_val = ((0.1 * m as f64).round() as usize).max(1).min(m - n_train);
        split.train.extend(&ids[..n_train]);
        split.val.extend(&ids[n_train..n_train + n_val]);
        split.test.extend(&ids[n_train + n_val..]);
    }

    Dataset::new(graph, features, labels, k, split)
}

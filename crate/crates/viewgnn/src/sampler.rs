//! Stochastic neighborhood expansion for minibatch message passing.
//!
//! [`sample_blocks`] turns a target batch into a stack of reindexed blocks,
//! drawing at most `fanout` distinct neighbors per node per layer (without
//! replacement) and always including the self-edge. Node dropping and edge
//! dropping implement the augmentations used when the whole graph fits in a
//! single forward pass.
//!
//! Determinism contract: every function here is a pure function of its
//! inputs including the RNG state, and per-destination edge lists are sorted
//! by global source id. The sort makes a full-coverage sample reproduce the
//! full-graph edge order exactly, which in turn makes the sampled forward
//! pass bit-identical to the full-graph one (see the models module tests).

use std::collections::HashMap;

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphstore::{build_csr, CsrGraph};

/// Per-layer neighbor cap. `All` disables sampling for that layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "FanoutRepr", into = "FanoutRepr")]
pub enum Fanout {
    All,
    Limit(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum FanoutRepr {
    Count(usize),
    Name(String),
}

impl TryFrom<FanoutRepr> for Fanout {
    type Error = String;
    fn try_from(r: FanoutRepr) -> std::result::Result<Self, String> {
        match r {
            FanoutRepr::Count(0) => Err("fanout must be at least 1".into()),
            FanoutRepr::Count(k) => Ok(Fanout::Limit(k)),
            FanoutRepr::Name(s) if s == "all" => Ok(Fanout::All),
            FanoutRepr::Name(s) => Err(format!("fanout must be a count or \"all\", got {s:?}")),
        }
    }
}

impl From<Fanout> for FanoutRepr {
    fn from(f: Fanout) -> Self {
        match f {
            Fanout::All => FanoutRepr::Name("all".into()),
            Fanout::Limit(k) => FanoutRepr::Count(k),
        }
    }
}

/// Per-layer fanouts, outermost layer (the one next to the target batch)
/// first. Length equals the model depth.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FanoutSpec(pub Vec<Fanout>);

impl FanoutSpec {
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        if counts.iter().any(|&k| k == 0) {
            return Err(Error::Config("fanout must be at least 1".into()));
        }
        Ok(Self(counts.iter().map(|&k| Fanout::Limit(k)).collect()))
    }

    pub fn all(num_layers: usize) -> Self {
        Self(vec![Fanout::All; num_layers])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One message-passing layer's bipartite connectivity.
///
/// `src_nodes` starts with `dst_nodes` as a prefix (every receiver also
/// sends to itself). Edges are `(src_index, dst_index)` pairs into those
/// lists, grouped by destination in batch order and sorted by global source
/// id within each destination.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    dst_nodes: Vec<usize>,
    src_nodes: Vec<usize>,
    edge_src: Vec<usize>,
    edge_dst: Vec<usize>,
}

impl Block {
    /// Assembles a block from raw parts without checking the ordering
    /// invariants; for tests that need degenerate edge orders.
    #[cfg(test)]
    pub(crate) fn from_parts(
        dst_nodes: Vec<usize>,
        src_nodes: Vec<usize>,
        edge_src: Vec<usize>,
        edge_dst: Vec<usize>,
    ) -> Self {
        Self { dst_nodes, src_nodes, edge_src, edge_dst }
    }

    pub fn dst_nodes(&self) -> &[usize] {
        &self.dst_nodes
    }

    pub fn src_nodes(&self) -> &[usize] {
        &self.src_nodes
    }

    pub fn num_dst(&self) -> usize {
        self.dst_nodes.len()
    }

    pub fn num_src(&self) -> usize {
        self.src_nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_src.len()
    }

    /// Per-edge source row indices into `src_nodes`.
    pub fn edge_src_indices(&self) -> &[usize] {
        &self.edge_src
    }

    /// Per-edge destination row indices into `dst_nodes` (the segment ids).
    pub fn edge_dst_indices(&self) -> &[usize] {
        &self.edge_dst
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edge_src.iter().copied().zip(self.edge_dst.iter().copied())
    }
}

/// Blocks in forward order: `blocks()[0]` is applied first (its sources are
/// raw feature rows); the last block's destinations are the target batch.
/// Adjacent blocks share their node lists: `blocks[i].dst_nodes ==
/// blocks[i+1].src_nodes`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockStack {
    blocks: Vec<Block>,
}

impl BlockStack {
    #[cfg(test)]
    pub(crate) fn from_blocks(blocks: Vec<Block>) -> Self {
        Self { blocks }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn num_layers(&self) -> usize {
        self.blocks.len()
    }

    /// Global ids whose feature rows feed the first layer.
    pub fn input_nodes(&self) -> &[usize] {
        self.blocks[0].src_nodes()
    }

    /// The target batch (last block's destinations).
    pub fn targets(&self) -> &[usize] {
        self.blocks[self.blocks.len() - 1].dst_nodes()
    }
}

/// Samples an L-layer neighborhood expansion of `targets`.
///
/// Per destination and layer: at most `fanout` distinct non-self neighbors,
/// uniform without replacement, plus the self-edge regardless of whether the
/// graph holds one. Deterministic given `(g, targets, fanouts, rng state)`.
pub fn sample_blocks(
    g: &CsrGraph,
    targets: &[usize],
    fanouts: &FanoutSpec,
    rng: &mut ChaCha20Rng,
) -> Result<BlockStack> {
    if targets.is_empty() {
        return Err(Error::Config("sample_blocks needs a non-empty target batch".into()));
    }
    if fanouts.is_empty() {
        return Err(Error::Config("sample_blocks needs at least one layer".into()));
    }
    if let Some(&bad) = targets.iter().find(|&&v| v >= g.num_nodes()) {
        return Err(Error::Index(format!("target {bad} >= {} nodes", g.num_nodes())));
    }
    let mut outer_to_inner = Vec::with_capacity(fanouts.len());
    let mut dst_nodes: Vec<usize> = targets.to_vec();
    for &fanout in &fanouts.0 {
        let mut src_nodes = dst_nodes.clone();
        let mut src_index: HashMap<usize, usize> =
            src_nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut edge_src = Vec::new();
        let mut edge_dst = Vec::new();
        let mut picked: Vec<usize> = Vec::new();
        for (dst_i, &v) in dst_nodes.iter().enumerate() {
            let pool: Vec<usize> = g.neighbors(v).iter().copied().filter(|&u| u != v).collect();
            picked.clear();
            match fanout {
                Fanout::All => picked.extend_from_slice(&pool),
                Fanout::Limit(k) if pool.len() <= k => picked.extend_from_slice(&pool),
                Fanout::Limit(k) => {
                    picked.extend(
                        rand::seq::index::sample(rng, pool.len(), k).iter().map(|i| pool[i]),
                    );
                    picked.sort_unstable();
                }
            }
            // Self-edge first in ascending-id position: merge v into the
            // sorted picked list so edge order matches full-graph CSR order.
            let at = picked.binary_search(&v).unwrap_err();
            picked.insert(at, v);
            for &u in picked.iter() {
                let idx = *src_index.entry(u).or_insert_with(|| {
                    src_nodes.push(u);
                    src_nodes.len() - 1
                });
                edge_src.push(idx);
                edge_dst.push(dst_i);
            }
        }
        outer_to_inner.push(Block {
            dst_nodes: std::mem::take(&mut dst_nodes),
            src_nodes: src_nodes.clone(),
            edge_src,
            edge_dst,
        });
        dst_nodes = src_nodes;
    }
    outer_to_inner.reverse();
    Ok(BlockStack { blocks: outer_to_inner })
}

/// The exact L-hop expansion (no sampling). Used for full-graph forwards.
pub fn full_expansion(g: &CsrGraph, targets: &[usize], num_layers: usize) -> Result<BlockStack> {
    // Fanout::All never touches the RNG; any seed works.
    let mut rng = crate::rng::substream_rng(0, "full-expansion", &[]);
    sample_blocks(g, targets, &FanoutSpec::all(num_layers), &mut rng)
}

/// Independently removes each non-protected node with probability
/// `drop_rate`: all incident edges go away (self-loop included) while ids
/// stay stable. Returns the thinned graph and the dropped mask so callers
/// can zero the corresponding feature rows.
pub fn drop_nodes(
    g: &CsrGraph,
    drop_rate: f64,
    protected: &[usize],
    rng: &mut ChaCha20Rng,
) -> Result<(CsrGraph, Vec<bool>)> {
    if !(0.0..1.0).contains(&drop_rate) {
        return Err(Error::Config(format!("drop_rate must be in [0,1), got {drop_rate}")));
    }
    let mut is_protected = vec![false; g.num_nodes()];
    for &v in protected {
        if v >= g.num_nodes() {
            return Err(Error::Index(format!("protected node {v} >= {} nodes", g.num_nodes())));
        }
        is_protected[v] = true;
    }
    // One draw per node regardless of protection, so the stream alignment
    // does not depend on the protected set's size.
    let mut dropped = vec![false; g.num_nodes()];
    for v in 0..g.num_nodes() {
        let coin = rand::Rng::random::<f64>(rng) < drop_rate;
        dropped[v] = coin && !is_protected[v];
    }
    let edges: Vec<(usize, usize)> =
        g.undirected_edges().into_iter().filter(|&(u, v)| !dropped[u] && !dropped[v]).collect();
    Ok((build_csr(g.num_nodes(), &edges, true)?, dropped))
}

/// Independently removes each undirected non-self edge with probability
/// `drop_rate` (both directions together); self-loops always survive.
pub fn drop_edges(g: &CsrGraph, drop_rate: f64, rng: &mut ChaCha20Rng) -> Result<CsrGraph> {
    if !(0.0..1.0).contains(&drop_rate) {
        return Err(Error::Config(format!("drop_rate must be in [0,1), got {drop_rate}")));
    }
    let edges: Vec<(usize, usize)> = g
        .undirected_edges()
        .into_iter()
        .filter(|&(u, v)| u == v || rand::Rng::random::<f64>(rng) >= drop_rate)
        .collect();
    build_csr(g.num_nodes(), &edges, true)
}

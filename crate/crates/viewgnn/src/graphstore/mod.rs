//! Immutable graph storage and dataset plumbing.
//!
//! Graphs are undirected CSR with sorted, deduplicated adjacency lists.
//! Self-loops are added once at load/generation time (every node adjacent to
//! itself) so that mean aggregation over a neighborhood always includes the
//! node's own representation.

mod bfs;
mod io;
mod sbm;

pub use bfs::multi_source_bfs;
pub use io::{
    load_dataset, read_edge_list, read_features, read_labels, read_split, save_dataset,
    write_edge_list, write_features, write_labels, write_split, DatasetPaths, EDGES_FILE,
    FEATURES_FILE, LABELS_FILE, SPLIT_FILE,
};
pub use sbm::{generate_sbm, SbmConfig};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream_rng;

/// Serialized label value meaning "no label".
pub const UNLABELED: i64 = -1;

/// Compressed sparse row adjacency. Neighbor lists are sorted ascending and
/// duplicate-free; undirected graphs store both directions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsrGraph {
    num_nodes: usize,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl CsrGraph {
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_directed_edges(&self) -> usize {
        self.neighbors.len()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn max_degree(&self) -> usize {
        (0..self.num_nodes).map(|v| self.degree(v)).max().unwrap_or(0)
    }

    /// All directed (src, dst) pairs in CSR order.
    pub fn directed_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes).flat_map(move |u| self.neighbors(u).iter().map(move |&v| (u, v)))
    }

    /// Unordered unique edges as (min, max) pairs, self-loops included.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        self.directed_edges().filter(|&(u, v)| u <= v).collect()
    }

    /// Returns the same graph with a self-loop at every node. Idempotent.
    pub fn with_self_loops(&self) -> CsrGraph {
        let mut edges = self.undirected_edges();
        edges.extend((0..self.num_nodes).map(|v| (v, v)));
        build_csr(self.num_nodes, &edges, true).expect("ids already validated")
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }
}

/// Builds a CSR graph from an edge list, deduplicating and sorting.
/// With `undirected`, both directions are inserted. Self-loops are kept as
/// given (use [`CsrGraph::with_self_loops`] to add them).
pub fn build_csr(num_nodes: usize, edges: &[(usize, usize)], undirected: bool) -> Result<CsrGraph> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
    for &(u, v) in edges {
        if u >= num_nodes || v >= num_nodes {
            return Err(Error::Index(format!("edge ({u},{v}) exceeds {num_nodes} nodes")));
        }
        adj[u].push(v);
        if undirected && u != v {
            adj[v].push(u);
        }
    }
    let mut offsets = Vec::with_capacity(num_nodes + 1);
    offsets.push(0);
    let mut neighbors = Vec::new();
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
        neighbors.extend_from_slice(list);
        offsets.push(neighbors.len());
    }
    Ok(CsrGraph { num_nodes, offsets, neighbors })
}

/// Train/val/test node-id sets, stored sorted ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Sorts each part and checks pairwise disjointness and id range.
    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        let mut seen = vec![false; num_nodes];
        for (name, part) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for &v in part {
                if v >= num_nodes {
                    return Err(Error::Index(format!("split {name} node {v} >= {num_nodes}")));
                }
                if seen[v] {
                    return Err(Error::Config(format!("node {v} appears in two split parts")));
                }
                seen[v] = true;
            }
        }
        Ok(())
    }

    fn sorted(mut self) -> Self {
        self.train.sort_unstable();
        self.val.sort_unstable();
        self.test.sort_unstable();
        self
    }
}

/// A graph with node features, labels, class count, and split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub graph: CsrGraph,
    pub features: Array2<f64>,
    /// Per-node class index, or [`UNLABELED`].
    pub labels: Vec<i64>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        graph: CsrGraph,
        features: Array2<f64>,
        labels: Vec<i64>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        let n = graph.num_nodes();
        if features.nrows() != n {
            return Err(Error::Shape(format!("{} feature rows for {n} nodes", features.nrows())));
        }
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} nodes", labels.len())));
        }
        if num_classes < 1 {
            return Err(Error::Config("num_classes must be at least 1".into()));
        }
        for (v, &l) in labels.iter().enumerate() {
            if l != UNLABELED && !(0..num_classes as i64).contains(&l) {
                return Err(Error::Config(format!(
                    "label {l} of node {v} outside [0,{num_classes})"
                )));
            }
        }
        let split = split.sorted();
        split.validate(n)?;
        for (name, part) in [("train", &split.train), ("val", &split.val)] {
            if let Some(&v) = part.iter().find(|&&v| labels[v] == UNLABELED) {
                return Err(Error::Config(format!("{name} node {v} has no label")));
            }
        }
        Ok(Self { graph, features, labels, num_classes, split })
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn label_of(&self, v: usize) -> Option<usize> {
        match self.labels[v] {
            UNLABELED => None,
            l => Some(l as usize),
        }
    }
}

/// A dataset re-indexed to a node subset, with the original ids retained.
#[derive(Clone, Debug)]
pub struct InducedSubgraph {
    pub dataset: Dataset,
    /// `original_ids[new_id] = old_id`, ascending.
    pub original_ids: Vec<usize>,
}

/// Restricts a dataset to its train nodes and the edges among them, as used
/// by inductive training. New ids follow ascending original-id order; the
/// induced split marks every node as train.
pub fn induce_train_subgraph(ds: &Dataset) -> Result<InducedSubgraph> {
    if ds.split.train.is_empty() {
        return Err(Error::Config("cannot induce a subgraph from an empty train set".into()));
    }
    let original_ids = ds.split.train.clone();
    let mut new_id = vec![usize::MAX; ds.num_nodes()];
    for (new, &old) in original_ids.iter().enumerate() {
        new_id[old] = new;
    }
    let mut edges = Vec::new();
    for (new_u, &old_u) in original_ids.iter().enumerate() {
        for &old_v in ds.graph.neighbors(old_u) {
            let new_v = new_id[old_v];
            if new_v != usize::MAX && new_u <= new_v {
                edges.push((new_u, new_v));
            }
        }
    }
    let graph = build_csr(original_ids.len(), &edges, true)?;
    let mut features = Array2::zeros((original_ids.len(), ds.feature_dim()));
    let mut labels = Vec::with_capacity(original_ids.len());
    for (new, &old) in original_ids.iter().enumerate() {
        features.row_mut(new).assign(&ds.features.row(old));
        labels.push(ds.labels[old]);
    }
    let split =
        Split { train: (0..original_ids.len()).collect(), val: Vec::new(), test: Vec::new() };
    let dataset = Dataset::new(graph, features, labels, ds.num_classes, split)?;
    Ok(InducedSubgraph { dataset, original_ids })
}

/// Keeps a uniform random `round(keep_fraction * |train|)` subset of the
/// train split; val/test untouched. Deterministic per seed.
pub fn subsample_labels(ds: &Dataset, keep_fraction: f64, seed: u64) -> Result<Dataset> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::Config(format!("keep_fraction must be in (0,1], got {keep_fraction}")));
    }
    let count = (keep_fraction * ds.split.train.len() as f64).round() as usize;
    if count == 0 {
        return Err(Error::Config(format!(
            "keep_fraction {keep_fraction} of {} train nodes leaves none",
            ds.split.train.len()
        )));
    }
    let mut rng = substream_rng(seed, "label-subsample", &[]);
    let picked = rand::seq::index::sample(&mut rng, ds.split.train.len(), count);
    let mut train: Vec<usize> = picked.iter().map(|i| ds.split.train[i]).collect();
    train.sort_unstable();
    let mut out = ds.clone();
    out.split.train = train;
    Ok(out)
}

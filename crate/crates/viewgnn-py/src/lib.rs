//! Python bindings for the graph training library.
//!
//! Exposes the dataset store, the training entry point, and self-ensembled
//! prediction as a `viewgnn_py` extension module. Configuration crosses the
//! boundary as JSON strings with exactly the schema the command-line tool
//! reads, so a Python caller and a config file describe runs identically.
//!
//! Usage from Python:
//!
//! ```text
//! import json, viewgnn_py
//! ds = viewgnn_py.Dataset.synthesize(
//!     blocks=2, nodes_per_block=20, p_in=0.5, p_out=0.05,
//!     feature_dim=4, feature_noise=0.5, seed=1)
//! model, metrics = viewgnn_py.train(
//!     ds,
//!     json.dumps({"arch": "gcn", "num_layers": 2, "hidden_dim": 8,
//!                 "num_classes": 2}),
//!     json.dumps({"batch_size_labeled": 4, "epochs": 3, "seed": 7,
//!                 "fanouts": [3, 3]}))
//! print(model.evaluate(ds, split="test"))
//! ```

use std::path::Path;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use viewgnn::engine::{self_ensemble_predict, train as train_rs, TrainConfig};
use viewgnn::graphstore::{
    generate_sbm, load_dataset, save_dataset, subsample_labels, DatasetPaths, SbmConfig,
};
use viewgnn::models::{Model, ModelConfig};
use viewgnn::sampler::FanoutSpec;

fn to_py(e: viewgnn::Error) -> PyErr {
    match e {
        viewgnn::Error::Config(_) => PyValueError::new_err(e.to_string()),
        viewgnn::Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(what: &str, text: &str) -> PyResult<T> {
    serde_json::from_str(text)
        .map_err(|e| PyValueError::new_err(format!("invalid {what} JSON: {e}")))
}

/// A node-classification dataset: graph, features, labels, and a fixed
/// train/val/test split. Immutable; transforming methods return new
/// datasets.
#[pyclass(name = "Dataset", frozen)]
struct PyDataset {
    inner: viewgnn::graphstore::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Generates a planted-partition benchmark: `blocks` communities of
    /// `nodes_per_block` nodes, within/between edge probabilities
    /// `p_in`/`p_out`, one-hot block features with Gaussian noise of
    /// standard deviation `feature_noise`, and a stratified 10/10/80 split.
    #[staticmethod]
    #[pyo3(signature = (blocks, nodes_per_block, p_in, p_out, feature_dim, feature_noise, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn synthesize(
        blocks: usize,
        nodes_per_block: usize,
        p_in: f64,
        p_out: f64,
        feature_dim: usize,
        feature_noise: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = SbmConfig { blocks, nodes_per_block, p_in, p_out, feature_dim, feature_noise };
        Ok(Self { inner: generate_sbm(&cfg, seed).map_err(to_py)? })
    }

    /// Loads the four dataset files (`edges.csv`, `features.csv`,
    /// `labels.csv`, `split.json`) from `dir`. `num_classes` defaults to
    /// one past the largest label.
    #[staticmethod]
    #[pyo3(signature = (dir, num_classes=None))]
    fn load(dir: &str, num_classes: Option<usize>) -> PyResult<Self> {
        let paths = DatasetPaths::in_dir(Path::new(dir));
        Ok(Self { inner: load_dataset(&paths, num_classes).map_err(to_py)? })
    }

    /// Writes the four dataset files into `dir`.
    fn save(&self, dir: &str) -> PyResult<()> {
        save_dataset(&self.inner, Path::new(dir)).map_err(to_py)?;
        Ok(())
    }

    /// Keeps a seeded random `keep_fraction` of the training split,
    /// leaving validation and test untouched.
    fn subsample_labels(&self, keep_fraction: f64, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: subsample_labels(&self.inner, keep_fraction, seed).map_err(to_py)? })
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.graph.num_nodes()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.features.ncols()
    }

    /// Node ids of the named split: "train", "val", or "test".
    fn split(&self, name: &str) -> PyResult<Vec<usize>> {
        match name {
            "train" => Ok(self.inner.split.train.clone()),
            "val" => Ok(self.inner.split.val.clone()),
            "test" => Ok(self.inner.split.test.clone()),
            _ => Err(PyValueError::new_err(format!(
                "unknown split {name:?}; expected \"train\", \"val\", or \"test\""
            ))),
        }
    }

    /// Per-node class labels; -1 marks an unlabeled node.
    fn labels(&self) -> Vec<i64> {
        self.inner.labels.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(num_nodes={}, num_classes={}, feature_dim={}, train={}, val={}, test={})",
            self.inner.graph.num_nodes(),
            self.inner.num_classes,
            self.inner.features.ncols(),
            self.inner.split.train.len(),
            self.inner.split.val.len(),
            self.inner.split.test.len(),
        )
    }
}

/// A trained network plus the architecture it was built with.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    inner: Model,
    cfg: ModelConfig,
}

impl PyModel {
    fn fanout_spec(&self, fanouts: Option<Vec<usize>>) -> PyResult<FanoutSpec> {
        match fanouts {
            Some(counts) => FanoutSpec::from_counts(&counts).map_err(to_py),
            None => Ok(FanoutSpec::all(self.cfg.num_layers)),
        }
    }
}

#[pymethods]
impl PyModel {
    /// Writes the parameters to `path` (the `.gnnp` checkpoint format).
    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(Path::new(path)).map_err(to_py)
    }

    /// Reads a checkpoint written by `save`. `model_config` is the same
    /// JSON the model was trained with; shapes are validated against it.
    #[staticmethod]
    fn load(path: &str, model_config: &str) -> PyResult<Self> {
        let cfg: ModelConfig = parse_json("model config", model_config)?;
        cfg.validate().map_err(to_py)?;
        let inner = Model::load(Path::new(path), &cfg).map_err(to_py)?;
        Ok(Self { inner, cfg })
    }

    /// Class probabilities for `targets`, averaged over `n_views`
    /// independently sampled neighborhoods. `fanouts` caps sampled
    /// neighbors per layer; omit it to use every neighbor, which makes the
    /// output deterministic regardless of `seed`. Row `i` is `targets[i]`.
    #[pyo3(signature = (dataset, targets, fanouts=None, n_views=1, seed=0))]
    fn predict_proba(
        &self,
        dataset: &PyDataset,
        targets: Vec<usize>,
        fanouts: Option<Vec<usize>>,
        n_views: usize,
        seed: u64,
    ) -> PyResult<Vec<Vec<f64>>> {
        let spec = self.fanout_spec(fanouts)?;
        let probs =
            self_ensemble_predict(&self.inner, &dataset.inner, &targets, &spec, n_views, seed)
                .map_err(to_py)?;
        Ok(probs.values().rows().into_iter().map(|r| r.to_vec()).collect())
    }

    /// Accuracy of self-ensembled predictions on a named split.
    #[pyo3(signature = (dataset, split="test", fanouts=None, n_views=1, seed=0))]
    fn evaluate(
        &self,
        dataset: &PyDataset,
        split: &str,
        fanouts: Option<Vec<usize>>,
        n_views: usize,
        seed: u64,
    ) -> PyResult<f64> {
        let targets = dataset.split(split)?;
        let spec = self.fanout_spec(fanouts)?;
        let probs =
            self_ensemble_predict(&self.inner, &dataset.inner, &targets, &spec, n_views, seed)
                .map_err(to_py)?;
        let labels: Vec<i64> = targets.iter().map(|&v| dataset.inner.labels[v]).collect();
        Ok(viewgnn::engine::accuracy(&probs, &labels))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(arch={:?}, num_layers={}, hidden_dim={}, num_classes={})",
            self.cfg.arch, self.cfg.num_layers, self.cfg.hidden_dim, self.cfg.num_classes
        )
    }
}

/// Trains a fresh model. `model_config` and `train_config` are JSON with
/// the command-line tool's `model` and `train` schemas. Returns the model
/// and the per-epoch validation metrics as a JSON array string. Identical
/// inputs produce bit-identical models and metrics.
#[pyfunction]
#[pyo3(signature = (dataset, model_config, train_config, run_id="python"))]
fn train(
    dataset: &PyDataset,
    model_config: &str,
    train_config: &str,
    run_id: &str,
) -> PyResult<(PyModel, String)> {
    let model_cfg: ModelConfig = parse_json("model config", model_config)?;
    let train_cfg: TrainConfig = parse_json("train config", train_config)?;
    let (model, records) =
        train_rs(&dataset.inner, &model_cfg, &train_cfg, run_id).map_err(to_py)?;
    let metrics = serde_json::to_string(&records)
        .map_err(|e| PyRuntimeError::new_err(format!("metrics serialization failed: {e}")))?;
    Ok((PyModel { inner: model, cfg: model_cfg }, metrics))
}

#[pymodule]
fn viewgnn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}

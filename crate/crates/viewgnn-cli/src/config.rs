//! Run configuration: JSON schema, validation, and CLI overrides.
//!
//! Parsing happens in two stages. A structural walk over the raw JSON
//! rejects unknown keys and reports missing required keys by their dotted
//! path (`train.consistency.alpha`), then serde fills the typed structs
//! and the usual range validators run with the same path prefixes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use viewgnn::engine::TrainConfig;
use viewgnn::graphstore::{
    generate_sbm, load_dataset, subsample_labels, Dataset, DatasetPaths, SbmConfig,
};
use viewgnn::models::ModelConfig;
use viewgnn::rng::substream_seed;
use viewgnn::{Error, Result};

/// Synthetic-benchmark request: generator parameters plus the dataset's
/// own seed, independent of the training seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub blocks: usize,
    pub nodes_per_block: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SynthSpec {
    pub fn sbm(&self) -> SbmConfig {
        SbmConfig {
            blocks: self.blocks,
            nodes_per_block: self.nodes_per_block,
            p_in: self.p_in,
            p_out: self.p_out,
            feature_dim: self.feature_dim,
            feature_noise: self.feature_noise,
        }
    }
}

/// Where on disk an existing dataset lives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathsSpec {
    pub dir: PathBuf,
}

/// Exactly one source for the dataset: generate it or load it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSpec {
    Synth(SynthSpec),
    Paths(PathsSpec),
}

/// Ensemble shape for `grid`/`eval`: how many independently trained
/// models, how many sampled views each, and how many times to repeat the
/// whole measurement for mean/std aggregation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    #[serde(default = "one")]
    pub models: usize,
    #[serde(default = "one")]
    pub views: usize,
    #[serde(default = "one")]
    pub repeats: usize,
}

fn one() -> usize {
    1
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { models: 1, views: 1, repeats: 1 }
    }
}

/// A fully resolved run: dataset source, architecture, training recipe,
/// ensemble shape, label budget, and output location.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default = "default_keep")]
    pub label_keep_fraction: f64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_keep() -> f64 {
    1.0
}

/// Command-line overrides applied on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub label_keep: Option<f64>,
    pub views: Option<usize>,
    pub models: Option<usize>,
}

fn missing(path: &str, key: &str) -> Error {
    Error::Config(format!("missing required key \"{}\"", join(path, key)))
}

fn unknown(path: &str, key: &str) -> Error {
    Error::Config(format!("unknown key \"{}\"", join(path, key)))
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn as_object<'v>(value: &'v Value, path: &str) -> Result<&'v Map<String, Value>> {
    value.as_object().ok_or_else(|| {
        Error::Config(format!(
            "\"{}\" must be a JSON object",
            if path.is_empty() { "config" } else { path }
        ))
    })
}

fn check_keys(
    obj: &Map<String, Value>,
    path: &str,
    required: &[&str],
    optional: &[&str],
) -> Result<()> {
    for key in required {
        if !obj.contains_key(*key) {
            return Err(missing(path, key));
        }
    }
    for key in obj.keys() {
        if !required.contains(&key.as_str()) && !optional.contains(&key.as_str()) {
            return Err(unknown(path, key));
        }
    }
    Ok(())
}

/// Structural pass: every key known, every required key present, with
/// errors naming the dotted path of the offender.
fn check_structure(root: &Value) -> Result<()> {
    let obj = as_object(root, "")?;
    check_keys(
        obj,
        "",
        &["dataset", "model", "train"],
        &["ensemble", "label_keep_fraction", "output_dir"],
    )?;

    let dataset = as_object(&obj["dataset"], "dataset")?;
    if dataset.len() != 1 || !(dataset.contains_key("synth") || dataset.contains_key("paths")) {
        return Err(Error::Config(
            "\"dataset\" must contain exactly one of \"synth\" or \"paths\"".into(),
        ));
    }
    if let Some(synth) = dataset.get("synth") {
        check_keys(
            as_object(synth, "dataset.synth")?,
            "dataset.synth",
            &["blocks", "nodes_per_block", "p_in", "p_out", "feature_dim", "feature_noise"],
            &["seed"],
        )?;
    }
    if let Some(paths) = dataset.get("paths") {
        check_keys(as_object(paths, "dataset.paths")?, "dataset.paths", &["dir"], &[])?;
    }

    check_keys(
        as_object(&obj["model"], "model")?,
        "model",
        &["arch", "num_layers", "hidden_dim", "num_classes"],
        &["heads", "dropout_rate", "leaky_slope"],
    )?;

    let train = as_object(&obj["train"], "train")?;
    check_keys(
        train,
        "train",
        &["batch_size_labeled", "epochs", "seed"],
        &[
            "mode",
            "fanouts",
            "batch_size_unlabeled",
            "learning_rate",
            "adam_beta1",
            "adam_beta2",
            "adam_eps",
            "weight_decay",
            "consistency",
            "small_graph_mode",
            "node_drop_rate",
        ],
    )?;
    if let Some(con) = train.get("consistency") {
        if !con.is_null() {
            check_keys(
                as_object(con, "train.consistency")?,
                "train.consistency",
                &["alpha"],
                &["temperature", "num_views", "detach_teacher", "swap_kl_direction"],
            )?;
        }
    }

    if let Some(ensemble) = obj.get("ensemble") {
        check_keys(
            as_object(ensemble, "ensemble")?,
            "ensemble",
            &[],
            &["models", "views", "repeats"],
        )?;
    }
    Ok(())
}

fn prefix(path: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Config(msg) => Error::Config(format!("{path}: {msg}")),
        other => other,
    }
}

/// Parses config JSON into a validated [`RunConfig`] with defaults filled.
/// Unknown keys, missing required keys, and out-of-range values are
/// reported with the dotted path of the offending entry.
pub fn parse_and_validate(config_text: &str) -> Result<RunConfig> {
    let root: Value = serde_json::from_str(config_text)
        .map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
    check_structure(&root)?;
    let cfg: RunConfig =
        serde_json::from_value(root).map_err(|e| Error::Config(format!("config: {e}")))?;
    validate_semantics(&cfg)?;
    Ok(cfg)
}

/// Range and coherence checks on a typed config; used after parsing and
/// again after CLI overrides.
pub fn validate_semantics(cfg: &RunConfig) -> Result<()> {
    cfg.model.validate().map_err(prefix("model"))?;
    if let Some(con) = &cfg.train.consistency {
        con.validate().map_err(prefix("train.consistency"))?;
    }
    cfg.train.validate().map_err(prefix("train"))?;
    if !cfg.train.small_graph_mode && cfg.train.fanouts.len() != cfg.model.num_layers {
        return Err(Error::Config(format!(
            "train.fanouts: {} entries for a {}-layer model",
            cfg.train.fanouts.len(),
            cfg.model.num_layers
        )));
    }
    if !(cfg.label_keep_fraction > 0.0 && cfg.label_keep_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "label_keep_fraction: must be in (0,1], got {}",
            cfg.label_keep_fraction
        )));
    }
    match &cfg.dataset {
        DatasetSpec::Synth(spec) => {
            if spec.blocks != cfg.model.num_classes {
                return Err(Error::Config(format!(
                    "model.num_classes ({}) must equal dataset.synth.blocks ({})",
                    cfg.model.num_classes, spec.blocks
                )));
            }
        }
        DatasetSpec::Paths(paths) => {
            let files = DatasetPaths::in_dir(&paths.dir);
            for file in [&files.edges, &files.features, &files.labels, &files.split] {
                if !file.is_file() {
                    return Err(Error::Config(format!(
                        "dataset.paths.dir: missing file {}",
                        file.display()
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Applies CLI flags over the parsed config, then revalidates.
pub fn apply_overrides(cfg: &mut RunConfig, over: &Overrides) -> Result<()> {
    if let Some(seed) = over.seed {
        cfg.train.seed = seed;
    }
    if let Some(out) = &over.out {
        cfg.output_dir = Some(out.clone());
    }
    if let Some(keep) = over.label_keep {
        cfg.label_keep_fraction = keep;
    }
    if let Some(views) = over.views {
        if views == 0 {
            return Err(Error::Config("--views must be >= 1".into()));
        }
        cfg.ensemble.views = views;
    }
    if let Some(models) = over.models {
        if models == 0 {
            return Err(Error::Config("--models must be >= 1".into()));
        }
        cfg.ensemble.models = models;
    }
    validate_semantics(cfg)
}

impl RunConfig {
    /// The directory every command writes into.
    pub fn output_dir(&self) -> Result<&Path> {
        self.output_dir.as_deref().ok_or_else(|| {
            Error::Config("no output directory: set \"output_dir\" or pass --out".into())
        })
    }

    /// Generates or loads the dataset, then applies the label budget. The
    /// subsample seed is a fixed substream of the training seed, so every
    /// command sees the same labeled set.
    pub fn realize_dataset(&self) -> Result<Dataset> {
        let ds = match &self.dataset {
            DatasetSpec::Synth(spec) => generate_sbm(&spec.sbm(), spec.seed)?,
            DatasetSpec::Paths(paths) => {
                load_dataset(&DatasetPaths::in_dir(&paths.dir), Some(self.model.num_classes))?
            }
        };
        if self.label_keep_fraction < 1.0 {
            subsample_labels(
                &ds,
                self.label_keep_fraction,
                substream_seed(self.train.seed, "labels", &[]),
            )
        } else {
            Ok(ds)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use viewgnn::models::Arch;

    pub(crate) fn minimal_synth_config() -> String {
        r#"{
            "dataset": {"synth": {"blocks": 2, "nodes_per_block": 10, "p_in": 0.5,
                                   "p_out": 0.05, "feature_dim": 4, "feature_noise": 0.3}},
            "model": {"arch": "gcn", "num_layers": 2, "hidden_dim": 8, "num_classes": 2},
            "train": {"batch_size_labeled": 2, "epochs": 2, "seed": 7,
                      "fanouts": [3, 3]}
        }"#
        .to_string()
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_and_validate(&minimal_synth_config()).unwrap();
        assert_eq!(cfg.model.arch, Arch::Gcn);
        assert_eq!(cfg.train.learning_rate, 5e-3);
        assert_eq!(cfg.train.adam_beta1, 0.9);
        assert_eq!(cfg.label_keep_fraction, 1.0);
        assert_eq!(cfg.ensemble, EnsembleConfig { models: 1, views: 1, repeats: 1 });
        assert!(cfg.train.consistency.is_none());
        assert!(cfg.output_dir.is_none());
    }

    #[test]
    fn consistency_defaults_fill_from_alpha_alone() {
        let text = minimal_synth_config().replace(
            "\"fanouts\": [3, 3]",
            "\"fanouts\": [3, 3], \"consistency\": {\"alpha\": 0.5}",
        );
        let cfg = parse_and_validate(&text).unwrap();
        let con = cfg.train.consistency.unwrap();
        assert_eq!(con.alpha, 0.5);
        assert_eq!(con.temperature, 0.4);
        assert_eq!(con.num_views, 2);
        assert!(con.detach_teacher);
        assert!(!con.swap_kl_direction);
    }

    #[test]
    fn missing_alpha_names_the_path() {
        let text = minimal_synth_config().replace(
            "\"fanouts\": [3, 3]",
            "\"fanouts\": [3, 3], \"consistency\": {\"temperature\": 0.4}",
        );
        let err = parse_and_validate(&text).unwrap_err();
        assert!(err.to_string().contains("consistency.alpha"), "error must name the path: {err}");
    }

    #[test]
    fn unknown_keys_name_the_path() {
        let text = minimal_synth_config().replace("\"epochs\": 2", "\"epochs\": 2, \"warmup\": 1");
        let err = parse_and_validate(&text).unwrap_err();
        assert!(err.to_string().contains("train.warmup"), "got: {err}");
    }

    #[test]
    fn out_of_range_temperature_is_rejected() {
        let text = minimal_synth_config().replace(
            "\"fanouts\": [3, 3]",
            "\"fanouts\": [3, 3], \"consistency\": {\"alpha\": 1.0, \"temperature\": 1.5}",
        );
        let err = parse_and_validate(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("train.consistency") && msg.contains("temperature"), "got: {msg}");
    }

    #[test]
    fn dataset_must_have_exactly_one_source() {
        let both = r#"{
            "dataset": {"synth": {"blocks": 2, "nodes_per_block": 10, "p_in": 0.5,
                                   "p_out": 0.05, "feature_dim": 4, "feature_noise": 0.3},
                        "paths": {"dir": "x"}},
            "model": {"arch": "gcn", "num_layers": 1, "hidden_dim": 4, "num_classes": 2},
            "train": {"batch_size_labeled": 2, "epochs": 1, "seed": 0, "fanouts": [2]}
        }"#;
        assert!(parse_and_validate(both).is_err());
        let neither = both.replace(
            r#""synth": {"blocks": 2, "nodes_per_block": 10, "p_in": 0.5,
                                   "p_out": 0.05, "feature_dim": 4, "feature_noise": 0.3},
                        "#,
            "",
        );
        assert!(parse_and_validate(&neither).is_err());
    }

    #[test]
    fn referenced_dataset_files_must_exist() {
        let text = r#"{
            "dataset": {"paths": {"dir": "/nonexistent/dataset"}},
            "model": {"arch": "gcn", "num_layers": 1, "hidden_dim": 4, "num_classes": 2},
            "train": {"batch_size_labeled": 2, "epochs": 1, "seed": 0, "fanouts": [2]}
        }"#;
        let err = parse_and_validate(text).unwrap_err();
        assert!(err.to_string().contains("dataset.paths.dir"), "got: {err}");
    }

    #[test]
    fn fanout_count_must_match_layers_unless_small_graph() {
        let text = minimal_synth_config().replace("[3, 3]", "[3]");
        assert!(parse_and_validate(&text).is_err());
        let small =
            minimal_synth_config().replace("\"fanouts\": [3, 3]", "\"small_graph_mode\": true");
        assert!(parse_and_validate(&small).is_ok());
    }

    #[test]
    fn class_count_must_match_synth_blocks() {
        let text = minimal_synth_config().replace("\"num_classes\": 2", "\"num_classes\": 3");
        let err = parse_and_validate(&text).unwrap_err();
        assert!(err.to_string().contains("num_classes"), "got: {err}");
    }

    #[test]
    fn overrides_apply_and_revalidate() {
        let mut cfg = parse_and_validate(&minimal_synth_config()).unwrap();
        let over = Overrides {
            seed: Some(99),
            out: Some(PathBuf::from("/tmp/run")),
            label_keep: Some(0.5),
            views: Some(3),
            models: Some(2),
        };
        apply_overrides(&mut cfg, &over).unwrap();
        assert_eq!(cfg.train.seed, 99);
        assert_eq!(cfg.output_dir.as_deref(), Some(Path::new("/tmp/run")));
        assert_eq!(cfg.label_keep_fraction, 0.5);
        assert_eq!(cfg.ensemble.views, 3);
        assert_eq!(cfg.ensemble.models, 2);

        let mut cfg2 = parse_and_validate(&minimal_synth_config()).unwrap();
        let bad = Overrides { label_keep: Some(1.5), ..Default::default() };
        assert!(apply_overrides(&mut cfg2, &bad).is_err());
    }

    #[test]
    fn config_round_trips_through_serde() {
        let cfg = parse_and_validate(&minimal_synth_config()).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back = parse_and_validate(&text).unwrap();
        assert_eq!(cfg, back);
    }
}

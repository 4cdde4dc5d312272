//! The six subcommands and the files each one writes.
//!
//! Every command writes `run.json` (the fully resolved config plus the
//! policy notes needed to reproduce the run), then its own outputs:
//! `synth` the four dataset files, `train` a checkpoint and metrics JSONL,
//! `eval` an accuracy summary, `grid` the ensemble CSV, `analyze` the
//! distance-bucket CSV, `sweep` the weight-grid CSV and the winner.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::Serialize;

use viewgnn::engine::{
    accuracy, accuracy_by_distance, grid_evaluate, self_ensemble_predict, train, write_grid_csv,
    write_metrics_jsonl, GridRow, MetricsRecord,
};
use viewgnn::graphstore::{save_dataset, Dataset};
use viewgnn::losses::ConsistencyConfig;
use viewgnn::models::Model;
use viewgnn::rng::substream_seed;
use viewgnn::sampler::FanoutSpec;
use viewgnn::{Error, Result};

use crate::config::{DatasetSpec, RunConfig};

/// The weight grid `sweep` walks, ascending.
pub const ALPHA_GRID: [f64; 7] = [0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0];

/// How the supervised batch is sampled when it coincides with the
/// unlabeled batch; echoed into `run.json`.
pub const SUPERVISED_SAMPLE_POLICY: &str = "reuse-view-logits-when-batches-coincide";

pub const CHECKPOINT_FILE: &str = "checkpoint.gnnp";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const RUN_FILE: &str = "run.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CommandKind {
    Synth,
    Train,
    Eval,
    Grid,
    Analyze,
    Sweep,
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            CommandKind::Synth => "synth",
            CommandKind::Train => "train",
            CommandKind::Eval => "eval",
            CommandKind::Grid => "grid",
            CommandKind::Analyze => "analyze",
            CommandKind::Sweep => "sweep",
        };
        f.write_str(name)
    }
}

#[derive(Serialize)]
struct RunManifest<'c> {
    command: String,
    supervised_sample_policy: &'static str,
    config: &'c RunConfig,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("serializing {}: {e}", path.display())))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn write_run_manifest(cmd: CommandKind, cfg: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    write_json(
        &out.join(RUN_FILE),
        &RunManifest {
            command: cmd.to_string(),
            supervised_sample_policy: SUPERVISED_SAMPLE_POLICY,
            config: cfg,
        },
    )
}

/// Fanouts used for evaluation passes: full neighborhoods in small-graph
/// mode, the training fanouts otherwise (mirrors the training loop's own
/// validation-eval choice).
fn eval_fanouts(cfg: &RunConfig) -> FanoutSpec {
    if cfg.train.small_graph_mode {
        FanoutSpec::all(cfg.model.num_layers)
    } else {
        cfg.train.fanouts.clone()
    }
}

fn load_checkpoint(cfg: &RunConfig, out: &Path) -> Result<Model> {
    let path = out.join(CHECKPOINT_FILE);
    if !path.is_file() {
        return Err(Error::Config(format!(
            "{} not found; run `train` with the same --out first",
            path.display()
        )));
    }
    Model::load(&path, &cfg.model)
}

fn test_labels(ds: &Dataset) -> Vec<i64> {
    ds.split.test.iter().map(|&v| ds.labels[v]).collect()
}

/// Runs one command end to end. Returns a one-line human summary.
pub fn run_command(cmd: CommandKind, cfg: &RunConfig) -> Result<String> {
    let out = cfg.output_dir()?.to_path_buf();
    write_run_manifest(cmd, cfg, &out)?;
    match cmd {
        CommandKind::Synth => synth(cfg, &out),
        CommandKind::Train => train_cmd(cfg, &out),
        CommandKind::Eval => eval_cmd(cfg, &out),
        CommandKind::Grid => grid_cmd(cfg, &out),
        CommandKind::Analyze => analyze_cmd(cfg, &out),
        CommandKind::Sweep => sweep_cmd(cfg, &out),
    }
}

/// Process-style wrapper: 0 on success, 1 on failure with the error on
/// stderr.
pub fn dispatch(cmd: CommandKind, cfg: &RunConfig) -> i32 {
    match run_command(cmd, cfg) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn synth(cfg: &RunConfig, out: &Path) -> Result<String> {
    let DatasetSpec::Synth(spec) = &cfg.dataset else {
        return Err(Error::Config("synth needs a \"dataset.synth\" block".into()));
    };
    // The full dataset goes to disk; any label budget applies at training
    // time, not here.
    let ds = viewgnn::graphstore::generate_sbm(&spec.sbm(), spec.seed)?;
    save_dataset(&ds, out)?;
    Ok(format!(
        "wrote dataset: {} nodes, {} classes, {} train / {} val / {} test -> {}",
        ds.num_nodes(),
        ds.num_classes,
        ds.split.train.len(),
        ds.split.val.len(),
        ds.split.test.len(),
        out.display()
    ))
}

fn run_id(cmd: CommandKind, cfg: &RunConfig) -> String {
    format!("{cmd}-seed{}", cfg.train.seed)
}

fn train_cmd(cfg: &RunConfig, out: &Path) -> Result<String> {
    let ds = cfg.realize_dataset()?;
    let (model, records) = train(&ds, &cfg.model, &cfg.train, &run_id(CommandKind::Train, cfg))?;
    model.save(&out.join(CHECKPOINT_FILE))?;
    write_metrics_jsonl(&out.join(METRICS_FILE), &records)?;
    let last = records.last().expect("at least one epoch");
    Ok(format!(
        "trained {} epochs; final val accuracy {:.4} -> {}",
        records.len(),
        last.accuracy,
        out.display()
    ))
}

#[derive(Serialize)]
struct EvalSummary {
    views: usize,
    val_accuracy: f64,
    test_accuracy: f64,
}

fn eval_cmd(cfg: &RunConfig, out: &Path) -> Result<String> {
    let ds = cfg.realize_dataset()?;
    let model = load_checkpoint(cfg, out)?;
    let fanouts = eval_fanouts(cfg);
    let views = cfg.ensemble.views;
    // The validation pass replays the final training epoch's evaluation
    // stream, so `eval --views 1` reproduces the last logged accuracy.
    let val_seed = substream_seed(cfg.train.seed, "eval", &[cfg.train.epochs as u64 - 1]);
    let val_probs = self_ensemble_predict(&model, &ds, &ds.split.val, &fanouts, views, val_seed)?;
    let val_labels: Vec<i64> = ds.split.val.iter().map(|&v| ds.labels[v]).collect();
    let test_seed = substream_seed(cfg.train.seed, "eval-test", &[]);
    let test_probs =
        self_ensemble_predict(&model, &ds, &ds.split.test, &fanouts, views, test_seed)?;
    let summary = EvalSummary {
        views,
        val_accuracy: accuracy(&val_probs, &val_labels),
        test_accuracy: accuracy(&test_probs, &test_labels(&ds)),
    };
    write_json(&out.join("eval.json"), &summary)?;
    Ok(format!(
        "val accuracy {:.4}, test accuracy {:.4} ({} views) -> {}",
        summary.val_accuracy,
        summary.test_accuracy,
        views,
        out.join("eval.json").display()
    ))
}

fn grid_cmd(cfg: &RunConfig, out: &Path) -> Result<String> {
    let ds = cfg.realize_dataset()?;
    let (n_models, n_views, repeats) =
        (cfg.ensemble.models, cfg.ensemble.views, cfg.ensemble.repeats);
    if repeats == 0 {
        return Err(Error::Config("ensemble.repeats must be >= 1".into()));
    }
    let fanouts = eval_fanouts(cfg);
    // cells[m][v] collects one accuracy per repeat.
    let mut cells = vec![vec![Vec::with_capacity(repeats); n_views]; n_models];
    for rep in 0..repeats {
        let rep_seed = substream_seed(cfg.train.seed, "grid-repeat", &[rep as u64]);
        let mut models = Vec::with_capacity(n_models);
        for i in 0..n_models {
            let mut train_cfg = cfg.train.clone();
            train_cfg.seed = substream_seed(rep_seed, "model-seed", &[i as u64]);
            let id = format!("grid-rep{rep}-model{i}-seed{}", cfg.train.seed);
            models.push(train(&ds, &cfg.model, &train_cfg, &id)?.0);
        }
        let grid = grid_evaluate(&models, &ds, &ds.split.test, &fanouts, n_views, rep_seed)?;
        for m in 0..n_models {
            for v in 0..n_views {
                cells[m][v].push(grid[[m, v]]);
            }
        }
    }
    let mut rows = Vec::with_capacity(n_models * n_views);
    for v in 0..n_views {
        for m in 0..n_models {
            let samples = &cells[m][v];
            let mean = samples.iter().sum::<f64>() / samples.len() as f64;
            let var =
                samples.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / samples.len() as f64;
            rows.push(GridRow {
                views: v + 1,
                model_count: m + 1,
                accuracy_mean: mean,
                accuracy_std: var.sqrt(),
            });
        }
    }
    write_grid_csv(&out.join("grid.csv"), &rows)?;
    Ok(format!(
        "grid over {n_models} models x {n_views} views ({repeats} repeats) -> {}",
        out.join("grid.csv").display()
    ))
}

fn analyze_cmd(cfg: &RunConfig, out: &Path) -> Result<String> {
    let ds = cfg.realize_dataset()?;
    let model = load_checkpoint(cfg, out)?;
    let fanouts = eval_fanouts(cfg);
    let probs = self_ensemble_predict(
        &model,
        &ds,
        &ds.split.test,
        &fanouts,
        cfg.ensemble.views,
        substream_seed(cfg.train.seed, "eval-test", &[]),
    )?;
    let buckets = accuracy_by_distance(&probs, &ds)?;
    let path = out.join("distance.csv");
    let mut text = String::from("distance,count,accuracy\n");
    for b in &buckets {
        let d = match b.distance {
            Some(d) => d.to_string(),
            None => "inf".to_string(),
        };
        text.push_str(&format!("{d},{},{}\n", b.count, b.accuracy));
    }
    fs::write(&path, text)?;
    Ok(format!("{} distance buckets -> {}", buckets.len(), path.display()))
}

/// Picks the best (alpha, validation accuracy) pair: highest accuracy,
/// ties broken toward the smaller alpha. Rows must be sorted by alpha
/// ascending, as `sweep` emits them.
pub fn best_alpha(rows: &[(f64, f64)]) -> Option<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for &(alpha, acc) in rows {
        match best {
            None => best = Some((alpha, acc)),
            Some((_, best_acc)) if acc > best_acc => best = Some((alpha, acc)),
            _ => {}
        }
    }
    best
}

#[derive(Serialize)]
struct BestAlpha {
    best_alpha: f64,
    val_accuracy: f64,
}

fn final_val_accuracy(records: &[MetricsRecord]) -> f64 {
    records.last().map_or(0.0, |r| r.accuracy)
}

fn sweep_cmd(cfg: &RunConfig, out: &Path) -> Result<String> {
    let ds = cfg.realize_dataset()?;
    // The sweep varies only the weight; other consistency settings come
    // from the config when present, otherwise the strong defaults.
    let base = cfg.train.consistency.clone().unwrap_or(ConsistencyConfig {
        alpha: 0.0,
        temperature: 0.4,
        num_views: 2,
        detach_teacher: true,
        swap_kl_direction: false,
    });
    let mut rows = Vec::with_capacity(ALPHA_GRID.len());
    for &alpha in &ALPHA_GRID {
        let mut train_cfg = cfg.train.clone();
        train_cfg.consistency = Some(ConsistencyConfig { alpha, ..base.clone() });
        let id = format!("sweep-alpha{alpha}-seed{}", cfg.train.seed);
        let (_, records) = train(&ds, &cfg.model, &train_cfg, &id)?;
        rows.push((alpha, final_val_accuracy(&records)));
    }
    let mut text = String::from("alpha,val_accuracy\n");
    for &(alpha, acc) in &rows {
        text.push_str(&format!("{alpha},{acc}\n"));
    }
    fs::write(out.join("sweep.csv"), text)?;
    let (alpha, acc) = best_alpha(&rows).expect("grid is non-empty");
    write_json(&out.join("best_alpha.json"), &BestAlpha { best_alpha: alpha, val_accuracy: acc })?;
    Ok(format!(
        "best alpha {alpha} (val accuracy {acc:.4}) -> {}",
        out.join("best_alpha.json").display()
    ))
}

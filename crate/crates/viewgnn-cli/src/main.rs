use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use viewgnn_cli::{apply_overrides, dispatch, parse_and_validate, CommandKind, Overrides};

/// Seeded, reproducible graph-model experiments: synthesize benchmarks,
/// train with multi-view consistency, and evaluate ensembles.
#[derive(Parser)]
#[command(name = "viewgnn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the training seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fraction of training labels to keep, in (0, 1].
    #[arg(long = "label-keep")]
    label_keep: Option<f64>,
}

#[derive(Args)]
struct ViewArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of sampled views to ensemble per model.
    #[arg(long)]
    views: Option<usize>,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Largest view count in the grid.
    #[arg(long)]
    views: Option<usize>,
    /// Largest model count in the grid.
    #[arg(long)]
    models: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark and write its dataset files.
    Synth(CommonArgs),
    /// Train a model; writes checkpoint.gnnp, metrics.jsonl, run.json.
    Train(CommonArgs),
    /// Score a trained checkpoint on the validation and test splits.
    Eval(ViewArgs),
    /// Accuracy for every (model count, view count) combination.
    Grid(GridArgs),
    /// Bucket test accuracy by hop distance from the training set.
    Analyze(ViewArgs),
    /// Train across the consistency-weight grid; report the best weight.
    Sweep(CommonArgs),
}

impl Command {
    fn unpack(self) -> (CommandKind, CommonArgs, Overrides) {
        match self {
            Command::Synth(c) => (CommandKind::Synth, c, Overrides::default()),
            Command::Train(c) => (CommandKind::Train, c, Overrides::default()),
            Command::Eval(a) => {
                (CommandKind::Eval, a.common, Overrides { views: a.views, ..Default::default() })
            }
            Command::Grid(a) => (
                CommandKind::Grid,
                a.common,
                Overrides { views: a.views, models: a.models, ..Default::default() },
            ),
            Command::Analyze(a) => {
                (CommandKind::Analyze, a.common, Overrides { views: a.views, ..Default::default() })
            }
            Command::Sweep(c) => (CommandKind::Sweep, c, Overrides::default()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common, mut over) = cli.command.unpack();
    over.seed = common.seed;
    over.out = common.out.clone();
    over.label_keep = common.label_keep;

    let run = || -> anyhow::Result<i32> {
        let text = std::fs::read_to_string(&common.config)
            .with_context(|| format!("reading config {}", common.config.display()))?;
        let mut cfg = parse_and_validate(&text)?;
        apply_overrides(&mut cfg, &over)?;
        Ok(dispatch(kind, &cfg))
    };
    match run() {
        Ok(0) => ExitCode::SUCCESS,
        Ok(_) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use convsurgeon::fixture::FixtureKind;

mod commands;

/// Localize and repair faults introduced by model conversion.
///
/// Exit status: 0 success, 1 findings present, 2 usage error, 3 runtime failure.
#[derive(Debug, Parser)]
#[command(name = "convsurgeon", version)]
struct Cli {
    /// Worker thread cap for corpus runs (default: all cores).
    #[arg(long, global = true, env = "CONVSURGEON_THREADS", value_parser = positive_usize)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a model container against every structural rule.
    Validate(ValidateArgs),
    /// Run one input through a model and print its top-k labels.
    Infer(InferArgs),
    /// Differential inference over a corpus: top-1 discrepancy rate and Kendall tau.
    Compare(CompareArgs),
    /// Per-layer parameter differences between two models.
    DiffParams(DiffArgs),
    /// Per-layer hyperparameter differences between two models.
    DiffHypers(DiffArgs),
    /// Layer alignment and structural differences between two models.
    DiffGraph(DiffArgs),
    /// Per-layer activation differences on selected inputs.
    Trace(TraceArgs),
    /// Full localization over a conversion chain.
    Localize(ChainArgs),
    /// Localize, then repair the chain's target model and verify it.
    Repair(ChainArgs),
    /// Render plots from a localization output directory.
    Report(ReportArgs),
    /// Write a synthetic model or conversion chain with a known fault.
    GenFixture(GenFixtureArgs),
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// NMIF container directory.
    #[arg(value_parser = existing_path)]
    model: PathBuf,
}

#[derive(Debug, Args)]
struct InferArgs {
    /// NMIF container directory.
    #[arg(value_parser = existing_path)]
    model: PathBuf,
    /// Input tensor (`.nt`) in NCHW layout; NHWC models are canonicalized first.
    #[arg(long, value_parser = existing_path)]
    input: PathBuf,
    /// Number of labels to report.
    #[arg(long, default_value_t = 5, value_parser = positive_usize)]
    k: usize,
    /// Write `infer.json` and the activation trace directory `trace/` here.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Models given either as container paths or as a chain.
#[derive(Debug, Args)]
struct Models {
    /// NMIF container directories, Source first.
    #[arg(value_parser = existing_path)]
    models: Vec<PathBuf>,
    /// A `chain.json` (or its directory) instead of explicit models.
    #[arg(long, value_parser = existing_path, conflicts_with = "models")]
    chain: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PairSelect {
    /// With `--chain`: index of the stage treated as Source.
    #[arg(long, default_value_t = 0)]
    from: usize,
    /// With `--chain`: index of the stage treated as Target (default: last).
    #[arg(long)]
    to: Option<usize>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    models: Models,
    /// Directory of `.nt` input tensors.
    #[arg(long, value_parser = existing_path)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 5, value_parser = positive_usize)]
    k: usize,
    /// Size of the triage subset listed in the report.
    #[arg(long, default_value_t = 5, value_parser = positive_usize)]
    triage: usize,
    /// Also write `heatmap.svg` of pairwise rates (needs more than two models).
    #[arg(long)]
    heatmap: bool,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DiffArgs {
    #[command(flatten)]
    models: Models,
    #[command(flatten)]
    select: PairSelect,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TraceArgs {
    #[command(flatten)]
    models: Models,
    #[command(flatten)]
    select: PairSelect,
    #[arg(long, value_parser = existing_path)]
    corpus: PathBuf,
    /// Input ids to trace (repeatable). Default: the triage subset plus a control input.
    #[arg(long = "input")]
    inputs: Vec<String>,
    #[arg(long, default_value_t = 5, value_parser = positive_usize)]
    k: usize,
    #[arg(long, default_value_t = 5, value_parser = positive_usize)]
    triage: usize,
    /// Mean absolute difference above which a pair counts as divergent.
    #[arg(long, default_value_t = 1e-6, value_parser = positive_f64)]
    tolerance: f64,
    /// Also write every activation under `activations/<input>/<model>/`.
    #[arg(long)]
    dump: bool,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ChainArgs {
    /// A `chain.json` (or its directory).
    #[arg(long, value_parser = existing_path)]
    chain: PathBuf,
    #[arg(long, value_parser = existing_path)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 5, value_parser = positive_usize)]
    k: usize,
    #[arg(long, default_value_t = 5, value_parser = positive_usize)]
    triage: usize,
    #[arg(long, default_value_t = 1e-6, value_parser = positive_f64)]
    tolerance: f64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// `localization.json` or the directory holding it. A `discrepancy.json`
    /// next to it with pairwise rates also yields `heatmap.svg`.
    #[arg(value_parser = existing_path)]
    input: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GenFixtureArgs {
    /// smallcnn, chain-param-fault, chain-hyper-fault, chain-substitution,
    /// chain-extranode or clean-chain.
    #[arg(value_parser = fixture_kind)]
    kind: FixtureKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Parameter shift for chain-param-fault.
    #[arg(long, default_value_t = 0.01)]
    epsilon: f32,
    /// Node id of the fault site (default depends on the kind).
    #[arg(long)]
    site: Option<String>,
    /// Chain edge after which the fault is present (edge e joins stages e and e+1).
    #[arg(long, default_value_t = 1)]
    edge: usize,
    /// Attribute changed by chain-hyper-fault: pads, strides or dilations.
    #[arg(long, default_value = "pads")]
    attr: String,
    /// Number of chain stages.
    #[arg(long, default_value_t = 3, value_parser = positive_usize)]
    stages: usize,
    /// Number of corpus inputs.
    #[arg(long, default_value_t = 100, value_parser = positive_usize)]
    corpus_size: usize,
    #[arg(long)]
    out: PathBuf,
}

fn existing_path(s: &str) -> Result<PathBuf, String> {
    let path = PathBuf::from(s);
    if path.exists() {
        Ok(path)
    } else {
        Err(format!("{s} does not exist"))
    }
}

fn positive_usize(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(format!("expected a positive integer, got {s}")),
    }
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x > 0.0 && x.is_finite() => Ok(x),
        _ => Err(format!("expected a positive number, got {s}")),
    }
}

fn fixture_kind(s: &str) -> Result<FixtureKind, String> {
    FixtureKind::parse(s).ok_or_else(|| {
        let names: Vec<&str> = FixtureKind::ALL.iter().map(|k| k.name()).collect();
        format!("unknown fixture kind {s}; expected one of {}", names.join(", "))
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    match commands::run(cli.command) {
        Ok(commands::Status::Clean) => ExitCode::SUCCESS,
        Ok(commands::Status::Findings) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

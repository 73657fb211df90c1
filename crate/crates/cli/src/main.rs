use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use tyr_core::search::SearchMetric;
use tyr_core::supernet::ErrorAccum;

mod commands;

#[derive(Parser, Debug)]
#[command(name = "tyr", version, about = "Prune a decoder-only transformer by supernet search over per-layer sparsity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Full iterative prune-and-search, then export the compacted model.
    Run(RunArgs),
    /// Uniform local pruning at the target sparsity, no search.
    PruneLocal(RunArgs),
    /// Build one supernet iteration on disk.
    BuildSupernet(BuildArgs),
    /// Search a built supernet for the best plan.
    Search(SearchArgs),
    /// Perplexity (and KL to a dense reference) of a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Compact a dense model with a searched plan.
    Export(ExportArgs),
    /// Write a seeded toy model and calibration/held-out corpora.
    InitToy(InitToyArgs),
}

/// Flags shared by every pipeline command; each overrides `--config`.
#[derive(Args, Debug, Default)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    target_sparsity: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Initial ladder interval.
    #[arg(long)]
    interval: Option<f64>,
    #[arg(long)]
    ladder_size: Option<usize>,
    #[arg(long, value_enum)]
    error_accum: Option<AccumArg>,
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    /// Output location.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dense checkpoint directory.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Calibration token file (.bin little-endian u32, or .txt).
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    calibration_tokens: Option<usize>,
    #[arg(long)]
    generations: Option<usize>,
    #[arg(long)]
    offspring: Option<usize>,
    /// Supernet root; the TYR_STORE_ROOT environment variable takes precedence.
    #[arg(long)]
    store_root: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Held-out token file for the final perplexity report.
    #[arg(long)]
    eval_corpus: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BuildArgs {
    #[command(flatten)]
    common: Common,
    /// Centre each ladder on the sublayer sparsities of a previous plan file.
    #[arg(long)]
    centers: Option<PathBuf>,
    /// Iteration tag; the store is written to `{root}/iter_{tag}`.
    #[arg(long, default_value = "1")]
    tag: String,
}

#[derive(Args, Debug)]
struct SearchArgs {
    #[command(flatten)]
    common: Common,
    /// Supernet iteration directory (containing manifest.json).
    #[arg(long)]
    store: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Dense checkpoint to report KL against.
    #[arg(long)]
    dense: Option<PathBuf>,
    #[arg(long)]
    seq_len: Option<usize>,
    /// Evaluate at most this many tokens.
    #[arg(long)]
    max_tokens: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ExportArgs {
    /// Dense checkpoint directory.
    #[arg(long)]
    model: PathBuf,
    /// Plan file written by `search` or `run`.
    #[arg(long)]
    plan: PathBuf,
    /// Override the store recorded in the plan file.
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct InitToyArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "default")]
    size: ToySize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 65536)]
    calibration_tokens: usize,
    #[arg(long, default_value_t = 16384)]
    heldout_tokens: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AccumArg {
    Expectation,
    None,
    Random,
    Uniform,
}

impl From<AccumArg> for ErrorAccum {
    fn from(a: AccumArg) -> Self {
        match a {
            AccumArg::Expectation => ErrorAccum::Expectation,
            AccumArg::None => ErrorAccum::None,
            AccumArg::Random => ErrorAccum::Random,
            AccumArg::Uniform => ErrorAccum::Uniform,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MetricArg {
    KlLogits,
    KlHidden,
}

impl From<MetricArg> for SearchMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::KlLogits => SearchMetric::KlLogits,
            MetricArg::KlHidden => SearchMetric::KlHidden,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ToySize {
    Tiny,
    Small,
    Default,
}

fn error_json(kind: &str, message: &str) -> String {
    json!({ "error": { "kind": kind, "message": message } }).to_string()
}

/// The error chain joined with ": ", skipping causes already spelled out by
/// the message before them.
fn error_message(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprintln!("{}", error_json("usage", e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    match commands::dispatch(cli.command) {
        Ok(report) => {
            let text = serde_json::to_string_pretty(&report).expect("reports serialize");
            // a closed pipe (e.g. `| head`) is not a failure of the command
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let kind = e
                .chain()
                .find_map(|c| c.downcast_ref::<tyr_core::Error>())
                .map_or("other", tyr_core::Error::kind);
            eprintln!("{}", error_json(kind, &error_message(&e)));
            ExitCode::FAILURE
        }
    }
}

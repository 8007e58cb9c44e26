//! `finrag` command line: corpus and index building, single questions, a
//! conversational REPL, batch evaluation, negative mining, router training,
//! calibration and parameter sweeps.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 when a
//! command fails at run time.

mod commands;
mod setup;

use std::ffi::OsString;
use std::io::{self, BufRead, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use setup::{resolve_config, Settings};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

pub(crate) fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

pub(crate) fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "finrag", version, about = "Agentic retrieval-augmented question answering over financial filings")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default, Clone)]
pub struct GlobalArgs {
    /// TOML configuration file. Relative paths inside it resolve against its directory.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one setting, e.g. `--set agent.max_iterations=2`. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
    /// LLM backend: `http` or `scripted:<rules.toml>`.
    #[arg(long, global = true)]
    pub backend: Option<String>,
    /// Router: off, heuristic, force_simple, or a trained model file.
    #[arg(long, global = true)]
    pub router: Option<String>,
    /// Passages returned per retrieval query.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Weight of the lexical channel in hybrid scoring.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct SourceArgs {
    /// Documents (JSONL) or passages (JSONL) to search.
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Prebuilt index file; takes precedence over --corpus.
    #[arg(long, value_name = "FILE")]
    pub index: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct DatasetArgs {
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    /// native, finqa, convfinqa or tatqa.
    #[arg(long, default_value = "native")]
    pub format: String,
    /// Only the first N examples.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Worker threads; defaults to eval.workers.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split documents into passages.
    Ingest {
        /// Documents as JSONL, one per line.
        #[arg(long, value_name = "FILE", conflicts_with = "dataset")]
        docs: Option<PathBuf>,
        /// Take documents from a benchmark file instead.
        #[arg(long, value_name = "FILE")]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "native")]
        format: String,
        /// Passage JSONL destination; stdout when omitted.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Build a search index from documents or passages.
    Index {
        #[arg(long, value_name = "FILE")]
        corpus: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Answer one question.
    Ask {
        question: String,
        #[command(flatten)]
        source: SourceArgs,
        /// Also print the full trace as JSON.
        #[arg(long)]
        trace: bool,
    },
    /// Multi-turn session on stdin. Commands: /reset /trace /history /quit.
    Chat {
        #[command(flatten)]
        source: SourceArgs,
    },
    /// Run a dataset and report metrics.
    Eval {
        #[command(flatten)]
        data: DatasetArgs,
        /// Directory for traces.jsonl, report.json and report.txt.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Traces of an earlier run to compare cost and accuracy against.
        #[arg(long, value_name = "FILE")]
        baseline: Option<PathBuf>,
    },
    /// Classify hard negatives for gold passages.
    #[command(name = "mine-negatives")]
    MineNegatives {
        /// Documents JSONL; ignored when --dataset supplies documents.
        #[arg(long, value_name = "FILE")]
        corpus: Option<PathBuf>,
        /// JSONL of {"query_id", "gold_id"}.
        #[arg(long, value_name = "FILE", required_unless_present = "dataset")]
        queries: Option<PathBuf>,
        /// Dataset whose gold passage ids define the queries.
        #[arg(long, value_name = "FILE")]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "native")]
        format: String,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Label questions by single-pass vs full-loop outcome and fit the router.
    #[command(name = "train-router")]
    TrainRouter {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
    },
    /// Fit confidence calibration from a full-loop run.
    Calibrate {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Accuracy and cost over a grid of θ or top_k.
    Sweep {
        #[command(flatten)]
        data: DatasetArgs,
        /// Grid such as `0.5..1.0:0.1` or `0.6,0.8`.
        #[arg(long, conflicts_with = "top_k", required_unless_present = "top_k")]
        theta: Option<String>,
        #[arg(long = "top-k")]
        top_k: Option<String>,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Print the resolved configuration and where each value came from.
    Config,
}

/// Standard streams, swappable for tests.
pub struct Io<'a> {
    pub stdin: &'a mut dyn BufRead,
    pub out: &'a mut dyn Write,
    pub err: &'a mut dyn Write,
}

/// Entry point for the binary.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdin = io::stdin();
    let mut input = stdin.lock();
    let mut out = io::stdout().lock();
    let mut err = io::stderr().lock();
    let mut io = Io { stdin: &mut input, out: &mut out, err: &mut err };
    run_with(argv, &|k| std::env::var(k).ok(), &mut io)
}

pub fn run_with<I, T>(argv: I, env: &dyn Fn(&str) -> Option<String>, io: &mut Io) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(io.out, "{text}") } else { write!(io.err, "{text}") };
            return code;
        }
    };
    match commands::dispatch(cli, env, io) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(io.err, "error: {}", e.message());
            e.exit_code()
        }
    }
}

//! Operator surface for the memory engine and the scenario harness.
//!
//! Exit status: 0 on success, 1 when the input violates a domain rule
//! (invalid schema, out-of-order session, malformed probe), 2 on I/O or
//! environment failures.

mod commands;
mod model;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "statemem", version, about = "Typed temporal memory with write-time conflict adjudication")]
struct Cli {
    /// Progress messages on stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Schema operations.
    Schema {
        #[command(subcommand)]
        action: SchemaAction,
    },
    /// Ingest sessions into a persisted store, one report line per session.
    Ingest(IngestArgs),
    /// Answer probes against a persisted store.
    Query(QueryArgs),
    /// Generate a seeded scenario suite as newline-delimited records.
    Simulate(SimulateArgs),
    /// Run systems over a scenario suite and write metrics and traces.
    Evaluate(EvaluateArgs),
    /// Dump a store with item status and slot markers.
    Inspect(InspectArgs),
    /// Print the summary tables of a metrics file.
    Report(ReportArgs),
}

#[derive(Debug, Subcommand)]
enum SchemaAction {
    /// Check a schema (and optional knowledge) document.
    Validate(ModelArgs),
}

/// Schema and knowledge sources. Both default to the bundled ten-domain
/// model; a custom schema without `--knowledge` uses the rules embedded in
/// the schema document, if any.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub knowledge: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EngineArgs {
    /// Bound on the lexical global revision candidates per session.
    #[arg(long, default_value_t = 5)]
    pub global_k: usize,
    /// `rule` for the built-in adjudicator, or `tcp://host:port` for an
    /// external judge.
    #[arg(long, default_value = "rule")]
    pub adjudicator: String,
    /// Per-request timeout for an external judge.
    #[arg(long, default_value_t = 10_000)]
    pub judge_timeout_ms: u64,
    /// Retries before an external judge falls back to UNKNOWN.
    #[arg(long, default_value_t = 2)]
    pub judge_retries: u32,
    /// Follow dependency edges transitively when collecting affected items.
    #[arg(long)]
    pub transitive: bool,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
    /// Store file; created when missing.
    #[arg(long)]
    pub store: PathBuf,
    /// Newline-delimited sessions (bare or as scenario-file records).
    #[arg(long)]
    pub sessions: PathBuf,
    /// Skip sessions older than the store clock, as left by an interrupted run.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub store: PathBuf,
    /// A probe object, or newline-delimited probes.
    #[arg(long)]
    pub probe: PathBuf,
    /// Override the dimension each probe declares.
    #[arg(long)]
    pub dimension: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TypeSelection {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

#[derive(Debug, Clone, Args)]
pub struct SuiteArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "type", value_enum, default_value_t = TypeSelection::Both)]
    pub kind: TypeSelection,
    /// Scenarios per conflict type.
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    /// Sessions per haystack.
    #[arg(long, default_value_t = 10)]
    pub sessions_per_case: usize,
    #[arg(long, default_value_t = 2027)]
    pub target_year: i32,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub suite: SuiteArgs,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum SystemChoice {
    Engine,
    Naive,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[command(flatten)]
    pub suite: SuiteArgs,
    /// Evaluate a suite written by `simulate` instead of generating one.
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    /// Systems to run; repeatable.
    #[arg(long, value_enum, default_values_t = vec![SystemChoice::Engine])]
    pub system: Vec<SystemChoice>,
    /// Output directory for metrics.json, summary.txt and traces.jsonl.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub store: PathBuf,
    /// Only this slot (`domain/slot`).
    #[arg(long)]
    pub slot: Option<String>,
    /// Emit the snapshot as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// metrics.json written by `evaluate`.
    #[arg(long)]
    pub metrics: PathBuf,
}

/// A failed command and the exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn domain(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 1, error: error.into() }
    }

    pub fn env(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 2, error: error.into() }
    }
}

pub type CmdResult = Result<(), Failure>;

/// Writes a line to stderr, ignoring a closed stream.
pub fn note(line: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stderr().lock(), "{line}");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let verbose = cli.verbose;
    let result = match cli.command {
        Command::Schema {
            action: SchemaAction::Validate(args),
        } => commands::schema_validate(&args),
        Command::Ingest(args) => commands::ingest(&args, verbose),
        Command::Query(args) => commands::query(&args),
        Command::Simulate(args) => commands::simulate(&args, verbose),
        Command::Evaluate(args) => commands::evaluate(&args, verbose),
        Command::Inspect(args) => commands::inspect(&args),
        Command::Report(args) => commands::report(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            note(&format!("error: {:#}", f.error));
            ExitCode::from(f.code)
        }
    }
}

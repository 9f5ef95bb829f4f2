//! `cream`: builds CRED-style pair datasets, generates explanations, trains
//! and evaluates the pairwise scorer, assesses and composes posts, and serves
//! the `/v1` API.

mod commands;

use std::collections::HashMap;
use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use chrono_tz::Tz;
use clap::{Args, Parser, Subcommand};
use cream_core::scorer::AssemblyMode;
use cream_core::tournament::Strategy;
use cream_server::config::ConfigOverrides;
use cream_server::{ApiError, EngineConfig};

#[derive(Debug, Parser)]
#[command(name = "cream", version, about = "Pairwise crowd-reaction assessment engine")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Engine config (TOML). Defaults to $CREAM_CONFIG, then built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    model_path: Option<PathBuf>,
    #[arg(long, global = true)]
    run_log: Option<PathBuf>,
    #[arg(long, global = true)]
    artifacts_dir: Option<PathBuf>,
    /// IANA zone used for weekday, day-gap and split rules.
    #[arg(long, global = true)]
    timezone: Option<Tz>,
    /// Seed for pair presentation order and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Name of the configured provider that writes explanations.
    #[arg(long, global = true)]
    explainer: Option<String>,
    #[arg(long, global = true)]
    assembly_mode: Option<AssemblyMode>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Dataset construction.
    #[command(subcommand)]
    Cred(CredCommand),
    /// Explanation-augmented scorer: explain, train, predict, evaluate, assess.
    #[command(subcommand)]
    Ggea(GgeaCommand),
    /// Paraphrase a draft and pick the candidate expected to draw the most reactions.
    Compose(ComposeArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
enum CredCommand {
    /// Ingest, annotate, pair, split and summarize a tweet corpus.
    Build(BuildArgs),
}

#[derive(Debug, Args)]
struct BuildArgs {
    /// Line-delimited tweet records.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Abort on the first malformed record instead of skipping it.
    #[arg(long)]
    strict: bool,
    /// First local day of the validation split (YYYY-MM-DD).
    #[arg(long)]
    split_date: Option<NaiveDate>,
}

#[derive(Debug, Subcommand)]
enum GgeaCommand {
    /// Generate "why is this engaging" explanations for every tweet in a pairs file.
    Explain(ExplainArgs),
    /// Train the pairwise scorer.
    Train(TrainArgs),
    /// Score a pairs file with a trained model.
    Predict(PredictArgs),
    /// Zero-shot baseline: ask a provider which text wins.
    ZeroShot(ZeroShotArgs),
    /// Evaluate prediction files against a pairs file.
    Eval(EvalArgs),
    /// Compare two texts.
    Assess(AssessArgs),
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[arg(long, required = true, num_args = 1..)]
    pairs: Vec<PathBuf>,
    /// Output explanations file (JSONL).
    #[arg(long)]
    out: PathBuf,
    /// Configured provider name; defaults to the explainer.
    #[arg(long)]
    provider: Option<String>,
    #[arg(long, default_value_t = 8)]
    parallelism: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    pairs: PathBuf,
    /// Explanations file; generated through the explainer when omitted and needed.
    #[arg(long)]
    explanations: Option<PathBuf>,
    /// Model output path; defaults to the configured model path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    explanations: Option<PathBuf>,
    /// Model file; defaults to the configured model path.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    system_id: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ZeroShotArgs {
    #[arg(long)]
    pairs: PathBuf,
    /// Configured provider name; defaults to the explainer.
    #[arg(long)]
    provider: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    pairs: PathBuf,
    /// Prediction files (JSONL of `{pair_id, verdict, p_t1?, system_id}`).
    #[arg(long, required = true, num_args = 1..)]
    predictions: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// System id to test every other system against.
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    iterations: usize,
    /// Comma-separated lower bucket bounds in percent.
    #[arg(long, value_delimiter = ',')]
    buckets: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct AssessArgs {
    #[arg(long)]
    t1: String,
    #[arg(long)]
    t2: String,
    #[arg(long)]
    with_explanations: bool,
}

#[derive(Debug, Args)]
struct ComposeArgs {
    #[arg(long, conflicts_with = "draft_file", required_unless_present = "draft_file")]
    draft: Option<String>,
    #[arg(long)]
    draft_file: Option<PathBuf>,
    /// Paraphrases to request.
    #[arg(long)]
    n_candidates: Option<usize>,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
    /// Print the full response as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Address to bind, e.g. 127.0.0.1:8080.
    #[arg(long)]
    listen: Option<String>,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    match s {
        "champion" => Ok(Strategy::Champion),
        "round-robin" | "round_robin" => Ok(Strategy::RoundRobin),
        _ => Err(format!("unknown strategy `{s}` (champion, round-robin)")),
    }
}

/// Failure classes, each with its own exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("upstream unavailable: {0}")]
    Upstream(String),
    #[error("model not loaded: {0}")]
    ModelNotLoaded(String),
    #[error("evaluation error: {0}")]
    Eval(String),
    #[error("busy: {0}")]
    Busy(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Internal(_) => 1,
            CliError::Config(_) => 3,
            CliError::Input(_) => 4,
            CliError::Upstream(_) => 5,
            CliError::ModelNotLoaded(_) => 6,
            CliError::Eval(_) => 7,
            CliError::Busy(_) => 8,
        }
    }
}

impl From<ApiError> for CliError {
    fn from(e: ApiError) -> Self {
        let message = format!("{} ({})", e.message, e.code);
        match e.status {
            400..=499 => CliError::Input(message),
            502 => CliError::Upstream(message),
            503 => CliError::ModelNotLoaded(message),
            _ => CliError::Internal(message),
        }
    }
}

fn resolve_config(global: &GlobalArgs) -> Result<EngineConfig, CliError> {
    let flags = ConfigOverrides {
        reference_timezone: global.timezone,
        assembly_mode: global.assembly_mode,
        explainer: global.explainer.clone(),
        cache_dir: global.cache_dir.clone(),
        model_path: global.model_path.clone(),
        run_log: global.run_log.clone(),
        artifacts_dir: global.artifacts_dir.clone(),
        seed: global.seed,
        ..ConfigOverrides::default()
    };
    let env: HashMap<String, String> = std::env::vars().collect();
    EngineConfig::resolve(global.config.as_deref(), &env, &flags).map_err(|e| CliError::Config(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = resolve_config(&cli.global).and_then(|mut config| {
        if let Command::Serve(ServeArgs { listen: Some(addr) }) = &cli.command {
            config.listen = addr.clone();
        }
        if let Command::Cred(CredCommand::Build(BuildArgs { split_date: Some(d), .. })) = &cli.command {
            config.split_date = *d;
        }
        config.prepare_dirs().map_err(|e| CliError::Config(e.to_string()))?;
        let ctx = commands::Context::new(config);
        match cli.command {
            Command::Cred(CredCommand::Build(a)) => commands::cred_build(&ctx, &a),
            Command::Ggea(GgeaCommand::Explain(a)) => commands::ggea_explain(&ctx, &a),
            Command::Ggea(GgeaCommand::Train(a)) => commands::ggea_train(&ctx, &a),
            Command::Ggea(GgeaCommand::Predict(a)) => commands::ggea_predict(&ctx, &a),
            Command::Ggea(GgeaCommand::ZeroShot(a)) => commands::ggea_zero_shot(&ctx, &a),
            Command::Ggea(GgeaCommand::Eval(a)) => commands::ggea_eval(&ctx, &a),
            Command::Ggea(GgeaCommand::Assess(a)) => commands::ggea_assess(&ctx, &a),
            Command::Compose(a) => commands::compose(&ctx, &a),
            Command::Serve(_) => commands::serve(&ctx),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

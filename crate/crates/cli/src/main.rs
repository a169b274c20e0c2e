mod commands;
mod config;
mod error;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anomaly_seek::eval::bench;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde_json::json;

use config::RunConfig;
use error::CliError;

/// Knowledge retrieval, sparse prompt coding and anomaly localization over
/// precomputed embeddings. Results are printed to stdout as JSON; diagnostics
/// go to stderr.
///
/// Exit codes: 0 success, 2 input/format error, 3 shape/config error,
/// 4 numerical failure.
#[derive(Debug, Parser)]
#[command(name = "anomaly-seek", version)]
pub struct Cli {
    #[command(flatten)]
    settings: Settings,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Settings {
    /// Flat `key = value` configuration file
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one configuration key (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Shorthand for --set seed=N
    #[arg(long, global = true)]
    seed: Option<String>,

    /// Shorthand for --set budget=N
    #[arg(long, global = true)]
    budget: Option<String>,

    /// Shorthand for --set method=topk|kde
    #[arg(long, global = true)]
    method: Option<String>,

    /// Shorthand for --set threads=N
    #[arg(long, global = true)]
    threads: Option<String>,

    /// Shorthand for --set hsp_lambda=X
    #[arg(long, global = true)]
    hsp_lambda: Option<String>,

    /// Shorthand for --set aggregator=max|topq
    #[arg(long, global = true)]
    aggregator: Option<String>,
}

impl Settings {
    /// Layers the file, then `--set`, then the shorthand flags over `base`.
    fn apply(&self, mut cfg: RunConfig) -> Result<RunConfig, CliError> {
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for assignment in &self.set {
            cfg.apply_assignment(assignment)?;
        }
        let shorthands = [
            ("seed", &self.seed),
            ("budget", &self.budget),
            ("method", &self.method),
            ("threads", &self.threads),
            ("hsp_lambda", &self.hsp_lambda),
            ("aggregator", &self.aggregator),
        ];
        for (key, value) in shorthands {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build an index bundle from a manifest and a lock-embedding file
    Ingest(IngestArgs),
    /// Retrieve documents for every key row
    Retrieve(RetrieveArgs),
    /// Compute an anomaly localization map for a patch grid
    Score(ScoreArgs),
    /// Image- and pixel-level AUROC
    Eval(EvalArgs),
    /// Write synthetic fixtures
    Synth(SynthArgs),
    /// Time another command over repeated runs
    Bench(BenchArgs),
    /// Print the effective configuration
    Config,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Output bundle directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    /// Index bundle directory
    #[arg(long)]
    index: PathBuf,
    /// Embedding file with one query key per row
    #[arg(long)]
    keys: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Patch embeddings, row-major over the grid
    #[arg(long)]
    patches: PathBuf,
    /// Patch grid shape, HxW
    #[arg(long)]
    grid: String,
    /// Output map shape, HxW (defaults to the grid shape)
    #[arg(long)]
    out_size: Option<String>,
    /// Two-row embedding file: positive prompt, then negative prompt
    #[arg(long, conflicts_with = "prompt_table")]
    prompts: Option<PathBuf>,
    /// Prompt embedding table with a `.labels.json` sidecar of prompt texts
    #[arg(long, requires = "label")]
    prompt_table: Option<PathBuf>,
    /// Defect-type label substituted for [cls]
    #[arg(long)]
    label: Option<String>,
    /// Object name substituted for [obj]
    #[arg(long)]
    object: Option<String>,
    /// Stage dictionary for sparse coding of the patches (repeat for more stages)
    #[arg(long)]
    hsp_dict: Vec<PathBuf>,
    /// Write the map as an 8-bit PGM
    #[arg(long)]
    out: Option<PathBuf>,
    /// One-row visual embedding appended to the map to form the prior
    #[arg(long)]
    vis: Option<PathBuf>,
    /// Write the assembled prior as a one-row embedding file
    #[arg(long, requires = "vis")]
    prior_out: Option<PathBuf>,
    /// Include per-stage sparse-coding reports in the output
    #[arg(long)]
    diagnostics: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSON Lines of {id, score, label}
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Localization map PGM (repeat; paired with --mask in order)
    #[arg(long)]
    map: Vec<PathBuf>,
    /// Ground-truth mask PGM, non-zero pixels are anomalous
    #[arg(long)]
    mask: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SynthKind {
    Kb,
    Defect,
    Scores,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    kind: SynthKind,
    /// JSON fixture spec; `seed` defaults to the configured seed
    #[arg(long)]
    spec: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Repetitions (defaults to bench_runs)
    #[arg(long)]
    runs: Option<usize>,
    /// The command to time, after `--`
    #[arg(last = true, required = true)]
    command: Vec<String>,
}

fn parse_cli<I, T>(args: I) -> Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = Cli::command()
        .after_help(config::keys_help())
        .try_get_matches_from(args)?;
    Cli::from_arg_matches(&matches)
}

fn run_bench(args: &BenchArgs, cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let inner = parse_cli(std::iter::once("anomaly-seek".to_string()).chain(args.command.iter().cloned()))
        .map_err(|e| CliError::Config(format!("bench command: {e}")))?;
    if matches!(inner.command, Command::Bench(_)) {
        return Err(CliError::Config("bench cannot be nested".into()));
    }
    let inner_cfg = inner.settings.apply(cfg.clone())?;
    let runs = args.runs.unwrap_or(cfg.bench_runs);
    let stage = args.command.first().cloned().unwrap_or_default();
    let mut failure = None;
    let report = bench(&stage, runs, || {
        let mut buf = Vec::new();
        commands::run(&inner.command, &inner_cfg, &mut buf).map_err(|e| {
            let msg = e.to_string();
            failure = Some(e);
            anomaly_seek::Error::Argument(msg)
        })?;
        Ok(buf)
    });
    let report = match (report, failure) {
        (_, Some(e)) => return Err(e),
        (r, None) => r?,
    };
    let mut line = serde_json::to_vec(&json!({ "command": args.command, "report": report }))
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    line.push(b'\n');
    out.write_all(&line)
        .map_err(|e| CliError::Input(format!("cannot write output: {e}")))
}

fn main() -> ExitCode {
    let cli = match parse_cli(std::env::args_os()) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(2),
            };
        }
    };
    let result = cli.settings.apply(RunConfig::default()).and_then(|cfg| {
        let stdout = std::io::stdout();
        let mut out = stdout.lock();
        match &cli.command {
            Command::Bench(args) => run_bench(args, &cfg, &mut out),
            other => commands::run(other, &cfg, &mut out),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

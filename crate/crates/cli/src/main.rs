mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use commands::*;
use config::RunConfig;

/// Bad input, bad configuration or a missing path. Exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(
    name = "dforge",
    version,
    about = "Synthetic rewriting and privacy evaluation pipeline"
)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; defaults to paths.output_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Parallelism bound for network-heavy stages.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Offline fixture directory (chat.json, search.json, pages.json).
    #[arg(long, global = true)]
    mock: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// NSFW, first-person, length and sampling filters.
    Filter(FilterArgs),
    /// Convert annotation exports to the native span format.
    ImportAnnotations(ImportArgs),
    /// Agreement between two annotators.
    Iaa(IaaArgs),
    /// Rewrite posts through the prompt chain.
    Generate(GenerateArgs),
    /// Choose the sampling temperature on a small sample.
    Calibrate(CalibrateArgs),
    /// Surface and embedding similarity between rewrites and sources.
    Metrics(MetricsArgs),
    /// Search for each rewrite on the web and drop linkable ones.
    Unlink(UnlinkArgs),
    /// Chi-square test on survey answers.
    Survey(SurveyArgs),
    /// Score classifier prediction files.
    EvalClassifier(EvalArgs),
    /// Compare PII category shares between two corpora.
    Proportions(ProportionArgs),
    /// Run every report whose inputs are given and write summary.json.
    Report(ReportArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Filter(_) => "filter",
            Command::ImportAnnotations(_) => "import-annotations",
            Command::Iaa(_) => "iaa",
            Command::Generate(_) => "generate",
            Command::Calibrate(_) => "calibrate",
            Command::Metrics(_) => "metrics",
            Command::Unlink(_) => "unlink",
            Command::Survey(_) => "survey",
            Command::EvalClassifier(_) => "eval-classifier",
            Command::Proportions(_) => "proportions",
            Command::Report(_) => "report",
        }
    }

    fn prepare(&self, cfg: &mut RunConfig, mock: bool) -> Result<()> {
        match self {
            Command::Filter(a) => a.prepare(cfg),
            Command::ImportAnnotations(a) => a.prepare(),
            Command::Iaa(a) => a.prepare(),
            Command::Generate(a) => a.prepare(cfg),
            Command::Calibrate(a) => a.prepare(cfg),
            Command::Metrics(a) => a.prepare(cfg),
            Command::Unlink(a) => a.prepare(cfg, mock),
            Command::Survey(a) => a.prepare(cfg),
            Command::EvalClassifier(a) => a.prepare(cfg),
            Command::Proportions(a) => a.prepare(),
            Command::Report(a) => a.prepare(),
        }
    }

    fn run(&self, ctx: &Ctx) -> Result<serde_json::Value> {
        match self {
            Command::Filter(a) => a.run(ctx),
            Command::ImportAnnotations(a) => a.run(ctx),
            Command::Iaa(a) => a.run(ctx),
            Command::Generate(a) => a.run(ctx),
            Command::Calibrate(a) => a.run(ctx),
            Command::Metrics(a) => a.run(ctx),
            Command::Unlink(a) => a.run(ctx),
            Command::Survey(a) => a.run(ctx),
            Command::EvalClassifier(a) => a.run(ctx),
            Command::Proportions(a) => a.run(ctx),
            Command::Report(a) => a.run(ctx),
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.apply_env(|k| std::env::var(k).ok())?;
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(UsageError("--jobs must be at least 1".into()).into());
        }
        cfg.set_parallelism(jobs);
    }
    if let Some(dir) = &cli.mock {
        if !dir.is_dir() {
            return Err(UsageError(format!("mock directory {} does not exist", dir.display())).into());
        }
    }
    cli.command.prepare(&mut cfg, cli.mock.is_some())?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.paths.output_dir.clone())
        .ok_or_else(|| UsageError("no output directory: pass --out or set paths.output_dir".into()))?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    cfg.paths.output_dir = Some(out.clone());

    dforge::jsonl::write_json(&out.join("config_snapshot.json"), &cfg.snapshot()?)?;
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let meta = json!({
        "command": cli.command.name(),
        "argv": std::env::args().collect::<Vec<_>>(),
        "mock": cli.mock,
        "started_unix": started,
        "version": env!("CARGO_PKG_VERSION"),
    });
    dforge::jsonl::write_json(&out.join("run_meta.json"), &meta)?;

    let ctx = Ctx {
        cfg,
        out,
        mock: cli.mock.clone(),
    };
    let result = cli.command.run(&ctx)?;
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}

fn is_usage_error(err: &anyhow::Error) -> bool {
    err.chain()
        .any(|e| e.is::<UsageError>() || matches!(e.downcast_ref::<dforge::Error>(), Some(dforge::Error::Config(_))))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_usage_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

mod artifacts;
mod check;
mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;

use crate::artifacts::OutDir;
use crate::config::{Command, RunConfig};
use crate::error::{CliError, CliResult};
use crate::run::Run;

/// Structured-network estimation with orthogonal-score inference.
#[derive(Debug, Parser)]
#[command(name = "hinf", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration. Optional for `check`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Caps the number of worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory (default: the config's `out`, else `hinf-out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suppress the summary printed to stdout.
    #[arg(long, short)]
    quiet: bool,
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None if cli.command == Command::Check => RunConfig::default(),
        None => return Err(CliError::Config(format!("`{:?}` needs --config", cli.command))),
    };
    cfg.validate(cli.command)?;
    let root = cli
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("hinf-out"));
    let mut out = OutDir::create(&root)?;
    let seed = cli.seed.or(cfg.seed);
    out.log(&format!(
        "hinf {} {:?} config={} seed={seed:?} threads={}",
        env!("CARGO_PKG_VERSION"),
        cli.command,
        cli.config.as_ref().map_or("-".into(), |p| p.display().to_string()),
        rayon::current_num_threads()
    ));
    let started = Instant::now();
    let runner = Run {
        cfg: &cfg,
        seed,
        quiet: cli.quiet,
    };
    let result = runner.execute(cli.command, &mut out);
    match &result {
        Ok(()) => out.log(&format!("finished in {:.2}s", started.elapsed().as_secs_f64())),
        Err(e) => out.log(&format!("failed after {:.2}s: {e}", started.elapsed().as_secs_f64())),
    }
    out.finish()?;
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

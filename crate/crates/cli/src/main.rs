//! `opoherald`: command-line scenarios for the heralded-OPO simulator.

mod commands;
mod config;
mod table;
mod validate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Context;
use crate::config::ScenarioFile;
use crate::table::{num, write_table, Meta};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("physics error: {0}")]
    Physics(opoherald::Error),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("validation failed: {0}")]
    Validation(String),
}

impl From<opoherald::Error> for CliError {
    fn from(e: opoherald::Error) -> Self {
        match e {
            opoherald::Error::Config(msg) => Self::Config(msg),
            other => Self::Physics(other),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Validation(_) => 1,
            Self::Config(_) | Self::Io(_) => 2,
            Self::Physics(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "opoherald",
    version,
    about = "Heralded photon subtraction from a pulsed or CW OPO"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Heralded W(0,0) and P for one signal mode.
    Evaluate(RunArgs),
    /// Optimize the signal mode and write it to mode.csv.
    Optimize(RunArgs),
    /// Run the configured grid of scenarios, resuming finished points.
    Sweep(RunArgs),
    /// Run the built-in validation suites.
    Validate(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Output directory; OPO_SIM_OUT takes precedence.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Optimizer seed [default: run.seed, else 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
    /// Grid samples per round trip [default: run.grid_m, else 8].
    #[arg(long = "grid-M")]
    grid_m: Option<usize>,
}

fn setup(common: &CommonArgs) -> Result<PathBuf, CliError> {
    if let Some(n) = common.workers {
        if n == 0 {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let out = std::env::var_os("OPO_SIM_OUT").map_or_else(|| common.out.clone(), PathBuf::from);
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    Ok(out)
}

fn context(args: &RunArgs) -> Result<(ScenarioFile, Context), CliError> {
    let cfg = ScenarioFile::load(&args.config)?;
    let grid_m = args.grid_m.unwrap_or(cfg.run.grid_m);
    if grid_m < 4 {
        return Err(CliError::Config(format!("--grid-M {grid_m} must be at least 4")));
    }
    let out = setup(&args.common)?;
    let ctx = Context {
        out,
        seed: args.common.seed.unwrap_or(cfg.run.seed),
        grid_m,
        config_hash: cfg.hash(),
    };
    Ok((cfg, ctx))
}

fn run_validate(common: &CommonArgs) -> Result<(), CliError> {
    let out = setup(common)?;
    let seed = common.seed.unwrap_or(0);
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for (name, suite) in validate::SUITES {
        let checks = match suite(seed) {
            Ok(c) => c,
            Err(e) => {
                failed.push(name.to_string());
                println!("FAIL {name}: {e}");
                rows.push(vec![
                    name.to_string(),
                    e.to_string(),
                    String::new(),
                    String::new(),
                    "fail".into(),
                ]);
                continue;
            }
        };
        for c in checks {
            let verdict = if c.passed { "pass" } else { "fail" };
            println!(
                "{} {}: {} = {:.3e} (tolerance {:.1e})",
                verdict.to_uppercase(),
                c.suite,
                c.quantity,
                c.value,
                c.tolerance
            );
            if !c.passed {
                failed.push(format!("{}: {}", c.suite, c.quantity));
            }
            rows.push(vec![
                c.suite.to_string(),
                c.quantity,
                num(c.value),
                num(c.tolerance),
                verdict.into(),
            ]);
        }
    }
    let meta = Meta {
        table: "validation",
        config_hash: "built-in".into(),
        seed,
        grid_m: 0,
        extra: vec![],
    };
    write_table(
        &out.join("validation.csv"),
        &meta,
        &["suite", "quantity", "value", "tolerance", "result"],
        &rows,
    )?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(failed.join("; ")))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Evaluate(args) => {
            let (cfg, ctx) = context(args)?;
            commands::evaluate(&cfg, &ctx)
        }
        Command::Optimize(args) => {
            let (cfg, ctx) = context(args)?;
            commands::optimize(&cfg, &ctx)
        }
        Command::Sweep(args) => {
            let (cfg, ctx) = context(args)?;
            commands::sweep(&cfg, &ctx)
        }
        Command::Validate(common) => run_validate(common),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

/// Default output directory when neither `--out` nor the config sets one.
pub const OUT_DIR_ENV: &str = "CAPGAME_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "capgame-out";

#[derive(Parser, Debug)]
#[command(name = "capgame", version, about = "Capacity investment games among random producers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Equilibrium capacities, payments and efficiency of one instance.
    Solve(Common),
    /// Social planner capacities of one instance.
    Planner(Common),
    /// Profit of one producer across its own capacity, others fixed.
    Sweep(Common),
    /// Symmetric equilibria over a range of producer counts.
    EfficiencyCurve(Common),
    /// Same experiment, reported as total capacity over mean demand.
    CapacityRatio(Common),
    /// Ingest profiles, fit the additive model and run the efficiency curve.
    Casestudy(Common),
    /// Exact enumeration against Monte Carlo estimates on a finite instance.
    OracleCheck(Common),
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; affects speed only.
    #[arg(long)]
    threads: Option<usize>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Solve(_) => "solve",
            Command::Planner(_) => "planner",
            Command::Sweep(_) => "sweep",
            Command::EfficiencyCurve(_) => "efficiency-curve",
            Command::CapacityRatio(_) => "capacity-ratio",
            Command::Casestudy(_) => "casestudy",
            Command::OracleCheck(_) => "oracle-check",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Solve(c)
            | Command::Planner(c)
            | Command::Sweep(c)
            | Command::EfficiencyCurve(c)
            | Command::CapacityRatio(c)
            | Command::Casestudy(c)
            | Command::OracleCheck(c) => c,
        }
    }
}

/// Machine-readable failure class, also the process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Category {
    Config = 2,
    Solver = 3,
}

impl Category {
    fn label(self) -> &'static str {
        match self {
            Category::Config => "config-error",
            Category::Solver => "solver-error",
        }
    }

    /// Library errors carry their own classification; everything raised by
    /// the CLI itself concerns the input.
    fn of(err: &anyhow::Error) -> Self {
        err.chain()
            .find_map(|e| e.downcast_ref::<capgame_core::Error>())
            .map_or(Category::Config, |e| {
                if e.is_input_error() {
                    Category::Config
                } else {
                    Category::Solver
                }
            })
    }
}

fn resolve(command: &Command) -> Result<(RunConfig, PathBuf)> {
    let common = command.common();
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    config.command = Some(command.name().to_owned());
    config.version = Some(env!("CARGO_PKG_VERSION").to_owned());
    if let Some(seed) = common.seed {
        config.settings.seed = seed;
    }
    if let Some(r) = common.replicates {
        config.settings.replicates = r;
    }
    let out = common
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    config.output_dir = Some(out.clone());
    config.settings.validate()?;
    Ok((config, out))
}

fn run(command: &Command) -> Result<()> {
    if let Some(threads) = command.common().threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring worker threads")?;
    }
    let (config, out) = resolve(command)?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let files = match command {
        Command::Solve(_) => commands::solve(&config, &out)?,
        Command::Planner(_) => commands::planner(&config, &out)?,
        Command::Sweep(_) => commands::sweep(&config, &out)?,
        Command::EfficiencyCurve(_) => commands::curve(&config, &out, "efficiency_curve.csv")?,
        Command::CapacityRatio(_) => commands::curve(&config, &out, "capacity_ratio.csv")?,
        Command::Casestudy(_) => commands::casestudy(&config, &out)?,
        Command::OracleCheck(_) => commands::oracle_check(&config, &out)?,
    };
    output::write_json(&out.join(output::MANIFEST), &config)?;
    for f in files {
        println!("{}", out.join(f).display());
    }
    println!("{}", out.join(output::MANIFEST).display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let category = Category::of(&err);
            let body = serde_json::json!({
                "error": category.label(),
                "message": format!("{err:#}"),
            });
            eprintln!("{body}");
            ExitCode::from(category as u8)
        }
    }
}

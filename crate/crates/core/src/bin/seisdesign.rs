use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use seisdesign::config::RunConfig;
use seisdesign::inference::EstimatorKind;
use seisdesign::{run, Error, Result};

/// Expected information gain of seismic receiver layouts.
#[derive(Parser)]
#[command(name = "seisdesign", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (defaults to `workers` from the config).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Output directory (defaults to `output` from the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides `estimator`.
    #[arg(long, global = true)]
    estimator: Option<EstimatorKind>,
}

#[derive(Subcommand)]
enum Command {
    /// One forward solve at `theta`, recorded at `receivers`.
    Simulate,
    /// H_I, H_II and conditioning at `theta`.
    Hessian,
    /// Information gain of the configured receivers.
    Eig,
    /// All design points of the configured scenario.
    Sweep,
    /// Condition, convergence or comparison study.
    Diagnose,
    /// Per-parameter information gain across the scenario's designs.
    PerParam,
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config { line: None, message: "--config is required".into() })?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config { line: None, message: format!("cannot read {}: {e}", path.display()) })?;
    let mut c = RunConfig::parse(&text)?;
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(w) = cli.workers {
        c.workers = w;
    }
    if let Some(e) = cli.estimator {
        c.estimator = e;
    }
    if let Some(o) = &cli.out {
        c.output = o.display().to_string();
    }
    Ok(c)
}

fn execute(cli: &Cli) -> Result<bool> {
    let c = load(cli)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(c.workers.max(1))
        .build_global()
        .map_err(|e| Error::State(e.to_string()))?;
    let out = PathBuf::from(&c.output);
    match cli.command {
        Command::Simulate => {
            let p = run::run_simulate(&c, &out)?;
            println!("wrote {}", p.display());
        }
        Command::Hessian => {
            let r = run::run_hessian(&c, &out)?;
            println!("cond(H_I) = {:e}, after scaling {:e}", r.cond_unscaled, r.cond_scaled);
        }
        Command::Eig => {
            let e = run::run_eig(&c, &out)?;
            println!("{} EIG = {} ± {} nats", e.estimator.tag(), e.value, e.stderr);
        }
        Command::Sweep | Command::PerParam => {
            let s = if matches!(cli.command, Command::Sweep) { run::run_sweep(&c, &out)? } else { run::run_per_param(&c, &out)? };
            println!("{}: {} written, {} already present, {} failed", s.path.display(), s.written, s.skipped, s.failed.len());
            return Ok(s.failed.is_empty());
        }
        Command::Diagnose => run::run_diagnose(&c, &out)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

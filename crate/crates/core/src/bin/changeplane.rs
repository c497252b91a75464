use std::path::{Path, PathBuf};
use std::process::ExitCode;

use changeplane::harness::{self, Command, RunConfig};
use changeplane::{Error, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "changeplane", version, about = "Change-plane regression: fitting, inference and simulation studies")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Simulation design (1, 2 or 3).
    #[arg(long)]
    model: Option<u8>,
    /// Coefficient scenario (1 or 2).
    #[arg(long)]
    scenario: Option<u8>,
    /// Sample size(s); repeat or comma-separate for studies.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long)]
    reps: Option<usize>,
    /// Bootstrap draws per fit.
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Limit-law draws.
    #[arg(long, alias = "limit-draws")]
    draws: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file with configuration overrides (flags take precedence).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Centre the bootstrap at the widest-corridor fit and report its intervals.
    #[arg(long)]
    mode_fit: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit a dataset CSV (columns y,z1..zd,x1..xp).
    Fit {
        data: PathBuf,
        /// Truth file written by `simulate`, for error reporting.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate a dataset from one of the designs.
    Simulate(Common),
    RateStudy(Common),
    WeakconvStudy(Common),
    CoverageStudy(Common),
    /// Draw from the limit law of a design.
    LimitSample(Common),
}

fn resolve(cmd: Command, c: &Common) -> Result<RunConfig> {
    let overlay = match &c.config {
        Some(p) => Some(serde_json::from_str(&std::fs::read_to_string(p)?)?),
        None => None,
    };
    let mut cfg = RunConfig::resolve(cmd, overlay.as_ref())?;
    if let Some(v) = c.model {
        cfg.model = v;
    }
    if let Some(v) = c.scenario {
        cfg.scenario = v;
    }
    if let Some(v) = &c.n {
        cfg.n = v.clone();
    }
    if let Some(v) = c.reps {
        cfg.reps = v;
    }
    if let Some(v) = c.bootstrap {
        cfg.bootstrap = v;
    }
    if let Some(v) = c.level {
        cfg.level = v;
    }
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.draws {
        cfg.limit_draws = v;
    }
    cfg.mode_fit |= c.mode_fit;
    Ok(cfg)
}

fn out_dir(c: &Common) -> Result<&Path> {
    c.out.as_deref().ok_or_else(|| Error::Config("--out <dir> is required".into()))
}

fn run(cli: Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Fit { data, truth, common } => {
            let cfg = resolve(Command::Fit, common)?;
            let json = harness::cmd_fit(data, truth.as_deref(), &cfg, common.out.as_deref())?;
            if common.out.is_none() {
                print!("{json}");
            }
        }
        Cmd::Simulate(c) => harness::cmd_simulate(&resolve(Command::Simulate, c)?, out_dir(c)?)?,
        Cmd::RateStudy(c) => {
            harness::cmd_rate_study(&resolve(Command::RateStudy, c)?, out_dir(c)?)?;
        }
        Cmd::WeakconvStudy(c) => {
            harness::cmd_weakconv_study(&resolve(Command::WeakconvStudy, c)?, out_dir(c)?)?;
        }
        Cmd::CoverageStudy(c) => {
            harness::cmd_coverage_study(&resolve(Command::CoverageStudy, c)?, out_dir(c)?)?;
        }
        Cmd::LimitSample(c) => harness::cmd_limit_sample(&resolve(Command::LimitSample, c)?, out_dir(c)?)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

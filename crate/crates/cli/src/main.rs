//! `motionsketch plan|validate|sweep`: batch front end of the planner.
//!
//! Results go to files; the path of the machine-readable report is the only
//! thing printed on standard output. Logs go to standard error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use crate::commands::{Failure, SweepParam, EXIT_OK};
use crate::config::{Overrides, PlanConfig, DEFAULT_OUT};

#[derive(Parser)]
#[command(name = "motionsketch", version, about = "Sketch-based motion planning by geometric heat flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Built-in scenario name.
    #[arg(long, conflicts_with = "config")]
    scenario: Option<String>,
    /// TOML plan configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Penalty on constrained directions (> 1).
    #[arg(long)]
    k: Option<f64>,
    /// Number of nodes on the t grid (>= 3).
    #[arg(long)]
    grid: Option<usize>,
    /// Flow horizon (>= 0).
    #[arg(long)]
    smax: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Flow the sketch, extract controls and roll them out.
    Plan(Common),
    /// Check a configuration without flowing.
    Validate(Common),
    /// Run `plan` over a list of parameter values.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, default_value = "")]
        values: String,
    },
}

impl Common {
    fn load(&self) -> Result<PlanConfig, Failure> {
        let o = Overrides {
            scenario: self.scenario.clone(),
            k: self.k,
            grid: self.grid,
            s_max: self.smax,
            out: self.out.clone(),
        };
        commands::load(self.config.as_deref(), &o)
    }
}

fn parse_values(text: &str) -> Result<Vec<f64>, Failure> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|e| Failure::invalid(format!("bad sweep value `{s}`: {e}"))))
        .collect()
}

/// Runs the command; `Ok` carries the report path and exit code.
fn run(cli: &Cli) -> (Result<(PathBuf, i32), Failure>, PathBuf) {
    let common = match &cli.command {
        Command::Plan(c) | Command::Validate(c) => c,
        Command::Sweep { common, .. } => common,
    };
    let cfg = match common.load() {
        Ok(c) => c,
        Err(f) => return (Err(f), common.out.clone().unwrap_or_else(|| DEFAULT_OUT.into())),
    };
    let out = cfg.with_defaults().out.unwrap();
    let result = match &cli.command {
        Command::Plan(_) => cfg.resolve().and_then(|r| commands::plan(&r)).map(|o| (o.report, EXIT_OK)),
        Command::Validate(_) => cfg.resolve().and_then(|r| commands::validate(&r)).map(|p| (p, EXIT_OK)),
        Command::Sweep { param, values, .. } => parse_values(values).and_then(|v| commands::sweep(&cfg, *param, &v)),
    };
    (result, out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let (result, out) = run(&cli);
    match result {
        Ok((path, code)) => {
            println!("{}", path.display());
            ExitCode::from(code as u8)
        }
        Err(f) => {
            error!("{} (exit {})", f.message, f.code);
            match commands::write_failure(&out, &f) {
                Some(path) => println!("{}", path.display()),
                None => print!("{}", commands::failure_record(&f)),
            }
            ExitCode::from(f.code as u8)
        }
    }
}

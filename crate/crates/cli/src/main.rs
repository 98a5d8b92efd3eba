//! `snse`: run, ensemble, picard, verify and oracle experiments from a TOML
//! config. Exit status 0 on success, 1 if any check failed, 2 on bad input.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use snse_core::cli_io::{dispatch, Command};
use snse_core::config::{parse_config, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "snse", version, about = "Stochastic Navier-Stokes pseudospectral lab")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// TOML config; defaults apply to every missing key.
    #[arg(long, global = true, env = "SNSE_CONFIG")]
    config: Option<PathBuf>,

    /// Overrides `[noise] base_seed`.
    #[arg(long, global = true, env = "SNSE_SEED")]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, env = "SNSE_OUT", default_value = "out")]
    out: PathBuf,

    /// Worker threads for path-parallel work; 0 picks automatically.
    #[arg(long, global = true, env = "SNSE_THREADS", default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// One truncated path: trajectory.csv.
    Run,
    /// Monte Carlo ensemble: ensemble_report.json and paths.csv.
    Ensemble,
    /// Outer Picard trace and halved-parameter sweep.
    Picard,
    /// Reduced verification suite: verify.csv.
    Verify,
    /// Shear strong-convergence oracle: oracle.csv.
    Oracle,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Run => Command::Run,
            Cmd::Ensemble => Command::Ensemble,
            Cmd::Picard => Command::Picard,
            Cmd::Verify => Command::Verify,
            Cmd::Oracle => Command::Oracle,
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig, String> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| format!("cannot read {}: {e}", p.display()))?,
        None => String::new(),
    };
    let mut cfg = parse_config(&text).map_err(|e| e.to_string())?;
    if let Some(s) = cli.seed {
        cfg.base_seed = s;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match dispatch(cli.command.into(), &cfg, &cli.out, cli.threads) {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            for line in outcome.failure_lines() {
                println!("{line}");
            }
            if outcome.failed() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

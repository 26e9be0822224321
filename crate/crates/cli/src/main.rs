use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flowmc_cli::config;
use flowmc_cli::run::{estimate_evidence, run_experiment};
use flowmc_cli::CliError;

#[derive(Parser)]
#[command(name = "flowmc", version, about = "Flow-assisted MCMC experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a flow while sampling and write all run artifacts.
    Run {
        /// Experiment config (JSON); omitted fields take the experiment defaults.
        #[arg(long)]
        config: PathBuf,
        /// Override a config value, e.g. `--set train.k_max=10`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Overrides `master_seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate the evidence of a saved flow.
    Evidence {
        /// flow.json written by `flowmc run`.
        #[arg(long)]
        flow: PathBuf,
        /// Config describing the target the flow was trained on.
        #[arg(long)]
        config: PathBuf,
        /// Number of flow samples for the importance-sampling estimate.
        #[arg(long)]
        samples: usize,
        /// Override a config value.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Where to write evidence.json; defaults to the current directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Overrides `master_seed`; samples come from its evidence stream.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load(path: &PathBuf, mut overrides: Vec<String>, seed: Option<u64>) -> Result<config::ExperimentConfig, CliError> {
    if let Some(s) = seed {
        overrides.push(format!("master_seed={s}"));
    }
    config::load(path, &overrides)
}

fn main_inner(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            overrides,
            output_dir,
            seed,
        } => {
            let mut cfg = load(&config, overrides, seed)?;
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            let summary = run_experiment(&cfg)?;
            let e = &summary.evidence;
            println!("log_z_hat {} std_error {} n_eff {}", e.log_z_hat, e.std_error, e.n_eff);
            if let Some(d) = e.log_evidence_difference {
                println!("log_evidence_difference {d}");
            }
            println!("outputs in {}", summary.output_dir.display());
        }
        Command::Evidence {
            flow,
            config,
            samples,
            overrides,
            output_dir,
            seed,
        } => {
            let cfg = load(&config, overrides, seed)?;
            let dir = output_dir.unwrap_or_else(|| PathBuf::from("."));
            let out = estimate_evidence(&flow, &cfg, samples, &dir)?;
            let e = &out.report;
            println!("log_z_hat {} std_error {} n_eff {}", e.log_z_hat, e.std_error, e.n_eff);
            println!("wrote {}", out.path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("flowmc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

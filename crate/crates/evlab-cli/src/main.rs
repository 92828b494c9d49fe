//! `evlab`: config-driven experiment runner and verification harness for
//! sequential, anytime-valid multiple hypothesis testing.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use evlab::runner::{load_report, run_scenario, Overrides};
use evlab::verify::{run_suite, Suite};

#[derive(Parser)]
#[command(name = "evlab", version, about = "Stopped e-BH experiment lab", long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config file
    Run {
        /// Path to the config file
        config: PathBuf,
        /// Override the config's trial count (0 = exact enumeration,
        /// 1 = single trajectory, >= 100 = Monte Carlo)
        #[arg(long)]
        trials: Option<u64>,
        /// Override the config's RNG seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's e-BH level
        #[arg(long)]
        alpha: Option<f64>,
        /// Artifact directory (default: the config's output_dir key, else
        /// `<config stem>.out`)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-check the library's numerical claims
    Verify {
        /// One of: ebh, adjusters, stepwise, counterexample, all
        suite: String,
    },
    /// Pretty-print the summary.json of a previous run
    Report {
        /// Directory containing a run's artifacts
        results_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, trials, seed, alpha, out } => {
            let overrides = Overrides { trials, seed, alpha };
            let outcome = run_scenario(&config, &overrides, out.as_deref())
                .with_context(|| format!("running {}", config.display()))?;
            print!("{}", outcome.report.render());
            println!("artifacts: {}", outcome.out_dir.display());
            Ok(exit_for(outcome.report.ok()))
        }
        Command::Verify { suite } => {
            let suite: Suite = suite.parse()?;
            let report = run_suite(suite)?;
            print!("{}", report.render());
            Ok(exit_for(report.pass()))
        }
        Command::Report { results_dir } => {
            let report = load_report(&results_dir)
                .with_context(|| format!("loading {}", results_dir.display()))?;
            print!("{}", report.render());
            Ok(exit_for(report.ok()))
        }
    }
}

fn exit_for(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

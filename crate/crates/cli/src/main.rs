use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use dcsim::experiment::{list, run_all, ExperimentError, RunOptions};
use dcsim::io::parse_experiment;

/// Run a datacenter carbon experiment: expand the scenario matrix, simulate
/// every run and aggregate the results.
#[derive(Parser, Debug)]
#[command(name = "dcsim", version)]
struct Args {
    /// Experiment definition (JSON).
    #[arg(long)]
    experiment_path: PathBuf,

    /// Root of the output tree; runs land in `<dir>/<experiment>/<run-id>/`.
    #[arg(long, default_value = "output")]
    output_dir: PathBuf,

    /// Worker threads. Defaults to the number of CPUs.
    #[arg(long)]
    parallelism: Option<usize>,

    /// Skip runs that already completed in an existing output tree.
    #[arg(long)]
    resume: bool,

    /// Print the scenario matrix and exit.
    #[arg(long)]
    list: bool,

    /// Also write per-task naive-estimator vs. simulated emissions.
    #[arg(long)]
    analytic_compare: bool,
}

const EXIT_RUN_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    match run(args) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn run(args: Args) -> anyhow::Result<u8> {
    let spec = parse_experiment(&args.experiment_path)
        .with_context(|| format!("loading experiment {}", args.experiment_path.display()))?;
    if args.list {
        print!("{}", list(&spec));
        return Ok(0);
    }
    let parallelism = args
        .parallelism
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let opts = RunOptions {
        output_dir: args.output_dir,
        parallelism,
        resume: args.resume,
        analytic_compare: args.analytic_compare,
    };
    let outcome = match run_all(&spec, &opts) {
        Ok(o) => o,
        Err(e @ ExperimentError::Io { .. }) => {
            eprintln!("error: {e}");
            return Ok(EXIT_RUN_FAILED);
        }
        Err(e) => return Err(e.into()),
    };
    log::info!(
        "{} runs executed, {} resumed, {} failed",
        outcome.executed,
        outcome.skipped,
        outcome.failed.len()
    );
    for (id, msg) in &outcome.failed {
        eprintln!("run {id} failed: {msg}");
    }
    if let Some(e) = &outcome.aggregate_error {
        eprintln!("aggregation failed: {e}");
    }
    Ok(if outcome.success() { 0 } else { EXIT_RUN_FAILED })
}

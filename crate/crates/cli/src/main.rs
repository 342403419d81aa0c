use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use relkin_cli::experiments::RunError;
use relkin_cli::{list_experiments, run, Invocation};

/// Runs a relkin experiment from a JSON configuration file.
#[derive(Parser, Debug)]
#[command(name = "relkin", version, about)]
struct Args {
    /// Experiment name, or `list` to print the available experiments.
    experiment: String,
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for every stochastic step; overrides `simulation.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Use m = h = c = 1 regardless of the config's constants.
    #[arg(long)]
    natural_units: bool,
}

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("RELKIN_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| format!("RELKIN_THREADS={v:?} is not a thread count"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("thread pool: {e}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    if args.experiment == "list" {
        print!("{}", list_experiments());
        return ExitCode::SUCCESS;
    }
    if let Err(e) = init_threads() {
        eprintln!("relkin: configuration error: {e}");
        return ExitCode::from(2);
    }
    let Some(config) = args.config else {
        eprintln!("relkin: configuration error: --config is required");
        return ExitCode::from(2);
    };
    let inv = Invocation {
        experiment: args.experiment,
        config,
        out: args.out,
        seed: args.seed,
        natural_units: args.natural_units,
    };
    match run(&inv) {
        Ok((report, path)) => {
            match serde_json::to_string_pretty(&report) {
                Ok(s) => println!("{s}"),
                Err(e) => eprintln!("relkin: {e}"),
            }
            log::info!("report written to {}", path.display());
            if report.pass {
                ExitCode::SUCCESS
            } else {
                for c in report.failed() {
                    eprintln!(
                        "FAIL {}: value {:e}, target {:e}, tolerance {:e}",
                        c.name, c.value, c.target, c.tolerance
                    );
                }
                for w in &report.warnings {
                    eprintln!("warning: {w}");
                }
                ExitCode::from(1)
            }
        }
        Err(e @ RunError::Config(_)) => {
            eprintln!("relkin: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("relkin: {e}");
            ExitCode::from(1)
        }
    }
}

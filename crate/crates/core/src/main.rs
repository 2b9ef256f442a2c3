use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kinctrl::cli::{self, compare::Metric, CliError, RunOptions, OUT_DIR_ENV};

#[derive(Debug, Parser)]
#[command(name = "kinctrl", version, about = "Controlled kinetic epidemic experiments")]
struct Args {
    /// Worker threads for the parallel solvers.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario from a config file, a manifest or a bundled config name.
    Run {
        config: String,
        /// Seed for stochastic scenarios, overriding the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory (default: $KINCTRL_OUT_DIR/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = OUT_DIR_ENV, hide = true)]
        out_root: Option<PathBuf>,
    },
    /// Compare two run directories.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, value_enum)]
        metric: Metric,
        /// Fail (exit 1) above this value; defaults to the first run's `compare_threshold`.
        #[arg(long)]
        threshold: Option<f64>,
        /// Report file (default: <a>/compare_<metric>.json).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// List scenario kinds and bundled configs.
    ListScenarios,
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn execute(args: Args) -> Result<(), CliError> {
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    match args.command {
        Command::Run {
            config,
            seed,
            out,
            out_root,
        } => {
            let res = cli::run(&config, &RunOptions { seed, out, out_root })?;
            let summary = serde_json::to_string_pretty(&res.manifest["summary"]).unwrap_or_default();
            emit(&format!("{}\n{summary}\n", res.dir.display()));
        }
        Command::Compare {
            a,
            b,
            metric,
            threshold,
            report,
        } => {
            let r = cli::compare_runs(&a, &b, metric, report.as_deref())?;
            let details = serde_json::to_string_pretty(&r.details).unwrap_or_default();
            emit(&format!("{} = {:?}\n{details}\n", cli::metric_name(metric), r.value));
            cli::check_threshold(&r, threshold, &a)?;
        }
        Command::ListScenarios => emit(&cli::scenario_listing()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kinctrl: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

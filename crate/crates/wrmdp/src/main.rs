use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wrmdp::harness::{self, ExperimentConfig};

#[derive(Parser)]
#[command(name = "wrmdp", version, about = "MDP robustness and learning-rate experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a TOML config and write CSV + summary JSON.
    Run {
        /// Experiment config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output directory; falls back to the config's out_dir, then
        /// the WRMDP_OUT environment variable, then ./out.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; default lets rayon pick.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Fit a power law y = c * x^s to two columns of a records CSV.
    FitRate {
        #[arg(long)]
        csv: PathBuf,
        /// Column used as x (e.g. n).
        #[arg(long, default_value = "n")]
        x: String,
        /// Column used as y (e.g. loss).
        #[arg(long, default_value = "loss")]
        y: String,
    },
    /// Print a pass/fail table over every summary JSON in a directory.
    Summarize {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn resolve_out_dir(flag: Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    flag.or_else(|| cfg.out_dir.clone().map(PathBuf::from))
        .or_else(|| std::env::var_os("WRMDP_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn run() -> Result<(), harness::HarnessError> {
    match Cli::parse().command {
        Command::Run { config, out, jobs } => {
            if let Some(k) = jobs {
                // best effort: a later `run` in the same process would have
                // already installed a pool, which is fine
                let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
            }
            let cfg = ExperimentConfig::from_toml_path(&config)?;
            let dir = resolve_out_dir(out, &cfg);
            let outcome = harness::run_experiment(&cfg)?;
            let (csv_path, json_path) = harness::write_outputs(&outcome, &dir)?;
            let s = &outcome.summary;
            println!(
                "{}: rows {} violations {} min_slack {:.3e} pass {}",
                s.experiment, s.rows, s.violations, s.min_slack, s.pass
            );
            println!("wrote {}", csv_path.display());
            println!("wrote {}", json_path.display());
            if !s.pass {
                return Err(harness::HarnessError::Config(format!(
                    "experiment {} failed its acceptance check",
                    s.experiment
                )));
            }
            Ok(())
        }
        Command::FitRate { csv, x, y } => {
            let fit = harness::fit_rate_from_csv(&csv, &x, &y)?;
            println!(
                "slope {:.6} intercept {:.6} r2 {:.6}",
                fit.slope, fit.intercept, fit.r2
            );
            Ok(())
        }
        Command::Summarize { dir } => {
            print!("{}", harness::summarize_dir(&dir)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

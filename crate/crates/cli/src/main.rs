use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nfwbo::harness::{format_table, run_experiment, ExperimentConfig};
use nfwbo::objectives::SYNTHETIC_OBJECTIVES;

/// Output directory used when neither `--out` nor the config names one.
const OUT_DIR_ENV: &str = "NFWBO_OUT_DIR";
const EXIT_CONFIG: u8 = 1;
const EXIT_RUN_FAILURES: u8 = 2;

#[derive(Parser)]
#[command(name = "nfwbo", version, about = "Multi-fidelity Bayesian optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (method, seed) pair of an experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Concurrent runs; overrides the config.
        #[arg(long)]
        workers: Option<usize>,
        /// Output directory; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in synthetic objectives.
    ListObjectives,
    /// Check a config without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::ListObjectives => {
            for (name, about) in SYNTHETIC_OBJECTIVES {
                println!("{name:<12} {about}");
            }
            ExitCode::SUCCESS
        }
        Command::Validate { config } => match ExperimentConfig::load(&config) {
            Ok(cfg) => {
                println!(
                    "{}: ok ({} methods x {} seeds on {})",
                    config.display(),
                    cfg.methods.len(),
                    cfg.seeds.len(),
                    cfg.objective.name()
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_CONFIG)
            }
        },
        Command::Run { config, workers, out } => {
            let cfg = match ExperimentConfig::load(&config) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            let workers = workers.unwrap_or(cfg.workers);
            let out = out
                .or_else(|| cfg.output_dir.clone())
                .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("nfwbo-out"));
            let report = match run_experiment(&cfg, workers, &out) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            print!("{}", format_table(&report.summary));
            println!("artifacts in {}", out.display());
            let mut failed = false;
            for f in report.failures() {
                failed = true;
                eprintln!("run {} seed {} failed: {}", f.method, f.seed, f.error.as_deref().unwrap_or("no result"));
            }
            if failed {
                ExitCode::from(EXIT_RUN_FAILURES)
            } else {
                ExitCode::SUCCESS
            }
        }
    }
}

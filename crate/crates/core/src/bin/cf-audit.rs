//! Command-line front end for batch counterfactual audits.

use std::path::PathBuf;
use std::process::ExitCode;

use cf_audit::harness::{Experiment, ExperimentConfig, DEFAULT_GRID_PADDING};
use cf_audit::Error;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cf-audit", version, about = "Audit counterfactual explanations of a classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Explain every test instance and write audit_rows.csv, aggregate.json and run_meta.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; defaults to the number of CPUs.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Write the classifier's decision regions on a 2-D grid as grid.csv.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        resolution: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Extra margin around the data, as a fraction of each feature's range.
        #[arg(long, default_value_t = DEFAULT_GRID_PADDING)]
        padding: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cf-audit: {e}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, out, workers } => {
            let cfg = ExperimentConfig::load(&config)?;
            let workers = match workers {
                Some(0) => return Err(Error::Config("--workers must be at least 1".into())),
                Some(n) => n,
                None => std::thread::available_parallelism().map_or(1, |n| n.get()),
            };
            let exp = Experiment::prepare(&cfg)?;
            let report = exp.audit(workers)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            report.write(&exp, &dir, workers)?;
            println!(
                "audited {} test instances (test accuracy {:.3}); results in {}",
                exp.split.test.len(),
                exp.test_accuracy,
                dir.display()
            );
            Ok(())
        }
        Command::Grid {
            config,
            resolution,
            out,
            padding,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let exp = Experiment::prepare(&cfg)?;
            let grid = exp.decision_grid(resolution, padding)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let path = dir.join("grid.csv");
            std::fs::write(&path, grid.to_csv()).map_err(|e| Error::io(&path, e))?;
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}

//! `gul`: learning curves for linear classifiers on random labels.
//!
//! Subcommands: `predict` (replica theory curves), `simulate` (finite-size
//! ERM curves), `compare` (theory vs simulation report), `moments` (dataset
//! moments and homogeneity diagnostics).
//!
//! Exit codes: 0 success; 1 usage or I/O error; 2 numerical failure in at
//! least one sweep point; 3 compare-threshold breach. `GUL_THREADS` caps the
//! worker pool.

use clap::{Parser, Subcommand};
use gul_core::harness::{
    emit_svg, run_compare, run_moments, run_predict, run_simulate, ExperimentConfig,
    HarnessError, LearningCurve,
};
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_OK: u8 = 0;
const EXIT_USAGE_IO: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_THRESHOLD: u8 = 3;

#[derive(Parser)]
#[command(
    name = "gul",
    about = "Asymptotic and simulated training curves for random-label linear classification",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the self-consistent equations over the configured sweep.
    Predict {
        #[arg(long)]
        config: PathBuf,
        /// Output CSV path (falls back to the config's outputs.csv).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Run finite-size ERM simulations over the configured sweep.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Join a theory CSV and a simulation CSV and score the deviations.
    Compare {
        #[arg(long)]
        theory: PathBuf,
        #[arg(long)]
        sim: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Fail (exit 3) if any |deviation|/stderr exceeds this.
        #[arg(long)]
        max_z: Option<f64>,
        /// Fail (exit 3) if any |deviation| exceeds this.
        #[arg(long)]
        max_dev: Option<f64>,
    },
    /// Dataset mean/covariance and per-class homogeneity diagnostics.
    Moments {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out_prefix: PathBuf,
    },
}

fn write_curve(
    curve: &LearningCurve,
    out: Option<PathBuf>,
    cfg_out: Option<PathBuf>,
    svg: Option<PathBuf>,
    cfg_svg: Option<PathBuf>,
) -> Result<(), HarnessError> {
    let Some(out) = out.or(cfg_out) else {
        return Err(HarnessError::Config(
            "no output CSV path given (use --out or outputs.csv in the config)".into(),
        ));
    };
    curve.write_csv(&out)?;
    eprintln!("wrote {} rows to {}", curve.rows.len(), out.display());
    if let Some(svg_path) = svg.or(cfg_svg) {
        emit_svg(curve, &svg_path)?;
        eprintln!("wrote plot to {}", svg_path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<u8, HarnessError> {
    match cli.command {
        Command::Predict { config, out, svg } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let curve = run_predict(&cfg)?;
            let failed = curve.any_failed();
            write_curve(&curve, out, cfg.outputs.csv.clone(), svg, cfg.outputs.svg.clone())?;
            Ok(if failed { EXIT_NUMERICAL } else { EXIT_OK })
        }
        Command::Simulate { config, out, svg } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let curve = run_simulate(&cfg)?;
            let failed = curve.any_failed();
            write_curve(&curve, out, cfg.outputs.csv.clone(), svg, cfg.outputs.svg.clone())?;
            Ok(if failed { EXIT_NUMERICAL } else { EXIT_OK })
        }
        Command::Compare {
            theory,
            sim,
            report,
            max_z,
            max_dev,
        } => {
            let theory_curve = LearningCurve::read_csv(&theory)?;
            let sim_curve = LearningCurve::read_csv(&sim)?;
            let rep = run_compare(&theory_curve, &sim_curve, max_dev, max_z)?;
            std::fs::write(&report, rep.to_text()).map_err(|e| {
                HarnessError::Config(format!("cannot write {}: {e}", report.display()))
            })?;
            let csv_path = report.with_extension("csv");
            std::fs::write(&csv_path, rep.to_csv()).map_err(|e| {
                HarnessError::Config(format!("cannot write {}: {e}", csv_path.display()))
            })?;
            print!("{}", rep.to_text());
            Ok(if rep.pass { EXIT_OK } else { EXIT_THRESHOLD })
        }
        Command::Moments {
            data,
            labels,
            out_prefix,
        } => {
            let art = run_moments(&data, labels.as_deref(), &out_prefix)?;
            eprintln!(
                "{} samples in dimension {}; wrote {} and {}",
                art.n_samples,
                art.dim,
                art.mean_path.display(),
                art.cov_path.display()
            );
            if let Some(rep) = &art.report {
                println!(
                    "homogeneity score (max pairwise correlation distance): {:.6}",
                    rep.score
                );
                println!(
                    "max pairwise covariance distance: {:.6}",
                    rep.covariance_score
                );
            }
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap's default error exit code is 2, which this tool reserves for
    // numerical failures; usage problems must exit 1.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let usage_error = err.use_stderr();
            let _ = err.print();
            return ExitCode::from(if usage_error { EXIT_USAGE_IO } else { EXIT_OK });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                // Solver/fitter trouble surfaced at this level is numerical.
                HarnessError::Replica(_) | HarnessError::Erm(_) => EXIT_NUMERICAL,
                _ => EXIT_USAGE_IO,
            };
            ExitCode::from(code)
        }
    }
}

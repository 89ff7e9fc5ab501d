//! Sweep execution: theory curves via the saddle-point solver, simulation
//! curves via the fitters, both over a bounded worker pool.

use crate::erm::{self, Dataset, Provenance};
use crate::harness::config::{ExperimentConfig, ResolvedModel};
use crate::harness::curve::{CurveRow, LearningCurve, Source};
use crate::harness::HarnessError;
use crate::prox::Loss;
use crate::replica::{solve_saddle, SaddleConfig};
use crate::spectra::MixtureModel;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Mutex;

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "GUL_THREADS";

/// Smallest regularization the hinge dual solver is run at; smaller
/// requested values are floored here and the substitution error is probed
/// at ten times the floor.
const HINGE_LAMBDA_FLOOR: f64 = 1e-8;

fn pool_size(tasks: usize) -> usize {
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v >= 1);
    let hw = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    cap.unwrap_or(hw).min(tasks.max(1))
}

/// Runs the closures on a bounded pool; results come back in task order
/// whatever the scheduling.
fn run_pool<T: Send>(tasks: Vec<Box<dyn FnOnce() -> T + Send + '_>>, threads: usize) -> Vec<T> {
    let n = tasks.len();
    let queue = Mutex::new(tasks.into_iter().enumerate().collect::<Vec<_>>());
    let results = Mutex::new((0..n).map(|_| None).collect::<Vec<Option<T>>>());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let job = queue.lock().expect("queue poisoned").pop();
                let Some((idx, task)) = job else { break };
                let out = task();
                results.lock().expect("results poisoned")[idx] = Some(out);
            });
        }
    });
    results
        .into_inner()
        .expect("results poisoned")
        .into_iter()
        .map(|r| r.expect("task completed"))
        .collect()
}

/// `n = round(alpha * p)` with ties to even.
pub fn samples_for(alpha: f64, p: usize) -> usize {
    (alpha * p as f64).round_ties_even() as usize
}

/// Theory curve: one saddle-point solve per (loss, alpha, lambda), the
/// alpha sweep warm-started from the previous fixed point. Non-converged
/// points are recorded and the sweep continues cold.
pub fn run_predict(cfg: &ExperimentConfig) -> Result<LearningCurve, HarnessError> {
    cfg.validate()?;
    let resolved = cfg.resolve_model()?;
    let model = resolved.theory_model();
    let saddle = cfg.saddle_config();

    let mut tasks: Vec<Box<dyn FnOnce() -> Vec<CurveRow> + Send>> = Vec::new();
    for &loss in &cfg.losses {
        for &lambda in &cfg.lambdas {
            let alphas = cfg.alphas.clone();
            let saddle = saddle.clone();
            let model = model.clone();
            tasks.push(Box::new(move || {
                predict_sweep(&model, loss, lambda, &alphas, &saddle)
            }));
        }
    }
    let threads = pool_size(tasks.len());
    let mut curve = LearningCurve::default();
    for rows in run_pool(tasks, threads) {
        curve.rows.extend(rows);
    }
    curve.sort();
    Ok(curve)
}

fn predict_sweep(
    model: &MixtureModel,
    loss: Loss,
    lambda: f64,
    alphas: &[f64],
    saddle: &SaddleConfig,
) -> Vec<CurveRow> {
    let mut rows = Vec::with_capacity(alphas.len());
    let mut warm = saddle.clone();
    for &alpha in alphas {
        match solve_saddle(model, loss, alpha, lambda, &warm) {
            Ok(sol) => {
                rows.push(CurveRow {
                    loss,
                    alpha,
                    lambda,
                    source: Source::Theory,
                    mean_loss: sol.training_loss,
                    stderr_loss: None,
                    mean_01: sol.loss01,
                    stderr_01: None,
                    n_seeds: 0,
                    converged: true,
                });
                warm.init = Some(sol.state);
            }
            Err(err) => {
                log::warn!("theory point ({loss}, alpha={alpha}, lambda={lambda}) failed: {err}");
                rows.push(CurveRow {
                    loss,
                    alpha,
                    lambda,
                    source: Source::Theory,
                    mean_loss: f64::NAN,
                    stderr_loss: None,
                    mean_01: f64::NAN,
                    stderr_01: None,
                    n_seeds: 0,
                    converged: false,
                });
                warm.init = None;
            }
        }
    }
    rows
}

/// SplitMix64: derives per-point dataset seeds from the base seed and the
/// sweep indices, independent of scheduling.
fn derive_seed(base: u64, alpha_idx: usize, seed_idx: u32) -> u64 {
    let mut z = base
        .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(1 + alpha_idx as u64))
        .wrapping_add(0x517cc1b727220a95u64.wrapping_mul(1 + seed_idx as u64));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn make_dataset(
    resolved: &ResolvedModel,
    p: usize,
    n: usize,
    seed: u64,
) -> Result<Dataset, HarnessError> {
    match resolved {
        ResolvedModel::Mixture(model) => Ok(erm::sample_mixture(model, n, seed)?),
        ResolvedModel::Data {
            features,
            provenance,
            ..
        } => {
            if features.nrows() != p {
                return Err(HarnessError::Config(format!(
                    "feature dimension {} does not match p = {p}",
                    features.nrows()
                )));
            }
            if n > features.ncols() {
                return Err(HarnessError::Config(format!(
                    "requested {n} samples, file provides {}",
                    features.ncols()
                )));
            }
            // Seeded subsample of columns plus fresh Rademacher labels: the
            // random-label protocol on real features.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx: Vec<usize> = (0..features.ncols()).collect();
            idx.shuffle(&mut rng);
            idx.truncate(n);
            let x = DMatrix::from_fn(p, n, |i, j| features[(i, idx[j])]);
            let y: Vec<f64> = (0..n)
                .map(|_| if rand::Rng::random::<bool>(&mut rng) { 1.0 } else { -1.0 })
                .collect();
            Ok(Dataset::new(
                x,
                y,
                Provenance::File {
                    path: provenance.clone(),
                    normalization: String::new(),
                    feature_map: None,
                },
            )?)
        }
    }
}

struct SeedOutcome {
    train_loss: f64,
    zero_one: f64,
}

fn fit_point(data: &Dataset, loss: Loss, lambda: f64) -> Result<SeedOutcome, HarnessError> {
    let fit = match loss {
        Loss::Square => erm::fit_ridge(data, lambda)?,
        Loss::Logistic => {
            if lambda <= 0.0 {
                return Err(HarnessError::Config(
                    "logistic fitter needs lambda > 0".into(),
                ));
            }
            erm::fit_logistic(data, lambda, 1e-8)?
        }
        Loss::Hinge => {
            if lambda <= 0.0 {
                return Err(HarnessError::Config("hinge fitter needs lambda > 0".into()));
            }
            let eff = lambda.max(HINGE_LAMBDA_FLOOR);
            let fit = erm::fit_hinge(data, eff, 1e-8)?;
            if eff > lambda {
                // Vanishing-regularization substitution: quantify it at 10x
                // the floor.
                let probe = erm::fit_hinge(data, eff * 10.0, 1e-8)?;
                let m_eff = erm::training_metrics(&fit.theta, data, loss, 0.0).train_loss;
                let m_probe = erm::training_metrics(&probe.theta, data, loss, 0.0).train_loss;
                log::info!(
                    "hinge lambda {lambda:e} floored to {eff:e}; loss sensitivity {:.3e}",
                    (m_eff - m_probe).abs()
                );
            }
            fit
        }
    };
    let metrics = erm::training_metrics(&fit.theta, data, loss, lambda);
    Ok(SeedOutcome {
        train_loss: metrics.train_loss,
        zero_one: metrics.zero_one_error,
    })
}

fn mean_and_stderr(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    (mean, Some((var / n as f64).sqrt()))
}

/// Simulation curve: for each (loss, alpha, lambda), `seeds` datasets of
/// `n = round(alpha p)` samples are fitted and the metrics aggregated.
/// Fitter failures are recorded per point; the run continues.
pub fn run_simulate(cfg: &ExperimentConfig) -> Result<LearningCurve, HarnessError> {
    cfg.validate()?;
    let resolved = cfg.resolve_model()?;
    let resolved = &resolved;

    struct Point {
        loss: Loss,
        alpha: f64,
        alpha_idx: usize,
        lambda: f64,
    }
    let mut points = Vec::new();
    for &loss in &cfg.losses {
        for (alpha_idx, &alpha) in cfg.alphas.iter().enumerate() {
            for &lambda in &cfg.lambdas {
                points.push(Point {
                    loss,
                    alpha,
                    alpha_idx,
                    lambda,
                });
            }
        }
    }

    let tasks: Vec<Box<dyn FnOnce() -> CurveRow + Send>> = points
        .into_iter()
        .map(|pt| {
            let cfg_p = cfg.p;
            let seeds = cfg.seeds;
            let base_seed = cfg.base_seed;
            Box::new(move || {
                let n = samples_for(pt.alpha, cfg_p).max(1);
                let mut losses = Vec::with_capacity(seeds as usize);
                let mut errors01 = Vec::with_capacity(seeds as usize);
                let mut ok = true;
                for seed_idx in 0..seeds {
                    let seed = derive_seed(base_seed, pt.alpha_idx, seed_idx);
                    let outcome = make_dataset(resolved, cfg_p, n, seed)
                        .and_then(|data| fit_point(&data, pt.loss, pt.lambda));
                    match outcome {
                        Ok(o) => {
                            losses.push(o.train_loss);
                            errors01.push(o.zero_one);
                        }
                        Err(err) => {
                            log::warn!(
                                "simulation point ({}, alpha={}, lambda={}, seed {seed_idx}) failed: {err}",
                                pt.loss,
                                pt.alpha,
                                pt.lambda
                            );
                            ok = false;
                        }
                    }
                }
                let (mean_loss, stderr_loss) = mean_and_stderr(&losses);
                let (mean_01, stderr_01) = mean_and_stderr(&errors01);
                CurveRow {
                    loss: pt.loss,
                    alpha: pt.alpha,
                    lambda: pt.lambda,
                    source: Source::Simulation,
                    mean_loss,
                    stderr_loss,
                    mean_01,
                    stderr_01,
                    n_seeds: losses.len() as u32,
                    converged: ok,
                }
            }) as Box<dyn FnOnce() -> CurveRow + Send>
        })
        .collect();

    let threads = pool_size(tasks.len());
    let mut curve = LearningCurve {
        rows: run_pool(tasks, threads),
    };
    curve.sort();
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config_json(losses: &str, alphas: &str, lambdas: &str, p: usize, seeds: u32) -> String {
        format!(
            r#"{{
                "model": {{"kind": "mixture", "clusters": [
                    {{"rho": 1.0, "cov": {{"kind": "isotropic", "scale": 1.0}}}}
                ]}},
                "losses": [{losses}],
                "alphas": [{alphas}],
                "lambdas": [{lambdas}],
                "p": {p},
                "seeds": {seeds}
            }}"#
        )
    }

    #[test]
    fn ties_to_even_sample_counts() {
        assert_eq!(samples_for(0.5, 5), 2); // 2.5 -> 2
        assert_eq!(samples_for(0.7, 5), 4); // 3.5 -> 4
        assert_eq!(samples_for(2.0, 100), 200);
    }

    #[test]
    fn predict_square_ridgeless_points() {
        let cfg: ExperimentConfig = serde_json::from_str(&config_json(
            "\"square\"",
            "2.0, 4.0",
            "1e-10",
            8,
            1,
        ))
        .unwrap();
        let curve = run_predict(&cfg).unwrap();
        assert_eq!(curve.rows.len(), 2);
        assert!((curve.rows[0].mean_loss - 0.25).abs() <= 1e-4);
        assert!((curve.rows[1].mean_loss - 0.375).abs() <= 1e-4);
        assert!(curve.rows.iter().all(|r| r.converged));
    }

    #[test]
    fn predict_hinge_below_separability_threshold() {
        let cfg: ExperimentConfig =
            serde_json::from_str(&config_json("\"hinge\"", "1.5", "1e-10", 8, 1)).unwrap();
        let curve = run_predict(&cfg).unwrap();
        assert!(curve.rows[0].converged);
        assert!(curve.rows[0].mean_loss <= 1e-6);
    }

    #[test]
    fn predict_empty_alphas_gives_empty_curve() {
        let cfg: ExperimentConfig =
            serde_json::from_str(&config_json("\"square\"", "", "0.1", 8, 1)).unwrap();
        let curve = run_predict(&cfg).unwrap();
        assert!(curve.rows.is_empty());
    }

    #[test]
    fn simulate_interpolating_ridge_is_exact() {
        // p = 200, alpha = 0.5, lambda = 0: interpolation, zero loss.
        let cfg: ExperimentConfig = serde_json::from_str(&config_json(
            "\"square\"",
            "0.5",
            "0.0",
            200,
            2,
        ))
        .unwrap();
        let curve = run_simulate(&cfg).unwrap();
        assert_eq!(curve.rows.len(), 1);
        assert!(curve.rows[0].converged);
        assert!(curve.rows[0].mean_loss <= 1e-10, "loss {}", curve.rows[0].mean_loss);
        assert!(curve.rows[0].stderr_loss.is_some());
    }

    #[test]
    fn single_seed_has_no_stderr() {
        let cfg: ExperimentConfig =
            serde_json::from_str(&config_json("\"square\"", "1.5", "0.1", 20, 1)).unwrap();
        let curve = run_simulate(&cfg).unwrap();
        assert_eq!(curve.rows[0].n_seeds, 1);
        assert!(curve.rows[0].stderr_loss.is_none());
        assert!(curve.rows[0].stderr_01.is_none());
    }

    #[test]
    fn simulate_is_deterministic() {
        let cfg: ExperimentConfig = serde_json::from_str(&config_json(
            "\"square\", \"hinge\"",
            "0.8, 1.6",
            "0.1",
            24,
            3,
        ))
        .unwrap();
        let a = run_simulate(&cfg).unwrap().to_csv();
        let b = run_simulate(&cfg).unwrap().to_csv();
        assert_eq!(a, b);
    }

    #[test]
    fn data_file_model_feeds_theory_and_simulation() {
        // External feature matrix: theory runs on its empirical covariance,
        // simulations subsample its columns with fresh Rademacher labels.
        use crate::spectra::{CovarianceModel, MixtureModel};
        let dir = tempfile::tempdir().unwrap();
        let model = MixtureModel::gcm(CovarianceModel::isotropic(1.0, 12).unwrap()).unwrap();
        let pool = crate::erm::sample_mixture(&model, 400, 5).unwrap();
        let stored = pool.x().transpose();
        let path = dir.path().join("features.gumm");
        crate::io::write_matrix_gumm(&path, &stored).unwrap();

        let cfg: ExperimentConfig = serde_json::from_str(&format!(
            r#"{{
                "model": {{"kind": "data", "path": {:?}, "normalization": "per_coordinate"}},
                "losses": ["square"],
                "alphas": [0.5, 2.0],
                "lambdas": [0.1],
                "p": 12,
                "seeds": 2
            }}"#,
            path.to_string_lossy()
        ))
        .unwrap();
        let theory = run_predict(&cfg).unwrap();
        assert_eq!(theory.rows.len(), 2);
        assert!(theory.rows.iter().all(|r| r.converged));
        let sim = run_simulate(&cfg).unwrap();
        assert!(sim.rows.iter().all(|r| r.converged));
        // Standardized isotropic features: theory should be near the
        // identity-covariance prediction and the simulation near the theory.
        for (t, s) in theory.rows.iter().zip(&sim.rows) {
            assert!((t.mean_loss - s.mean_loss).abs() < 0.1);
        }
        // Requesting more samples than the file provides is a recorded
        // failure, not an abort.
        let mut over = cfg.clone();
        over.alphas = vec![1000.0];
        let res = run_simulate(&over).unwrap();
        assert!(!res.rows[0].converged);
    }

    #[test]
    fn warm_and_cold_starts_agree() {
        let cfg: ExperimentConfig = serde_json::from_str(&config_json(
            "\"logistic\"",
            "0.5, 1.0, 2.0, 3.0",
            "0.05",
            12,
            1,
        ))
        .unwrap();
        let swept = run_predict(&cfg).unwrap();
        // Cold start each point individually.
        for row in &swept.rows {
            let single: ExperimentConfig = serde_json::from_str(&config_json(
                "\"logistic\"",
                &format!("{}", row.alpha),
                "0.05",
                12,
                1,
            ))
            .unwrap();
            let cold = run_predict(&single).unwrap();
            assert!(
                (cold.rows[0].mean_loss - row.mean_loss).abs() <= 1e-9,
                "alpha {}: warm {} cold {}",
                row.alpha,
                row.mean_loss,
                cold.rows[0].mean_loss
            );
        }
    }
}

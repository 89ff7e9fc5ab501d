//! Finite-size empirical risk minimization: mixture sampling, random feature
//! maps, and the three fitters (closed-form ridge, quasi-Newton logistic,
//! dual coordinate ascent for the hinge).

use crate::prox::{self, Loss};
use crate::spectra::{CovarianceModel, MixtureModel, SpectraError};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const LOGISTIC_MAX_ITER: usize = 100_000;
const HINGE_MAX_EPOCHS: usize = 10_000;
const LBFGS_MEMORY: usize = 10;

#[derive(Debug, Error)]
pub enum ErmError {
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("design matrix rank {rank} below {needed}; normal system singular beyond pseudo-inverse tolerance")]
    SingularSystem { rank: usize, needed: usize },
    #[error("{solver} did not converge after {iterations} iterations (criterion value {criterion:e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        criterion: f64,
    },
}

/// Where a dataset came from; kept for reproducibility records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Generator { desc: String, seed: u64 },
    File {
        path: String,
        normalization: String,
        feature_map: Option<String>,
    },
}

/// Design matrix with samples as columns and Rademacher labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: Vec<f64>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: Vec<f64>, provenance: Provenance) -> Result<Self, ErmError> {
        if y.len() != x.ncols() {
            return Err(ErmError::InvalidData(format!(
                "{} labels for {} samples",
                y.len(),
                x.ncols()
            )));
        }
        if x.ncols() == 0 {
            return Err(ErmError::InvalidData("empty dataset".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ErmError::InvalidData("design matrix has non-finite entries".into()));
        }
        if y.iter().any(|&l| l != 1.0 && l != -1.0) {
            return Err(ErmError::InvalidData("labels must be -1 or +1".into()));
        }
        Ok(Dataset { x, y, provenance })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.ncols()
    }

    pub fn p(&self) -> usize {
        self.x.nrows()
    }
}

/// Square root factor of a covariance, cached per cluster while sampling.
enum CovFactor {
    Diag(Vec<f64>),
    Dense(DMatrix<f64>),
}

impl CovFactor {
    fn build(cov: &CovarianceModel) -> CovFactor {
        match cov {
            CovarianceModel::Isotropic { scale, dim } => {
                CovFactor::Diag(vec![scale.sqrt(); *dim])
            }
            CovarianceModel::Spectral { eigenvalues, .. } => {
                CovFactor::Diag(eigenvalues.iter().map(|e| e.sqrt()).collect())
            }
            CovarianceModel::Dense { matrix } => {
                // Eigen square root; tiny negative eigenvalues from roundoff
                // clamp to zero.
                let eig = matrix.clone().symmetric_eigen();
                let mut sqrt_d = eig.eigenvalues;
                sqrt_d.apply(|v| *v = v.max(0.0).sqrt());
                let mut l = eig.eigenvectors;
                for (j, s) in sqrt_d.iter().enumerate() {
                    l.column_mut(j).scale_mut(*s);
                }
                CovFactor::Dense(l)
            }
        }
    }

    fn apply(&self, g: &DVector<f64>) -> DVector<f64> {
        match self {
            CovFactor::Diag(d) => DVector::from_fn(d.len(), |i, _| d[i] * g[i]),
            CovFactor::Dense(l) => l * g,
        }
    }
}

/// Per-sample counter-based stream: the generator is keyed by the
/// experiment seed and the sample index, so datasets are identical however
/// the sampling loop is scheduled.
fn sample_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws `n` samples from the mixture with Rademacher labels independent of
/// the inputs. Per sample: label, then cluster index, then the Gaussian
/// vector.
pub fn sample_mixture(model: &MixtureModel, n: usize, seed: u64) -> Result<Dataset, ErmError> {
    assert!(n >= 1, "need at least one sample");
    let p = model.dim();
    let factors: Vec<CovFactor> = model
        .clusters()
        .iter()
        .map(|c| CovFactor::build(&c.cov))
        .collect();
    let cumulative: Vec<f64> = model
        .clusters()
        .iter()
        .scan(0.0, |acc, c| {
            *acc += c.rho;
            Some(*acc)
        })
        .collect();

    let mut x = DMatrix::<f64>::zeros(p, n);
    let mut y = Vec::with_capacity(n);
    for mu in 0..n {
        let mut rng = sample_stream(seed, mu as u64);
        y.push(if rng.random::<bool>() { 1.0 } else { -1.0 });
        let u: f64 = rng.random();
        let c = cumulative.iter().position(|&acc| u < acc).unwrap_or(model.k() - 1);
        let g = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
        let col = &model.clusters()[c].mean + factors[c].apply(&g);
        x.set_column(mu, &col);
    }
    Dataset::new(
        x,
        y,
        Provenance::Generator {
            desc: format!("mixture(K={}, p={p})", model.k()),
            seed,
        },
    )
}

/// Pointwise nonlinearity of the random feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Erf,
    Relu,
    Tanh,
}

impl Nonlinearity {
    fn apply(&self, x: f64) -> f64 {
        match self {
            Nonlinearity::Erf => libm::erf(x),
            Nonlinearity::Relu => x.max(0.0),
            Nonlinearity::Tanh => x.tanh(),
        }
    }
}

/// Random feature map: `F` is `p x d` with `N(0, 1/d)` entries and each
/// output column is `sigma(F z)`.
pub fn random_features(z: &DMatrix<f64>, p: usize, nonlinearity: Nonlinearity, seed: u64) -> DMatrix<f64> {
    let d = z.nrows();
    assert!(d >= 1 && p >= 1, "feature map needs d, p >= 1");
    let scale = 1.0 / (d as f64).sqrt();
    // Dedicated stream index keeps the projection independent of the
    // per-sample streams drawn from the same seed.
    let mut rng = sample_stream(seed, u64::MAX);
    let f = DMatrix::<f64>::from_fn(p, d, |_, _| {
        let g: f64 = StandardNormal.sample(&mut rng);
        scale * g
    });
    let mut out = &f * z;
    out.apply(|v| *v = nonlinearity.apply(*v));
    out
}

/// Fitted estimator with its certificate.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta: DVector<f64>,
    pub objective: f64,
    /// Gradient norm for the smooth fitters, relative duality gap for the
    /// hinge solver, residual gradient norm for ridge.
    pub grad_norm_or_gap: f64,
    pub iterations: usize,
}

impl FitResult {
    /// Writes the estimator as a single-row matrix in the shared binary
    /// format.
    pub fn write_theta(&self, path: &std::path::Path) -> Result<(), crate::io::GulIoError> {
        let row = DMatrix::from_fn(1, self.theta.len(), |_, j| self.theta[j]);
        crate::io::write_matrix_gumm(path, &row)
    }
}

/// Empirical risk `(1/n) sum_mu l(theta^T x_mu, y_mu) + (lambda/2) |theta|^2`.
fn risk_and_grad(
    data: &Dataset,
    loss: Loss,
    lambda: f64,
    theta: &DVector<f64>,
) -> (f64, DVector<f64>) {
    let n = data.n() as f64;
    let scores = data.x.tr_mul(theta); // theta^T x_mu
    let mut value = 0.0;
    let mut coef = DVector::<f64>::zeros(data.n());
    for mu in 0..data.n() {
        let y = data.y[mu];
        let s = scores[mu];
        value += prox::loss_value(loss, s, y).expect("labels validated at construction");
        coef[mu] = match loss {
            Loss::Square => (s - y) / n,
            Loss::Hinge => {
                if y * s < 1.0 {
                    -y / n
                } else {
                    0.0
                }
            }
            Loss::Logistic => {
                // l'(s) = -y * sigmoid(-y s)
                let t = -y * s;
                let sig = if t >= 0.0 {
                    1.0 / (1.0 + (-t).exp())
                } else {
                    let e = t.exp();
                    e / (1.0 + e)
                };
                -y * sig / n
            }
        };
    }
    let grad = &data.x * coef + theta * lambda;
    (value / n + 0.5 * lambda * theta.norm_squared(), grad)
}

/// Ridge regression under the risk normalization
/// `(1/n) sum 1/2 (theta^T x - y)^2 + (lambda/2) |theta|^2`, so the normal
/// equations carry `lambda' = n * lambda`. Solves the smaller of the p- and
/// n-sided systems; `lambda = 0` returns the minimum-l2-norm least-squares
/// solution through a rank-revealing SVD.
pub fn fit_ridge(data: &Dataset, lambda: f64) -> Result<FitResult, ErmError> {
    assert!(lambda >= 0.0, "lambda must be non-negative");
    let (p, n) = (data.p(), data.n());
    let yv = DVector::from_column_slice(&data.y);
    let theta = if lambda > 0.0 {
        let lp = lambda * n as f64;
        if p <= n {
            let mut normal = &data.x * data.x.transpose();
            for i in 0..p {
                normal[(i, i)] += lp;
            }
            let rhs = &data.x * &yv;
            normal
                .cholesky()
                .ok_or(ErmError::SingularSystem { rank: 0, needed: p })?
                .solve(&rhs)
        } else {
            let mut gram = data.x.tr_mul(&data.x);
            for i in 0..n {
                gram[(i, i)] += lp;
            }
            let dual = gram
                .cholesky()
                .ok_or(ErmError::SingularSystem { rank: 0, needed: n })?
                .solve(&yv);
            &data.x * dual
        }
    } else {
        let svd = data.x.clone().svd(true, true);
        let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
        // sigma_i^2 <= 1e-10 * |X|^2 counts as zero.
        let cutoff = 1e-5 * smax;
        let needed = p.min(n);
        let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
        if rank < needed {
            return Err(ErmError::SingularSystem { rank, needed });
        }
        let u = svd.u.as_ref().expect("u requested");
        let vt = svd.v_t.as_ref().expect("v_t requested");
        // theta = U diag(1/sigma) V^T y: the minimum-norm LS solution of
        // X^T theta = y.
        let mut w = vt * &yv;
        for i in 0..w.len() {
            w[i] /= svd.singular_values[i];
        }
        u * w
    };
    let (objective, grad) = risk_and_grad(data, Loss::Square, lambda, &theta);
    Ok(FitResult {
        grad_norm_or_gap: grad.norm(),
        theta,
        objective,
        iterations: 1,
    })
}

/// L2-regularized logistic regression by L-BFGS with Armijo backtracking.
/// Success contract: the Euclidean norm of the full objective gradient is
/// at most `tol`.
pub fn fit_logistic(data: &Dataset, lambda: f64, tol: f64) -> Result<FitResult, ErmError> {
    assert!(lambda > 0.0, "logistic fitter needs lambda > 0");
    assert!(tol > 0.0);
    let p = data.p();
    let mut theta = DVector::<f64>::zeros(p);
    let (mut value, mut grad) = risk_and_grad(data, Loss::Logistic, lambda, &theta);
    let mut s_hist: Vec<DVector<f64>> = Vec::new();
    let mut y_hist: Vec<DVector<f64>> = Vec::new();

    for iter in 0..LOGISTIC_MAX_ITER {
        let gnorm = grad.norm();
        if gnorm <= tol {
            return Ok(FitResult {
                theta,
                objective: value,
                grad_norm_or_gap: gnorm,
                iterations: iter,
            });
        }
        // Two-loop recursion over the stored curvature pairs.
        let mut dir = grad.clone();
        let k = s_hist.len();
        let mut alphas = vec![0.0; k];
        for i in (0..k).rev() {
            let rho = 1.0 / y_hist[i].dot(&s_hist[i]);
            alphas[i] = rho * s_hist[i].dot(&dir);
            dir -= &y_hist[i] * alphas[i];
        }
        if k > 0 {
            let last = k - 1;
            let gamma = s_hist[last].dot(&y_hist[last]) / y_hist[last].norm_squared();
            dir *= gamma;
        }
        for i in 0..k {
            let rho = 1.0 / y_hist[i].dot(&s_hist[i]);
            let beta = rho * y_hist[i].dot(&dir);
            dir += &s_hist[i] * (alphas[i] - beta);
        }
        dir.neg_mut();
        let mut slope = grad.dot(&dir);
        if slope >= 0.0 {
            dir = -&grad;
            slope = -gnorm * gnorm;
            s_hist.clear();
            y_hist.clear();
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &theta + &dir * step;
            let (cv, cg) = risk_and_grad(data, Loss::Logistic, lambda, &cand);
            if cv <= value + 1e-4 * step * slope {
                accepted = Some((cand, cv, cg));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, cv, cg)) = accepted else {
            // Fully stalled line search: the gradient certificate failed.
            return Err(ErmError::NoConvergence {
                solver: "logistic l-bfgs",
                iterations: iter,
                criterion: gnorm,
            });
        };
        let s = &cand - &theta;
        let yv = &cg - &grad;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            s_hist.push(s);
            y_hist.push(yv);
            if s_hist.len() > LBFGS_MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        theta = cand;
        value = cv;
        grad = cg;
    }
    Err(ErmError::NoConvergence {
        solver: "logistic l-bfgs",
        iterations: LOGISTIC_MAX_ITER,
        criterion: grad.norm(),
    })
}

/// L2-regularized hinge loss by dual coordinate ascent on the box
/// `0 <= a_mu <= C` with `C = 1/(n lambda)`. Success contract: relative
/// duality gap at most `tol`.
pub fn fit_hinge(data: &Dataset, lambda: f64, tol: f64) -> Result<FitResult, ErmError> {
    assert!(lambda > 0.0, "hinge fitter needs lambda > 0");
    assert!(tol > 0.0);
    let (p, n) = (data.p(), data.n());
    let c_box = 1.0 / (n as f64 * lambda);
    let qii: Vec<f64> = (0..n).map(|mu| data.x.column(mu).norm_squared()).collect();
    let mut a = vec![0.0f64; n];
    let mut w = DVector::<f64>::zeros(p);
    // Deterministic epoch shuffles: fixed seed, so runs are reproducible.
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e3779b97f4a7c15);
    let mut order: Vec<usize> = (0..n).collect();

    let mut gap = f64::INFINITY;
    for epoch in 1..=HINGE_MAX_EPOCHS {
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for &mu in &order {
            if qii[mu] == 0.0 {
                continue;
            }
            let y = data.y[mu];
            let g = y * w.dot(&data.x.column(mu)) - 1.0;
            let pg = if a[mu] <= 0.0 {
                g.min(0.0)
            } else if a[mu] >= c_box {
                g.max(0.0)
            } else {
                g
            };
            if pg != 0.0 {
                let new = (a[mu] - g / qii[mu]).clamp(0.0, c_box);
                let delta = new - a[mu];
                if delta != 0.0 {
                    w.axpy(delta * y, &data.x.column(mu), 1.0);
                    a[mu] = new;
                }
            }
        }
        // Duality gap in the SVM scaling: P = |w|^2/2 + C sum hinge,
        // D = sum a - |w|^2/2.
        let mut hinge_sum = 0.0;
        for mu in 0..n {
            hinge_sum += (1.0 - data.y[mu] * w.dot(&data.x.column(mu))).max(0.0);
        }
        let wsq = 0.5 * w.norm_squared();
        let primal = wsq + c_box * hinge_sum;
        let dual: f64 = a.iter().sum::<f64>() - wsq;
        gap = (primal - dual) / primal.abs().max(1.0);
        if gap <= tol {
            let (objective, _) = risk_and_grad(data, Loss::Hinge, lambda, &w);
            return Ok(FitResult {
                theta: w,
                objective,
                grad_norm_or_gap: gap,
                iterations: epoch,
            });
        }
    }
    Err(ErmError::NoConvergence {
        solver: "hinge dual coordinate ascent",
        iterations: HINGE_MAX_EPOCHS,
        criterion: gap,
    })
}

/// Empirical training metrics at a fitted estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingMetrics {
    pub train_loss: f64,
    pub regularized_risk: f64,
    /// `sign(0)` counts as an error.
    pub zero_one_error: f64,
}

pub fn training_metrics(
    theta: &DVector<f64>,
    data: &Dataset,
    loss: Loss,
    lambda: f64,
) -> TrainingMetrics {
    let n = data.n() as f64;
    let scores = data.x.tr_mul(theta);
    let mut total = 0.0;
    let mut errors = 0usize;
    for mu in 0..data.n() {
        let y = data.y[mu];
        let s = scores[mu];
        total += prox::loss_value(loss, s, y).expect("labels validated at construction");
        if s * y <= 0.0 {
            errors += 1;
        }
    }
    let train_loss = total / n;
    TrainingMetrics {
        train_loss,
        regularized_risk: train_loss + 0.5 * lambda * theta.norm_squared(),
        zero_one_error: errors as f64 / n,
    }
}

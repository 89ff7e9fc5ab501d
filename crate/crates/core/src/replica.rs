//! Self-consistent saddle-point equations for random-label classification on
//! Gaussian covariate and Gaussian mixture data, the asymptotic training
//! loss, and closed-form cross-checks.
//!
//! The solver alternates the scalar output channel (label and Gaussian
//! expectations of the channel function) with the matrix-trace prior channel
//! from [`crate::spectra`], under damping.

use crate::prox::{self, Loss, ProxError};
use crate::quadrature::{self, gh_rule, GaussHermiteRule, QuadratureError};
use crate::spectra::{prior_channel, Conjugates, MixtureModel, Overlaps, SpectraError};
use thiserror::Error;

/// Smallest damping factor the adaptive schedule will go down to.
const MIN_DAMPING: f64 = 1.0 / 64.0;
/// Residual-increase streak that triggers halving the damping.
const DAMPING_PATIENCE: usize = 5;
/// Residual-decrease streak after which a previously halved damping doubles
/// again (stiff transients should not slow the whole tail).
const DAMPING_RECOVERY: usize = 100;
/// Number of trailing residuals kept for diagnosis on failure.
const RESIDUAL_TAIL: usize = 12;

#[derive(Debug, Error)]
pub enum ReplicaError {
    #[error(transparent)]
    Prox(#[from] ProxError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error("saddle-point iteration did not converge after {iterations} iterations \
             (last residual {residual:e}; tail {tail:?})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        tail: Vec<f64>,
    },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
}

/// Order parameters and conjugates of one cluster.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClusterState {
    pub m: f64,
    pub q: f64,
    pub v: f64,
    pub m_hat: f64,
    pub q_hat: f64,
    pub v_hat: f64,
}

impl ClusterState {
    fn overlaps(&self) -> Overlaps {
        Overlaps {
            m: self.m,
            q: self.q,
            v: self.v,
        }
    }
}

/// Full per-cluster state of the fixed-point iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapState {
    pub clusters: Vec<ClusterState>,
}

impl OverlapState {
    pub fn overlaps(&self) -> Vec<Overlaps> {
        self.clusters.iter().map(ClusterState::overlaps).collect()
    }

    pub fn conjugates(&self) -> Vec<Conjugates> {
        self.clusters
            .iter()
            .map(|c| Conjugates {
                m_hat: c.m_hat,
                q_hat: c.q_hat,
                v_hat: c.v_hat,
            })
            .collect()
    }
}

/// Solver knobs. `Default` gives the configuration used throughout the
/// experiments: damping 1/2, tolerance 1e-10, order-127 quadrature,
/// regularization floored at 1e-10.
#[derive(Debug, Clone)]
pub struct SaddleConfig {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub quad_order: usize,
    pub init: Option<OverlapState>,
    pub lambda_floor: f64,
}

impl Default for SaddleConfig {
    fn default() -> Self {
        SaddleConfig {
            damping: 0.5,
            tol: 1e-10,
            max_iter: 50_000,
            quad_order: 127,
            init: None,
            lambda_floor: 1e-10,
        }
    }
}

impl SaddleConfig {
    fn validate(&self, k: usize) -> Result<(), ReplicaError> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(ReplicaError::InvalidConfig(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if !(self.tol >= 1e-13) {
            return Err(ReplicaError::InvalidConfig(format!(
                "tol must be at least 1e-13, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(ReplicaError::InvalidConfig("max_iter must be positive".into()));
        }
        if !(self.lambda_floor > 0.0) {
            return Err(ReplicaError::InvalidConfig(format!(
                "lambda_floor must be positive, got {}",
                self.lambda_floor
            )));
        }
        if let Some(init) = &self.init {
            if init.clusters.len() != k {
                return Err(ReplicaError::InvalidConfig(format!(
                    "init has {} clusters, model has {k}",
                    init.clusters.len()
                )));
            }
        }
        Ok(())
    }
}

/// Converged saddle point with its observables.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddleSolution {
    pub state: OverlapState,
    pub iterations: usize,
    /// Max-norm of the last (scaled) full update.
    pub residual: f64,
    pub training_loss: f64,
    /// Asymptotic 0/1 training error, from the sign of the prox.
    pub loss01: f64,
}

fn run_channel<T>(res: Result<T, QuadratureError>, err: Option<ProxError>) -> Result<T, ReplicaError> {
    if let Some(e) = err {
        return Err(e.into());
    }
    Ok(res?)
}

/// Per-label expectation of a margin-frame integrand against
/// `u = y*omega ~ N(y*m, q)`: the label only shifts the mean, so the prox
/// breakpoints stay fixed and the hinge branch edges can be split exactly.
/// Smooth losses go through the Hermite rule; kinked ones through the
/// piecewise rule.
fn margin_expectation<const N: usize>(
    loss: Loss,
    mean: f64,
    std: f64,
    v: f64,
    rule: &GaussHermiteRule,
    integrand: impl Fn(f64, f64, f64) -> [f64; N], // (u, w, dw) -> components
) -> Result<[f64; N], ReplicaError> {
    let mut perr: Option<ProxError> = None;
    let mut eval = |u: f64| match prox::margin_prox(loss, v, u) {
        Ok((w, dw)) => integrand(u, w, dw),
        Err(e) => {
            perr = Some(e);
            [f64::NAN; N]
        }
    };
    let breaks = prox::margin_breakpoints(loss, v);
    let res = if breaks.is_empty() {
        rule.expect_gaussian_multi(mean, std, &mut eval)
    } else {
        quadrature::expect_gaussian_piecewise(mean, std, &breaks, &mut eval)
    };
    run_channel(res, perr)
}

/// Output channel: conjugates from expectations of the channel function over
/// labels and the Gaussian field `omega ~ N(m_c, q_c)`.
///
/// Sign convention: conjugates are stored non-negative. `d_omega f` is
/// negative for convex losses, so `v_hat` absorbs the sign:
/// `v_hat = -(alpha/2) rho sum_y E[d_omega f]`, and the mean conjugate
/// follows the same flip so that the square-loss closed form reads
/// `m_hat = alpha rho m / (1 + V)`. Only products of two mean conjugates
/// enter the prior channel, so this choice is internal to the pair of
/// channels; it is asserted against [`square_analytic_channel`].
pub fn output_channel(
    loss: Loss,
    weights: &[f64],
    overlaps: &[Overlaps],
    alpha: f64,
    rule: &GaussHermiteRule,
) -> Result<Vec<Conjugates>, ReplicaError> {
    assert_eq!(weights.len(), overlaps.len(), "one weight per cluster");
    assert!(alpha > 0.0, "alpha must be positive, got {alpha}");
    let mut out = Vec::with_capacity(overlaps.len());
    for (&rho, ov) in weights.iter().zip(overlaps) {
        let std = ov.q.max(0.0).sqrt();
        let v = ov.v;
        // In the margin frame f = y*(w - u)/V; [r, r^2, df] with
        // r = (w - u)/V carries everything label-independent.
        let terms = |_u: f64, w: f64, dw: f64| {
            let r = (w - _u) / v;
            [r, r * r, (dw - 1.0) / v]
        };
        let plus = margin_expectation(loss, ov.m, std, v, rule, terms)?;
        let minus = margin_expectation(loss, -ov.m, std, v, rule, terms)?;
        out.push(Conjugates {
            // f = y*r, so the label average of f is the half-difference.
            m_hat: -alpha * rho * 0.5 * (plus[0] - minus[0]),
            q_hat: alpha * rho * 0.5 * (plus[1] + minus[1]),
            v_hat: -alpha * rho * 0.5 * (plus[2] + minus[2]),
        });
    }
    Ok(out)
}

/// Asymptotic training loss
/// `(1/2) sum_c rho_c sum_y E_xi[ l(prox_{V_c}(m_c + sqrt(q_c) xi; y), y) ]`.
pub fn training_loss(
    loss: Loss,
    model: &MixtureModel,
    state: &OverlapState,
    rule: &GaussHermiteRule,
) -> Result<f64, ReplicaError> {
    let mut total = 0.0;
    for (cluster, st) in model.clusters().iter().zip(&state.clusters) {
        let std = st.q.max(0.0).sqrt();
        // l(z, y) = l(y*z, +1) by the loss symmetry: margin frame again.
        let terms = |_u: f64, w: f64, _dw: f64| {
            [prox::loss_value(loss, w, 1.0).expect("label +1 is valid")]
        };
        let plus = margin_expectation(loss, st.m, std, st.v, rule, terms)?;
        let minus = margin_expectation(loss, -st.m, std, st.v, rule, terms)?;
        total += cluster.rho * 0.5 * (plus[0] + minus[0]);
    }
    Ok(total)
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Asymptotic 0/1 training error `(1/2) sum_c rho_c sum_y P[y prox < 0]`.
///
/// The prox is monotone in omega, so each indicator expectation is an exact
/// Gaussian tail at the omega where the prox changes sign; no quadrature on
/// discontinuous integrands.
pub fn zero_one_error(loss: Loss, weights: &[f64], overlaps: &[Overlaps]) -> f64 {
    let mut total = 0.0;
    for (&rho, ov) in weights.iter().zip(overlaps) {
        let t = prox::prox_sign_threshold(loss, ov.v);
        let std = ov.q.max(0.0).sqrt();
        let e = if std > 0.0 {
            0.5 * (normal_cdf((t - ov.m) / std) + normal_cdf((t + ov.m) / std))
        } else {
            let hit = |m: f64| if m < t { 1.0 } else { 0.0 };
            0.5 * (hit(ov.m) + hit(-ov.m))
        };
        total += rho * e;
    }
    total
}

/// `lim_{lambda -> 0+}` training loss of the square loss for any mixture:
/// `(1/2) (1 - 1/alpha)_+`.
pub fn ridgeless_ridge_loss(alpha: f64) -> f64 {
    assert!(alpha > 0.0, "alpha must be positive, got {alpha}");
    0.5 * (1.0 - 1.0 / alpha).max(0.0)
}

/// Plug-in Rademacher complexity from the minimal 0/1 training error, by the
/// relation `Rad = 1 - (2/alpha) e01`, reported as-stated: the relation can
/// exceed the usual normalization bounds for large `e01` at small `alpha`,
/// so the value is an estimate under this convention, not a certified bound.
pub fn rademacher_estimate(alpha: f64, e01: f64) -> f64 {
    assert!(alpha > 0.0, "alpha must be positive, got {alpha}");
    1.0 - (2.0 / alpha) * e01
}

/// Square-loss output channel in closed form (single cluster, unit weight):
/// `q_hat = alpha (1 + Q + M^2) / (1 + V)^2`, `v_hat = alpha / (1 + V)`,
/// `m_hat = alpha M / (1 + V)`.
pub fn square_analytic_channel(m: f64, q: f64, v: f64, alpha: f64) -> Conjugates {
    assert!(v > -1.0, "square channel needs V > -1, got {v}");
    let d = 1.0 + v;
    Conjugates {
        m_hat: alpha * m / d,
        q_hat: alpha * (1.0 + q + m * m) / (d * d),
        v_hat: alpha / d,
    }
}

fn normal_pdf(x: f64) -> f64 {
    (-(x * x) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Hinge-loss output channel in closed form (single cluster, unit weight).
///
/// Integrating the three prox branches of the channel function against
/// `N(M, Q)` per label gives Gaussian cdf/pdf pieces, derived here directly
/// from the branches. Diagnostic cross-check for the quadrature channel.
pub fn hinge_analytic_channel(m: f64, q: f64, v: f64, alpha: f64) -> Conjugates {
    assert!(q > 0.0, "hinge closed form needs Q > 0, got {q}");
    assert!(v > 0.0, "hinge closed form needs V > 0, got {v}");
    let sigma = q.sqrt();
    let mut v_hat = 0.0;
    let mut q_hat = 0.0;
    let mut m_hat = 0.0;
    for y in [-1.0, 1.0] {
        // Margin variable u = y*omega ~ N(y*m, q); branch edges at
        // u = 1 - v (lower/middle) and u = 1 (middle/identity).
        let mu = y * m;
        let beta = (1.0 - mu) / sigma;
        let a = (1.0 - v - mu) / sigma;
        let (phi_a, phi_b) = (normal_pdf(a), normal_pdf(beta));
        let (cdf_a, cdf_b) = (normal_cdf(a), normal_cdf(beta));
        let p_mid = cdf_b - cdf_a;
        let p_low = cdf_a;
        // E[(1-u) 1{mid}] and E[(1-u)^2 1{mid}] with 1-u = sigma*(beta - t).
        let i1 = sigma * (beta * p_mid - (phi_a - phi_b));
        let i2 = sigma
            * sigma
            * (beta * beta * p_mid - 2.0 * beta * (phi_a - phi_b) + p_mid + a * phi_a
                - beta * phi_b);
        v_hat += (alpha / (2.0 * v)) * p_mid;
        q_hat += (alpha / 2.0) * (i2 / (v * v) + p_low);
        m_hat -= (alpha / 2.0) * y * (i1 / v + p_low);
    }
    Conjugates { m_hat, q_hat, v_hat }
}

fn scaled_update(new: f64, old: f64) -> f64 {
    (new - old).abs() / (1.0 + old.abs())
}

/// Solves the self-consistent equations by damped fixed-point iteration.
///
/// `lambda` is the coefficient of `|theta|^2 / 2` in the per-sample risk
/// `(1/n) sum_mu l + (lambda/2)|theta|^2`, the same normalization the
/// fitters minimize. The resolvent of the self-consistent equations carries
/// the per-dimension regularization, so the channel sees `alpha * lambda`;
/// this mapping is calibrated against exact label-averaged ridge quantities
/// (resolvent trace, estimator norm, training loss) and is what makes the
/// finite-lambda predictions line up with the simulations for every loss.
///
/// Each sweep computes the full candidate (conjugates from the current order
/// parameters, then order parameters from those conjugates), measures the
/// pre-damping update in a scaled max-norm, and blends with factor `damping`.
/// The damping halves (down to 1/64) after five consecutive residual
/// increases. The regularization is floored at `cfg.lambda_floor`; the
/// `lambda -> 0+` limits are reached through the floor, not at zero.
pub fn solve_saddle(
    model: &MixtureModel,
    loss: Loss,
    alpha: f64,
    lambda: f64,
    cfg: &SaddleConfig,
) -> Result<SaddleSolution, ReplicaError> {
    if !(alpha > 0.0) {
        return Err(ReplicaError::InvalidConfig(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if !(lambda >= 0.0) {
        return Err(ReplicaError::InvalidConfig(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    cfg.validate(model.k())?;
    // Per-sample risk lambda -> per-dimension channel lambda.
    let lambda_eff = alpha * lambda.max(cfg.lambda_floor);
    let rule = gh_rule(cfg.quad_order)?;
    let weights = model.weights();

    let mut state: Vec<ClusterState> = match &cfg.init {
        Some(init) => init.clusters.clone(),
        None => {
            let start: Vec<Overlaps> = (0..model.k())
                .map(|_| Overlaps { m: 0.0, q: 1.0, v: 1.0 })
                .collect();
            let hats = output_channel(loss, &weights, &start, alpha, &rule)?;
            start
                .iter()
                .zip(&hats)
                .map(|(ov, h)| ClusterState {
                    m: ov.m,
                    q: ov.q,
                    v: ov.v,
                    m_hat: h.m_hat,
                    q_hat: h.q_hat,
                    v_hat: h.v_hat,
                })
                .collect()
        }
    };

    let mut gamma = cfg.damping;
    let mut prev_residual = f64::INFINITY;
    let mut worse_streak = 0usize;
    let mut better_streak = 0usize;
    let mut tail: Vec<f64> = Vec::new();
    let mut converged_at = None;
    let mut residual = f64::INFINITY;

    for iter in 1..=cfg.max_iter {
        let overlaps: Vec<Overlaps> = state.iter().map(ClusterState::overlaps).collect();
        let hats = output_channel(loss, &weights, &overlaps, alpha, &rule)?;
        let new_overlaps = prior_channel(model, &hats, lambda_eff)?;

        let mut candidate = Vec::with_capacity(state.len());
        residual = 0.0f64;
        for (cur, (h, ov)) in state.iter().zip(hats.iter().zip(&new_overlaps)) {
            let cand = ClusterState {
                m: ov.m,
                q: ov.q.max(0.0),
                v: ov.v,
                m_hat: h.m_hat,
                q_hat: h.q_hat,
                v_hat: h.v_hat,
            };
            residual = residual
                .max(scaled_update(cand.m, cur.m))
                .max(scaled_update(cand.q, cur.q))
                .max(scaled_update(cand.v, cur.v))
                .max(scaled_update(cand.m_hat, cur.m_hat))
                .max(scaled_update(cand.q_hat, cur.q_hat))
                .max(scaled_update(cand.v_hat, cur.v_hat));
            candidate.push(cand);
        }
        if tail.len() == RESIDUAL_TAIL {
            tail.remove(0);
        }
        tail.push(residual);

        if residual <= cfg.tol {
            state = candidate;
            converged_at = Some(iter);
            break;
        }
        if residual > prev_residual {
            worse_streak += 1;
            better_streak = 0;
            if worse_streak >= DAMPING_PATIENCE {
                gamma = (gamma / 2.0).max(MIN_DAMPING);
                worse_streak = 0;
            }
        } else {
            worse_streak = 0;
            better_streak += 1;
            if better_streak >= DAMPING_RECOVERY && gamma < cfg.damping {
                gamma = (gamma * 2.0).min(cfg.damping);
                better_streak = 0;
            }
        }
        prev_residual = residual;
        for (cur, cand) in state.iter_mut().zip(&candidate) {
            cur.m = (1.0 - gamma) * cur.m + gamma * cand.m;
            cur.q = (1.0 - gamma) * cur.q + gamma * cand.q;
            cur.v = (1.0 - gamma) * cur.v + gamma * cand.v;
            cur.m_hat = (1.0 - gamma) * cur.m_hat + gamma * cand.m_hat;
            cur.q_hat = (1.0 - gamma) * cur.q_hat + gamma * cand.q_hat;
            cur.v_hat = (1.0 - gamma) * cur.v_hat + gamma * cand.v_hat;
        }
    }

    let Some(iterations) = converged_at else {
        return Err(ReplicaError::NoConvergence {
            iterations: cfg.max_iter,
            residual,
            tail,
        });
    };

    let state = OverlapState { clusters: state };
    let overlaps = state.overlaps();
    let loss_value = training_loss(loss, model, &state, &rule)?;
    let loss01 = zero_one_error(loss, &weights, &overlaps);
    Ok(SaddleSolution {
        state,
        iterations,
        residual,
        training_loss: loss_value,
        loss01,
    })
}

/// Solves at `lambda in {1e-6, 1e-8, 1e-10}` and Richardson-extrapolates the
/// training loss to `lambda -> 0+`, reporting the spread across the three
/// solves as an error probe for the floor substitution.
#[derive(Debug, Clone)]
pub struct RidgelessDiagnostic {
    /// Loss at the smallest lambda (1e-10).
    pub loss: f64,
    /// Extrapolated `lambda -> 0` value assuming O(lambda) error.
    pub extrapolated: f64,
    /// Max minus min of the three losses.
    pub spread: f64,
    pub losses: [f64; 3],
}

pub fn ridgeless_diagnostic(
    model: &MixtureModel,
    loss: Loss,
    alpha: f64,
    cfg: &SaddleConfig,
) -> Result<RidgelessDiagnostic, ReplicaError> {
    let lambdas = [1e-6, 1e-8, 1e-10];
    let mut losses = [0.0; 3];
    let mut warm = cfg.clone();
    for (i, &l) in lambdas.iter().enumerate() {
        let mut c = warm.clone();
        c.lambda_floor = c.lambda_floor.min(l);
        let sol = solve_saddle(model, loss, alpha, l, &c)?;
        losses[i] = sol.training_loss;
        warm.init = Some(sol.state);
    }
    let spread = losses.iter().cloned().fold(f64::MIN, f64::max)
        - losses.iter().cloned().fold(f64::MAX, f64::min);
    // One Richardson step on the 100x lambda ratio of the last two solves.
    let extrapolated = (100.0 * losses[2] - losses[1]) / 99.0;
    Ok(RidgelessDiagnostic {
        loss: losses[2],
        extrapolated,
        spread,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{Cluster, CovarianceModel};
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    fn gcm_identity(p: usize) -> MixtureModel {
        MixtureModel::gcm(CovarianceModel::isotropic(1.0, p).unwrap()).unwrap()
    }

    #[test]
    fn square_channel_matches_closed_form() {
        let rule = gh_rule(63).unwrap();
        for &(m, q, v, alpha, rho) in &[
            (0.0, 1.0, 1.0, 2.0, 1.0),
            (0.3, 0.7, 2.5, 1.3, 0.4),
            (-1.1, 3.0, 0.2, 4.0, 0.7),
        ] {
            let got = output_channel(Loss::Square, &[rho], &[Overlaps { m, q, v }], alpha, &rule)
                .unwrap()[0];
            let want = square_analytic_channel(m, q, v, alpha);
            assert_abs_diff_eq!(got.v_hat, rho * want.v_hat, epsilon = 1e-12);
            assert_abs_diff_eq!(got.q_hat, rho * want.q_hat, epsilon = 1e-12 * want.q_hat.abs());
            assert_abs_diff_eq!(got.m_hat, rho * want.m_hat, epsilon = 1e-12);
        }
    }

    #[test]
    fn square_analytic_reference_point() {
        let c = square_analytic_channel(0.0, 1.0, 1.0, 2.0);
        assert_eq!(c.q_hat, 1.0);
        assert_eq!(c.v_hat, 1.0);
        assert_eq!(c.m_hat, 0.0);
    }

    #[test]
    fn zero_mean_kills_mean_conjugate_exactly() {
        let rule = gh_rule(127).unwrap();
        for loss in Loss::ALL {
            let got = output_channel(
                loss,
                &[1.0],
                &[Overlaps { m: 0.0, q: 1.7, v: 0.8 }],
                2.5,
                &rule,
            )
            .unwrap()[0];
            assert_eq!(got.m_hat, 0.0, "{loss}");
            assert!(got.v_hat >= 0.0 && got.q_hat >= 0.0);
        }
    }

    #[test]
    fn hinge_analytic_matches_quadrature() {
        let rule = gh_rule(255).unwrap();
        for &(m, q, v) in &[
            (0.0, 1.0, 1.0),
            (0.4, 0.5, 0.3),
            (-0.9, 2.0, 4.0),
            (0.1, 0.1, 0.1),
            (1.5, 5.0, 2.0),
        ] {
            let alpha = 2.0;
            let want = hinge_analytic_channel(m, q, v, alpha);
            let got =
                output_channel(Loss::Hinge, &[1.0], &[Overlaps { m, q, v }], alpha, &rule).unwrap()[0];
            assert!((got.v_hat - want.v_hat).abs() <= 1e-7, "v_hat at ({m},{q},{v})");
            assert!((got.q_hat - want.q_hat).abs() <= 1e-7, "q_hat at ({m},{q},{v})");
            assert!((got.m_hat - want.m_hat).abs() <= 1e-7, "m_hat at ({m},{q},{v})");
        }
    }

    #[test]
    fn hinge_analytic_limits() {
        assert_eq!(hinge_analytic_channel(0.0, 1.3, 0.7, 2.0).m_hat, 0.0);
        // V -> infinity: middle branch has vanishing mass, v_hat -> 0.
        let big = hinge_analytic_channel(0.0, 1.0, 1e9, 2.0);
        assert!(big.v_hat.abs() < 1e-8);
    }

    #[test]
    fn hinge_channel_matches_piecewise_gaussian_oracle() {
        // (m=0, q=1, V=1, alpha=2, rho=1): independent oracle from the three
        // hinge branches integrated against N(0,1) with erfc directly.
        let (q, v, alpha): (f64, f64, f64) = (1.0, 1.0, 2.0);
        let s = q.sqrt();
        let beta = 1.0 / s;
        let a = (1.0 - v) / s;
        let p_mid = normal_cdf(beta) - normal_cdf(a);
        let p_low = normal_cdf(a);
        let i2 = q
            * (beta * beta * p_mid - 2.0 * beta * (normal_pdf(a) - normal_pdf(beta)) + p_mid
                + a * normal_pdf(a)
                - beta * normal_pdf(beta));
        let want_vhat = alpha * p_mid / v;
        let want_qhat = alpha * (i2 / (v * v) + p_low);
        let rule = gh_rule(255).unwrap();
        let got = output_channel(
            Loss::Hinge,
            &[1.0],
            &[Overlaps { m: 0.0, q, v }],
            alpha,
            &rule,
        )
        .unwrap()[0];
        assert!((got.v_hat - want_vhat).abs() <= 1e-7);
        assert!((got.q_hat - want_qhat).abs() <= 1e-7);
        assert_eq!(got.m_hat, 0.0);
    }

    #[test]
    fn ridgeless_square_identity_alpha2() {
        let model = gcm_identity(8);
        let sol = solve_saddle(&model, Loss::Square, 2.0, 0.0, &SaddleConfig::default()).unwrap();
        let st = sol.state.clusters[0];
        assert_abs_diff_eq!(st.v, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(st.q, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.training_loss, 0.25, epsilon = 1e-6);
        // 0/1 error from the prox sign: Phi(-V/sqrt(q)) = Phi(-1).
        assert_abs_diff_eq!(sol.loss01, normal_cdf(-1.0), epsilon = 1e-6);
    }

    #[test]
    fn ridgeless_square_identity_alpha4() {
        let model = gcm_identity(8);
        let sol = solve_saddle(&model, Loss::Square, 4.0, 0.0, &SaddleConfig::default()).unwrap();
        assert_abs_diff_eq!(sol.training_loss, 0.375, epsilon = 1e-6);
    }

    #[test]
    fn hinge_below_cover_threshold_interpolates() {
        let model = gcm_identity(8);
        let sol = solve_saddle(&model, Loss::Hinge, 1.5, 0.0, &SaddleConfig::default()).unwrap();
        assert!(
            sol.training_loss <= 1e-6,
            "hinge loss {} above separability threshold",
            sol.training_loss
        );
        assert!(sol.loss01 <= 1e-6);
    }

    #[test]
    fn ridge_training_loss_identities_at_fixed_point() {
        // Two-cluster mixture with distinct spectra, lambda = 0.1.
        let p = 12;
        let e1: Vec<f64> = (0..p).map(|i| 0.5 + 0.1 * i as f64).collect();
        let e2: Vec<f64> = (0..p).map(|i| 2.0 - 0.12 * i as f64).collect();
        let model = MixtureModel::new(vec![
            Cluster::zero_mean(0.4, CovarianceModel::spectral(e1, "b").unwrap()).unwrap(),
            Cluster::zero_mean(0.6, CovarianceModel::spectral(e2, "b").unwrap()).unwrap(),
        ])
        .unwrap();
        let alpha = 2.0;
        let sol = solve_saddle(&model, Loss::Square, alpha, 0.1, &SaddleConfig::default()).unwrap();
        let closed: f64 = model
            .clusters()
            .iter()
            .zip(&sol.state.clusters)
            .map(|(c, s)| c.rho * (1.0 + s.q) / (2.0 * (1.0 + s.v).powi(2)))
            .sum();
        assert_abs_diff_eq!(sol.training_loss, closed, epsilon = 1e-9);
        let via_qhat: f64 = sol.state.clusters.iter().map(|s| s.q_hat / (2.0 * alpha)).sum();
        assert_abs_diff_eq!(sol.training_loss, via_qhat, epsilon = 1e-8);
    }

    #[test]
    fn degenerate_hinge_state_loss_is_one() {
        let model = gcm_identity(4);
        let state = OverlapState {
            clusters: vec![ClusterState {
                m: 0.0,
                q: 0.0,
                v: 1e-12,
                m_hat: 0.0,
                q_hat: 0.0,
                v_hat: 0.0,
            }],
        };
        let rule = gh_rule(7).unwrap();
        let l = training_loss(Loss::Hinge, &model, &state, &rule).unwrap();
        assert_abs_diff_eq!(l, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn ridgeless_formula_points() {
        assert_eq!(ridgeless_ridge_loss(2.0), 0.25);
        assert_eq!(ridgeless_ridge_loss(1.0), 0.0);
        assert_eq!(ridgeless_ridge_loss(0.25), 0.0);
        assert_abs_diff_eq!(ridgeless_ridge_loss(10.0), 0.45, epsilon = 1e-15);
    }

    #[test]
    fn rademacher_points() {
        assert_eq!(rademacher_estimate(1.0, 0.0), 1.0);
        assert_abs_diff_eq!(rademacher_estimate(2.0, 0.1), 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(rademacher_estimate(4.0, 0.5), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn mean_invariance_for_symmetric_losses() {
        let p = 6;
        let mut mean = DVector::zeros(p);
        mean[0] = 3.0;
        let cov = || CovarianceModel::isotropic(1.0, p).unwrap();
        let with_means = MixtureModel::new(vec![
            Cluster::new(0.5, mean.clone(), cov()).unwrap(),
            Cluster::new(0.5, -mean.clone(), cov()).unwrap(),
        ])
        .unwrap();
        let cfg = SaddleConfig::default();
        for loss in [Loss::Hinge, Loss::Logistic] {
            let a = solve_saddle(&with_means, loss, 2.0, 0.01, &cfg).unwrap();
            let b = solve_saddle(&with_means.zeroed_means(), loss, 2.0, 0.01, &cfg).unwrap();
            assert!(
                (a.training_loss - b.training_loss).abs() <= 10.0 * cfg.tol,
                "{loss}: {} vs {}",
                a.training_loss,
                b.training_loss
            );
        }
    }

    #[test]
    fn solver_is_bitwise_deterministic() {
        let model = gcm_identity(5);
        let a = solve_saddle(&model, Loss::Logistic, 2.5, 0.05, &SaddleConfig::default()).unwrap();
        let b = solve_saddle(&model, Loss::Logistic, 2.5, 0.05, &SaddleConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let model = gcm_identity(3);
        let bad = |f: fn(&mut SaddleConfig)| {
            let mut cfg = SaddleConfig::default();
            f(&mut cfg);
            solve_saddle(&model, Loss::Square, 2.0, 0.1, &cfg)
        };
        assert!(matches!(
            bad(|c| c.damping = 0.0),
            Err(ReplicaError::InvalidConfig(_))
        ));
        assert!(matches!(
            bad(|c| c.damping = 1.5),
            Err(ReplicaError::InvalidConfig(_))
        ));
        assert!(matches!(
            bad(|c| c.tol = 1e-14),
            Err(ReplicaError::InvalidConfig(_))
        ));
        assert!(matches!(
            bad(|c| c.lambda_floor = 0.0),
            Err(ReplicaError::InvalidConfig(_))
        ));
        assert!(matches!(
            bad(|c| c.init = Some(OverlapState { clusters: vec![] })),
            Err(ReplicaError::InvalidConfig(_))
        ));
        let model2 = gcm_identity(3);
        assert!(matches!(
            solve_saddle(&model2, Loss::Square, -1.0, 0.1, &SaddleConfig::default()),
            Err(ReplicaError::InvalidConfig(_))
        ));
    }

    #[test]
    fn no_convergence_carries_tail() {
        let model = gcm_identity(5);
        let cfg = SaddleConfig {
            max_iter: 3,
            ..SaddleConfig::default()
        };
        let err = solve_saddle(&model, Loss::Hinge, 3.0, 0.01, &cfg).unwrap_err();
        match err {
            ReplicaError::NoConvergence { iterations, tail, .. } => {
                assert_eq!(iterations, 3);
                assert_eq!(tail.len(), 3);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn warm_start_agrees_with_cold_start() {
        let model = gcm_identity(6);
        let cfg = SaddleConfig::default();
        let cold = solve_saddle(&model, Loss::Logistic, 3.0, 0.1, &cfg).unwrap();
        let near = solve_saddle(&model, Loss::Logistic, 2.8, 0.1, &cfg).unwrap();
        let warm_cfg = SaddleConfig {
            init: Some(near.state),
            ..SaddleConfig::default()
        };
        let warm = solve_saddle(&model, Loss::Logistic, 3.0, 0.1, &warm_cfg).unwrap();
        assert!((cold.training_loss - warm.training_loss).abs() <= 10.0 * cfg.tol);
        assert!(warm.iterations <= cold.iterations);
    }

    #[test]
    fn custom_init_with_nonzero_mean_converges_to_zero_mean() {
        // The m machinery only moves with a nonzero start; for symmetric
        // losses it must decay back to the zero-mean fixed point.
        let p = 4;
        let mut mean = DVector::zeros(p);
        mean[0] = 1.0;
        let model = MixtureModel::new(vec![
            Cluster::new(0.5, mean.clone(), CovarianceModel::isotropic(1.0, p).unwrap()).unwrap(),
            Cluster::new(0.5, -mean, CovarianceModel::isotropic(1.0, p).unwrap()).unwrap(),
        ])
        .unwrap();
        let init = OverlapState {
            clusters: vec![
                ClusterState { m: 0.4, q: 1.0, v: 1.0, m_hat: 0.3, q_hat: 1.0, v_hat: 1.0 },
                ClusterState { m: -0.2, q: 1.0, v: 1.0, m_hat: 0.1, q_hat: 1.0, v_hat: 1.0 },
            ],
        };
        let cfg = SaddleConfig {
            init: Some(init),
            ..SaddleConfig::default()
        };
        let sol = solve_saddle(&model, Loss::Square, 2.0, 0.1, &cfg).unwrap();
        for c in &sol.state.clusters {
            assert!(c.m.abs() <= 1e-8, "m = {}", c.m);
            assert!(c.m_hat.abs() <= 1e-8);
        }
    }

    #[test]
    fn ridgeless_diagnostic_square_small_spread() {
        let model = gcm_identity(4);
        let d = ridgeless_diagnostic(&model, Loss::Square, 2.0, &SaddleConfig::default()).unwrap();
        assert_abs_diff_eq!(d.loss, 0.25, epsilon = 1e-5);
        assert!(d.spread <= 1e-5, "spread {}", d.spread);
        assert_abs_diff_eq!(d.extrapolated, 0.25, epsilon = 1e-6);
    }
}

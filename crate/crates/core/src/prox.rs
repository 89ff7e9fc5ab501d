//! Convex losses, their proximal operators, and the channel function
//! `f(y, omega, V) = (prox_{V l(., y)}(omega) - omega) / V`.
//!
//! Everything is computed in the margin frame `u = y * omega`, `w = y * z`,
//! which makes the antisymmetry `f(y, omega, V) = -f(-y, -omega, V)` hold
//! bitwise. That symmetry is what kills the mean conjugates under random
//! labels, so it is kept exact rather than approximate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Residual tolerance of the logistic proximal root.
const LOGISTIC_PROX_TOL: f64 = 1e-12;
const LOGISTIC_PROX_MAX_ITER: usize = 200;

#[derive(Debug, Error)]
pub enum ProxError {
    #[error("label must be -1 or +1, got {0}")]
    InvalidLabel(f64),
    #[error("prox parameter V must be positive, got {0}")]
    NonPositiveV(f64),
    #[error("logistic prox root not located after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
}

/// Loss function of the binary classifier. All three are convex and satisfy
/// `l(x, y) = l(-x, -y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Square,
    Hinge,
    Logistic,
}

impl Loss {
    pub const ALL: [Loss; 3] = [Loss::Square, Loss::Hinge, Loss::Logistic];

    pub fn name(&self) -> &'static str {
        match self {
            Loss::Square => "square",
            Loss::Hinge => "hinge",
            Loss::Logistic => "logistic",
        }
    }
}

impl std::fmt::Display for Loss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Loss {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "square" => Ok(Loss::Square),
            "hinge" => Ok(Loss::Hinge),
            "logistic" => Ok(Loss::Logistic),
            other => Err(format!("unknown loss '{other}'")),
        }
    }
}

/// Proximal point together with its derivative in the omega argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxResult {
    pub z: f64,
    /// In `[0, 1]` by firm non-expansiveness of the prox of a convex loss.
    pub dz_domega: f64,
}

fn check_label(y: f64) -> Result<(), ProxError> {
    if y == 1.0 || y == -1.0 {
        Ok(())
    } else {
        Err(ProxError::InvalidLabel(y))
    }
}

fn check_v(v: f64) -> Result<(), ProxError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ProxError::NonPositiveV(v))
    }
}

/// Numerically stable logistic sigmoid.
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(-u))` without overflow for large `|u|`.
fn log1p_exp_neg(u: f64) -> f64 {
    if u >= 0.0 {
        (-u).exp().ln_1p()
    } else {
        -u + u.exp().ln_1p()
    }
}

/// Loss value `l(x, y)` for a label `y` in `{-1, +1}`.
pub fn loss_value(loss: Loss, x: f64, y: f64) -> Result<f64, ProxError> {
    check_label(y)?;
    let u = y * x;
    Ok(match loss {
        Loss::Square => {
            let d = x - y;
            0.5 * d * d
        }
        Loss::Hinge => (1.0 - u).max(0.0),
        Loss::Logistic => log1p_exp_neg(u),
    })
}

/// Margin-frame prox: returns `(w, dw)` with `w = y * prox(omega)` as a
/// function of `u = y * omega`.
fn prox_margin(loss: Loss, v: f64, u: f64) -> Result<(f64, f64), ProxError> {
    match loss {
        Loss::Square => Ok(((u + v) / (1.0 + v), 1.0 / (1.0 + v))),
        Loss::Hinge => {
            // Closed boundaries are assigned in this listed order; the
            // breakpoint set has measure zero under the channel expectation,
            // so only determinism matters.
            if u >= 1.0 {
                Ok((u, 1.0))
            } else if u >= 1.0 - v {
                Ok((1.0, 0.0))
            } else {
                Ok((u + v, 1.0))
            }
        }
        Loss::Logistic => {
            let w = logistic_prox_root(u, v)?;
            let lpp = sigmoid(w) * sigmoid(-w);
            Ok((w, 1.0 / (1.0 + v * lpp)))
        }
    }
}

/// Root of `w - u - v*sigmoid(-w) = 0` by safeguarded Newton inside the
/// bracket `[u, u + v]`. A Newton step is taken only when it stays in the
/// bracket and at least halves the previous step, otherwise the bracket is
/// bisected; Newton alone can ping-pong across the sigmoid's inflection.
fn logistic_prox_root(u: f64, v: f64) -> Result<f64, ProxError> {
    let mut lo = u;
    let mut hi = u + v;
    let mut w = u + v * sigmoid(-u);
    if !(w > lo && w < hi) {
        w = 0.5 * (lo + hi);
    }
    let mut step_prev = hi - lo;
    let mut residual = f64::INFINITY;
    for _ in 0..LOGISTIC_PROX_MAX_ITER {
        let s = sigmoid(-w);
        residual = w - u - v * s;
        if residual.abs() <= LOGISTIC_PROX_TOL {
            return Ok(w);
        }
        if residual > 0.0 {
            hi = w;
        } else {
            lo = w;
        }
        // The bracket can hit f64 resolution before the residual tolerance
        // when v is very large (residual scale grows with v); the root is
        // then as good as representable.
        if hi - lo <= f64::EPSILON * w.abs().max(1.0) {
            return Ok(w);
        }
        let slope = 1.0 + v * s * (1.0 - s);
        let newton_step = residual / slope;
        let newton = w - newton_step;
        w = if newton > lo && newton < hi && 2.0 * newton_step.abs() <= step_prev {
            step_prev = newton_step.abs();
            newton
        } else {
            step_prev = 0.5 * (hi - lo);
            0.5 * (lo + hi)
        };
    }
    Err(ProxError::NoConvergence {
        iterations: LOGISTIC_PROX_MAX_ITER,
        residual,
    })
}

/// `prox_{V l(., y)}(omega) = argmin_z (z - omega)^2 / (2V) + l(z, y)`.
pub fn prox(loss: Loss, v: f64, y: f64, omega: f64) -> Result<ProxResult, ProxError> {
    check_label(y)?;
    check_v(v)?;
    let (w, dw) = prox_margin(loss, v, y * omega)?;
    Ok(ProxResult {
        z: y * w,
        dz_domega: dw,
    })
}

/// Channel function `f(y, omega, V) = (prox(omega) - omega) / V`.
pub fn f_ell(loss: Loss, y: f64, omega: f64, v: f64) -> Result<f64, ProxError> {
    check_label(y)?;
    check_v(v)?;
    let u = y * omega;
    let (w, _) = prox_margin(loss, v, u)?;
    Ok(y * ((w - u) / v))
}

/// Omega-derivative of the channel function: `(dz/domega - 1) / V`.
pub fn df_ell_domega(loss: Loss, y: f64, omega: f64, v: f64) -> Result<f64, ProxError> {
    check_label(y)?;
    check_v(v)?;
    let (_, dw) = prox_margin(loss, v, y * omega)?;
    Ok((dw - 1.0) / v)
}

/// Channel function and its omega-derivative from one prox evaluation.
pub fn f_and_df(loss: Loss, y: f64, omega: f64, v: f64) -> Result<(f64, f64), ProxError> {
    check_label(y)?;
    check_v(v)?;
    let u = y * omega;
    let (w, dw) = prox_margin(loss, v, u)?;
    Ok((y * ((w - u) / v), (dw - 1.0) / v))
}

/// Margin-frame prox for the channel expectations: `w = y * prox(omega)` and
/// its derivative, as a function of `u = y * omega`.
pub(crate) fn margin_prox(loss: Loss, v: f64, u: f64) -> Result<(f64, f64), ProxError> {
    prox_margin(loss, v, u)
}

/// Margin values where the channel integrands lose smoothness (the prox
/// branch edges). Empty for losses whose prox is smooth.
pub(crate) fn margin_breakpoints(loss: Loss, v: f64) -> Vec<f64> {
    match loss {
        Loss::Hinge => vec![1.0 - v, 1.0],
        Loss::Square | Loss::Logistic => Vec::new(),
    }
}

/// Omega below which `y * prox(omega; y=+1)` turns negative.
///
/// The prox is nondecreasing in omega, so `{omega : y*prox < 0}` is a
/// half-line; this is its endpoint for `y = +1` (mirrored for `y = -1`).
/// Used for the asymptotic 0/1 error, where it turns the indicator
/// expectation into an exact Gaussian tail.
pub(crate) fn prox_sign_threshold(loss: Loss, v: f64) -> f64 {
    match loss {
        // z = (omega + v)/(1+v) < 0  <=>  omega < -v
        Loss::Square => -v,
        // Lower branch z = omega + v < 0  <=>  omega < -v (other branches positive).
        Loss::Hinge => -v,
        // z = 0 at omega = -v*sigmoid(0) = -v/2.
        Loss::Logistic => -0.5 * v,
    }
}

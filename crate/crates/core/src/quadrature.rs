//! Gauss-Hermite quadrature against the standard normal measure.
//!
//! All scalar expectations in the saddle-point equations are of the form
//! `E_{xi ~ N(0,1)}[g(m + s*xi)]`, optionally averaged over the two labels.
//! The rules here use the probabilists' convention, so nodes and weights
//! integrate exactly against `N(0,1)` with no `sqrt(2)` rescaling at call
//! sites.

use nalgebra::DMatrix;
use thiserror::Error;

/// Largest supported rule order.
pub const MAX_ORDER: usize = 512;

#[derive(Debug, Error)]
pub enum QuadratureError {
    #[error("quadrature order {0} outside supported range 1..={MAX_ORDER}")]
    OrderOutOfRange(usize),
    #[error("integrand returned a non-finite value at x = {0}")]
    NonFiniteEvaluation(f64),
}

/// Probabilists' Gauss-Hermite rule: exact for polynomials of degree
/// `2*order - 1` under the standard normal measure.
///
/// Nodes are sorted ascending and exactly symmetric about zero; paired
/// weights are exactly equal. Rules are immutable and safe to share.
#[derive(Debug, Clone)]
pub struct GaussHermiteRule {
    order: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// Builds the order-`order` probabilists' Gauss-Hermite rule by solving the
/// symmetric tridiagonal (Golub-Welsch) eigenproblem for the three-term
/// recurrence of the Hermite polynomials `He_n`.
pub fn gh_rule(order: usize) -> Result<GaussHermiteRule, QuadratureError> {
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(QuadratureError::OrderOutOfRange(order));
    }
    // Jacobi matrix of He_n: zero diagonal, off-diagonal sqrt(k).
    let mut jacobi = DMatrix::<f64>::zeros(order, order);
    for k in 1..order {
        let b = (k as f64).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = jacobi.symmetric_eigen();
    let mut rule: Vec<(f64, f64)> = (0..order)
        .map(|i| {
            let first = eig.eigenvectors[(0, i)];
            // Total mass of N(0,1) is 1, so the weight is just the squared
            // first component of the normalized eigenvector.
            (eig.eigenvalues[i], first * first)
        })
        .collect();
    rule.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("eigenvalues are finite"));

    let mut nodes: Vec<f64> = rule.iter().map(|r| r.0).collect();
    let mut weights: Vec<f64> = rule.iter().map(|r| r.1).collect();

    // Enforce the exact symmetry the eigen solver only delivers to roundoff:
    // x[i] = -x[n-1-i] and w[i] = w[n-1-i] bitwise, middle node exactly 0.
    let n = order;
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (nodes[i] - nodes[j]);
        nodes[i] = x;
        nodes[j] = -x;
        let w = 0.5 * (weights[i] + weights[j]);
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }

    Ok(GaussHermiteRule {
        order,
        nodes,
        weights,
    })
}

impl GaussHermiteRule {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E_{xi ~ N(0,1)}[g(m + s*xi)]`.
    ///
    /// Summation pairs the node `x` with `-x` before accumulating, so an
    /// integrand that is exactly odd about `m = 0` sums to exactly `0.0`.
    /// With `s = 0` this returns `g(m)` without touching the nodes.
    pub fn expect_gaussian<G>(&self, mean: f64, std: f64, mut g: G) -> Result<f64, QuadratureError>
    where
        G: FnMut(f64) -> f64,
    {
        Ok(self.expect_gaussian_multi(mean, std, |x| [g(x)])?[0])
    }

    /// Vector-valued variant of [`expect_gaussian`](Self::expect_gaussian):
    /// all components share one evaluation of `g` per node, with the same
    /// paired summation per component.
    pub fn expect_gaussian_multi<const N: usize, G>(
        &self,
        mean: f64,
        std: f64,
        mut g: G,
    ) -> Result<[f64; N], QuadratureError>
    where
        G: FnMut(f64) -> [f64; N],
    {
        assert!(std >= 0.0, "std must be non-negative, got {std}");
        let eval = |g: &mut G, x: f64| -> Result<[f64; N], QuadratureError> {
            let v = g(x);
            if v.iter().any(|c| !c.is_finite()) {
                return Err(QuadratureError::NonFiniteEvaluation(x));
            }
            Ok(v)
        };
        if std == 0.0 {
            return eval(&mut g, mean);
        }
        let n = self.order;
        let mut acc = [0.0; N];
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let gl = eval(&mut g, mean + std * self.nodes[i])?;
            let gr = eval(&mut g, mean + std * self.nodes[j])?;
            for k in 0..N {
                acc[k] += self.weights[i] * gl[k] + self.weights[j] * gr[k];
            }
        }
        if n % 2 == 1 {
            let gm = eval(&mut g, mean + std * self.nodes[n / 2])?;
            for k in 0..N {
                acc[k] += self.weights[n / 2] * gm[k];
            }
        }
        Ok(acc)
    }

    /// `(1/2) * sum_{y in {-1,+1}} E_{xi ~ N(0,1)}[h(y, m + s*xi)]`.
    pub fn expect_label_avg<H>(&self, mean: f64, std: f64, mut h: H) -> Result<f64, QuadratureError>
    where
        H: FnMut(f64, f64) -> f64,
    {
        Ok(self.expect_label_avg_multi(mean, std, |y, x| [h(y, x)])?[0])
    }

    /// Vector-valued label average; see
    /// [`expect_gaussian_multi`](Self::expect_gaussian_multi).
    pub fn expect_label_avg_multi<const N: usize, H>(
        &self,
        mean: f64,
        std: f64,
        mut h: H,
    ) -> Result<[f64; N], QuadratureError>
    where
        H: FnMut(f64, f64) -> [f64; N],
    {
        let minus = self.expect_gaussian_multi(mean, std, |x| h(-1.0, x))?;
        let plus = self.expect_gaussian_multi(mean, std, |x| h(1.0, x))?;
        let mut out = [0.0; N];
        for k in 0..N {
            out[k] = 0.5 * (plus[k] + minus[k]);
        }
        Ok(out)
    }
}

/// Truncation half-width of the piecewise integrator, in standard
/// deviations; the discarded tail mass is below 2e-33.
const PIECEWISE_WINDOW: f64 = 12.0;

const GL_ORDER: usize = 16;

/// Gauss-Legendre nodes and weights on [-1, 1], built once via the
/// Golub-Welsch eigenproblem for the Legendre recurrence.
fn gauss_legendre_16() -> &'static ([f64; GL_ORDER], [f64; GL_ORDER]) {
    use std::sync::OnceLock;
    static TABLE: OnceLock<([f64; GL_ORDER], [f64; GL_ORDER])> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut jacobi = DMatrix::<f64>::zeros(GL_ORDER, GL_ORDER);
        for k in 1..GL_ORDER {
            let kf = k as f64;
            let b = kf / (4.0 * kf * kf - 1.0).sqrt();
            jacobi[(k - 1, k)] = b;
            jacobi[(k, k - 1)] = b;
        }
        let eig = jacobi.symmetric_eigen();
        let mut pairs: Vec<(f64, f64)> = (0..GL_ORDER)
            .map(|i| {
                let first = eig.eigenvectors[(0, i)];
                // Legendre total mass on [-1, 1] is 2.
                (eig.eigenvalues[i], 2.0 * first * first)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite"));
        let mut nodes = [0.0; GL_ORDER];
        let mut weights = [0.0; GL_ORDER];
        for (i, (x, w)) in pairs.into_iter().enumerate() {
            nodes[i] = x;
            weights[i] = w;
        }
        (nodes, weights)
    })
}

fn normal_pdf(x: f64) -> f64 {
    (-(x * x) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `E_{xi ~ N(0,1)}[g(m + s*xi)]` for integrands that are smooth except at
/// known breakpoints.
///
/// The window `[m - 12s, m + 12s]` is split at the in-range breakpoints and
/// into panels at most one standard deviation wide, each integrated with a
/// 16-point Gauss-Legendre rule against the explicit normal density. This
/// resolves prox branch edges (kinks and derivative jumps) that a global
/// Hermite rule cannot.
pub fn expect_gaussian_piecewise<const N: usize, G>(
    mean: f64,
    std: f64,
    breakpoints: &[f64],
    mut g: G,
) -> Result<[f64; N], QuadratureError>
where
    G: FnMut(f64) -> [f64; N],
{
    assert!(std >= 0.0, "std must be non-negative, got {std}");
    if std == 0.0 {
        let v = g(mean);
        if v.iter().any(|c| !c.is_finite()) {
            return Err(QuadratureError::NonFiniteEvaluation(mean));
        }
        return Ok(v);
    }
    let lo = mean - PIECEWISE_WINDOW * std;
    let hi = mean + PIECEWISE_WINDOW * std;
    let mut edges: Vec<f64> = Vec::with_capacity(breakpoints.len() + 2);
    edges.push(lo);
    let mut inner: Vec<f64> = breakpoints
        .iter()
        .cloned()
        .filter(|b| *b > lo && *b < hi)
        .collect();
    inner.sort_by(f64::total_cmp);
    edges.extend(inner);
    edges.push(hi);

    let (gl_nodes, gl_weights) = gauss_legendre_16();
    let mut acc = [0.0; N];
    for pair in edges.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if !(b > a) {
            continue;
        }
        let panels = ((b - a) / std).ceil() as usize;
        let h = (b - a) / panels as f64;
        for k in 0..panels {
            let left = a + k as f64 * h;
            let center = left + 0.5 * h;
            let half = 0.5 * h;
            for (t, w) in gl_nodes.iter().zip(gl_weights) {
                let x = center + half * t;
                let gv = g(x);
                if gv.iter().any(|c| !c.is_finite()) {
                    return Err(QuadratureError::NonFiniteEvaluation(x));
                }
                let density = normal_pdf((x - mean) / std) / std;
                let scale = half * w * density;
                for i in 0..N {
                    acc[i] += scale * gv[i];
                }
            }
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn order_one_is_the_mean_rule() {
        let rule = gh_rule(1).unwrap();
        assert_eq!(rule.nodes(), &[0.0]);
        assert_abs_diff_eq!(rule.weights()[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn order_two_matches_roots_of_he2() {
        // He_2(x) = x^2 - 1, roots +-1, equal weights.
        let rule = gh_rule(2).unwrap();
        assert_abs_diff_eq!(rule.nodes()[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(rule.nodes()[1], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(rule.weights()[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(rule.weights()[1], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn order_out_of_range() {
        assert!(matches!(
            gh_rule(0),
            Err(QuadratureError::OrderOutOfRange(0))
        ));
        assert!(matches!(
            gh_rule(MAX_ORDER + 1),
            Err(QuadratureError::OrderOutOfRange(_))
        ));
        assert!(gh_rule(MAX_ORDER).is_ok());
    }

    /// Independent oracle for E[x^{2k}]: the double factorial (2k-1)!!.
    fn double_factorial_odd(upto: u64) -> f64 {
        let mut acc = 1.0;
        let mut k = upto;
        while k > 1 {
            acc *= k as f64;
            k -= 2;
        }
        acc
    }

    #[test]
    fn tenth_moment_at_order_20() {
        let rule = gh_rule(20).unwrap();
        let got = rule.expect_gaussian(0.0, 1.0, |x| x.powi(10)).unwrap();
        let want = double_factorial_odd(9); // 945
        assert_eq!(want, 945.0);
        assert!(
            ((got - want) / want).abs() <= 1e-10,
            "E[x^10] = {got}, want {want}"
        );
    }

    #[test]
    fn rule_moments_and_symmetry() {
        for order in (1..=64).chain([127usize, 128, 256, 512]) {
            let rule = gh_rule(order).unwrap();
            let sw: f64 = rule.weights().iter().sum();
            assert!(
                (sw - 1.0).abs() <= 1e-13,
                "order {order}: sum of weights {sw}"
            );
            let m1: f64 = rule
                .nodes()
                .iter()
                .zip(rule.weights())
                .map(|(x, w)| w * x)
                .sum();
            assert!(m1.abs() <= 1e-12, "order {order}: first moment {m1}");
            // Degree-2 exactness needs order >= 2.
            if order >= 2 {
                let m2: f64 = rule
                    .nodes()
                    .iter()
                    .zip(rule.weights())
                    .map(|(x, w)| w * x * x)
                    .sum();
                assert!(
                    (m2 - 1.0).abs() <= 1e-12,
                    "order {order}: second moment {m2}"
                );
            }
            for i in 0..order / 2 {
                let j = order - 1 - i;
                assert_eq!(rule.nodes()[i], -rule.nodes()[j]);
                assert_eq!(rule.weights()[i], rule.weights()[j]);
                assert!(rule.weights()[i] > 0.0);
            }
        }
    }

    #[test]
    fn gaussian_mgf_at_order_40() {
        // E[e^x] = e^{1/2} for x ~ N(0,1).
        let rule = gh_rule(40).unwrap();
        let got = rule.expect_gaussian(0.0, 1.0, f64::exp).unwrap();
        assert!(
            (got - 0.5f64.exp()).abs() <= 1e-9,
            "MGF mismatch: {got} vs {}",
            0.5f64.exp()
        );
    }

    #[test]
    fn expect_identity_and_square() {
        let rule = gh_rule(31).unwrap();
        let id = rule.expect_gaussian(0.3, 2.0, |x| x).unwrap();
        assert_abs_diff_eq!(id, 0.3, epsilon = 1e-13);
        let sq = rule.expect_gaussian(0.0, 1.0, |x| x * x).unwrap();
        assert_abs_diff_eq!(sq, 1.0, epsilon = 1e-13);
    }

    #[test]
    fn zero_std_evaluates_at_mean_exactly() {
        let rule = gh_rule(17).unwrap();
        let v = rule.expect_gaussian(1.25, 0.0, |x| 3.0 * x + 1.0).unwrap();
        assert_eq!(v, 3.0 * 1.25 + 1.0);
    }

    #[test]
    fn label_average_basics() {
        let rule = gh_rule(21).unwrap();
        let ylin = rule.expect_label_avg(0.7, 1.3, |y, _| y).unwrap();
        assert_eq!(ylin, 0.0);
        let one = rule.expect_label_avg(0.7, 1.3, |_, _| 1.0).unwrap();
        assert_abs_diff_eq!(one, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn odd_integrand_sums_to_exact_zero() {
        let rule = gh_rule(64).unwrap();
        let v = rule.expect_gaussian(0.0, 1.7, |x| x.powi(3) + x).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn non_finite_integrand_is_reported() {
        let rule = gh_rule(5).unwrap();
        let res = rule.expect_gaussian(0.0, 1.0, |x| 1.0 / x);
        assert!(matches!(res, Err(QuadratureError::NonFiniteEvaluation(_))));
    }

    #[test]
    fn piecewise_matches_smooth_expectations() {
        // On smooth integrands the split rule reproduces the Hermite rule.
        let got: [f64; 2] =
            expect_gaussian_piecewise(0.3, 1.7, &[], |x| [x, x * x]).unwrap();
        assert_abs_diff_eq!(got[0], 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(got[1], 0.3 * 0.3 + 1.7 * 1.7, epsilon = 1e-12);
        let mgf: [f64; 1] = expect_gaussian_piecewise(0.0, 1.0, &[], |x| [x.exp()]).unwrap();
        assert_abs_diff_eq!(mgf[0], 0.5f64.exp(), epsilon = 1e-12);
    }

    #[test]
    fn piecewise_resolves_kinks_to_high_accuracy() {
        // E[(x - a)_+] for x ~ N(0,1) has the closed form
        // phi(a) - a*(1 - Phi(a)); a global Hermite rule gets ~1e-4 here.
        let a = 0.37;
        let phi = normal_pdf(a);
        let cdf_tail = 0.5 * libm::erfc(a / std::f64::consts::SQRT_2);
        let want = phi - a * cdf_tail;
        let got: [f64; 1] =
            expect_gaussian_piecewise(0.0, 1.0, &[a], |x| [(x - a).max(0.0)]).unwrap();
        assert!(
            (got[0] - want).abs() <= 1e-12,
            "split rule {} vs closed form {want}",
            got[0]
        );
        // And a step function (derivative-of-hinge shape).
        let step: [f64; 1] =
            expect_gaussian_piecewise(0.0, 1.0, &[a], |x| [if x < a { 1.0 } else { 0.0 }])
                .unwrap();
        let want_step = 1.0 - cdf_tail;
        assert!((step[0] - want_step).abs() <= 1e-12);
    }

    #[test]
    fn piecewise_ignores_out_of_window_breakpoints() {
        let got: [f64; 1] =
            expect_gaussian_piecewise(0.0, 1.0, &[-1e9, 1e9], |x| [x * x]).unwrap();
        assert_abs_diff_eq!(got[0], 1.0, epsilon = 1e-12);
    }
}

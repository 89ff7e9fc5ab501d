//! Data models (Gaussian covariate and Gaussian mixtures) and the
//! matrix-trace half of the self-consistent equations: the map from
//! conjugate order parameters to order parameters through the resolvent
//! `A = lambda*I + sum_c vhat_c * Sigma_c`.

use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;
use thiserror::Error;

/// Resolvent condition estimate above which the channel refuses to proceed.
const RESOLVENT_COND_LIMIT: f64 = 1e14;

#[derive(Debug, Error)]
pub enum SpectraError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: String,
    },
    #[error("resolvent numerically singular (condition estimate {condition:e})")]
    SingularResolvent { condition: f64 },
    #[error("group '{group}' has {n} samples, need at least 2")]
    InsufficientSamples { group: String, n: usize },
}

/// Covariance of one Gaussian cloud.
///
/// `Spectral` stores eigenvalues on the standard coordinate axes, tagged by a
/// basis token: clusters whose tokens match are simultaneously diagonal and
/// take the fast path through the channel. `Isotropic` is `scale * I` and is
/// compatible with every basis.
#[derive(Debug, Clone)]
pub enum CovarianceModel {
    Isotropic { scale: f64, dim: usize },
    Spectral { eigenvalues: Vec<f64>, basis_id: String },
    Dense { matrix: DMatrix<f64> },
}

impl CovarianceModel {
    pub fn isotropic(scale: f64, dim: usize) -> Result<Self, SpectraError> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(SpectraError::InvalidModel(format!(
                "isotropic scale must be positive, got {scale}"
            )));
        }
        if dim == 0 {
            return Err(SpectraError::InvalidModel("dimension must be positive".into()));
        }
        Ok(CovarianceModel::Isotropic { scale, dim })
    }

    pub fn spectral(eigenvalues: Vec<f64>, basis_id: impl Into<String>) -> Result<Self, SpectraError> {
        if eigenvalues.is_empty() {
            return Err(SpectraError::InvalidModel("empty spectrum".into()));
        }
        if let Some(bad) = eigenvalues.iter().find(|&&e| !(e >= 0.0) || !e.is_finite()) {
            return Err(SpectraError::InvalidModel(format!(
                "spectral eigenvalues must be non-negative, got {bad}"
            )));
        }
        Ok(CovarianceModel::Spectral {
            eigenvalues,
            basis_id: basis_id.into(),
        })
    }

    /// Validates symmetry (1e-12 relative) and positive semi-definiteness
    /// (smallest eigenvalue >= -1e-10 * spectral norm).
    pub fn dense(matrix: DMatrix<f64>) -> Result<Self, SpectraError> {
        let (r, c) = matrix.shape();
        if r != c || r == 0 {
            return Err(SpectraError::InvalidModel(format!(
                "covariance must be square and non-empty, got {r}x{c}"
            )));
        }
        let scale = matrix.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..r {
            for j in (i + 1)..r {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-12 * scale.max(1e-300) {
                    return Err(SpectraError::InvalidModel(format!(
                        "matrix not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let eig = matrix.clone().symmetric_eigen().eigenvalues;
        let max_abs = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -1e-10 * max_abs {
            return Err(SpectraError::InvalidModel(format!(
                "matrix not positive semi-definite (min eigenvalue {min:e})"
            )));
        }
        Ok(CovarianceModel::Dense { matrix })
    }

    pub fn dim(&self) -> usize {
        match self {
            CovarianceModel::Isotropic { dim, .. } => *dim,
            CovarianceModel::Spectral { eigenvalues, .. } => eigenvalues.len(),
            CovarianceModel::Dense { matrix } => matrix.nrows(),
        }
    }

    pub fn trace(&self) -> f64 {
        match self {
            CovarianceModel::Isotropic { scale, dim } => scale * *dim as f64,
            CovarianceModel::Spectral { eigenvalues, .. } => eigenvalues.iter().sum(),
            CovarianceModel::Dense { matrix } => matrix.trace(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            CovarianceModel::Isotropic { scale, dim } => DMatrix::identity(*dim, *dim) * *scale,
            CovarianceModel::Spectral { eigenvalues, .. } => {
                DMatrix::from_diagonal(&DVector::from_column_slice(eigenvalues))
            }
            CovarianceModel::Dense { matrix } => matrix.clone(),
        }
    }

    /// Diagonal spectrum when this covariance is axis-aligned.
    fn axis_spectrum(&self) -> Option<Vec<f64>> {
        match self {
            CovarianceModel::Isotropic { scale, dim } => Some(vec![*scale; *dim]),
            CovarianceModel::Spectral { eigenvalues, .. } => Some(eigenvalues.clone()),
            CovarianceModel::Dense { .. } => None,
        }
    }

    fn basis_token(&self) -> Option<&str> {
        match self {
            CovarianceModel::Spectral { basis_id, .. } => Some(basis_id),
            _ => None,
        }
    }
}

/// One Gaussian cloud of the mixture.
#[derive(Debug, Clone)]
pub struct Cluster {
    pub rho: f64,
    pub mean: DVector<f64>,
    pub cov: CovarianceModel,
}

impl Cluster {
    pub fn new(rho: f64, mean: DVector<f64>, cov: CovarianceModel) -> Result<Self, SpectraError> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(SpectraError::InvalidModel(format!(
                "cluster weight must lie in [0,1], got {rho}"
            )));
        }
        if mean.len() != cov.dim() {
            return Err(SpectraError::DimensionMismatch {
                expected: cov.dim(),
                got: mean.len(),
                context: "cluster mean vs covariance".into(),
            });
        }
        let norm2 = mean.norm_squared();
        let p = cov.dim() as f64;
        // O(1) mean scaling is an asymptotic regime, not a validity condition.
        if norm2 > 10.0 * p.sqrt() {
            log::warn!(
                "cluster mean has squared norm {norm2:.3} > 10*sqrt(p) = {:.3}; \
                 outside the O(1) scaling regime",
                10.0 * p.sqrt()
            );
        }
        Ok(Cluster { rho, mean, cov })
    }

    pub fn zero_mean(rho: f64, cov: CovarianceModel) -> Result<Self, SpectraError> {
        let dim = cov.dim();
        Cluster::new(rho, DVector::zeros(dim), cov)
    }
}

/// Mixture of `K >= 1` Gaussian clouds; `K = 1` with zero mean is exactly the
/// Gaussian covariate model.
#[derive(Debug, Clone)]
pub struct MixtureModel {
    clusters: Vec<Cluster>,
    dim: usize,
}

impl MixtureModel {
    pub fn new(clusters: Vec<Cluster>) -> Result<Self, SpectraError> {
        let Some(first) = clusters.first() else {
            return Err(SpectraError::InvalidModel("mixture needs at least one cluster".into()));
        };
        let dim = first.cov.dim();
        for (i, c) in clusters.iter().enumerate() {
            if c.cov.dim() != dim {
                return Err(SpectraError::DimensionMismatch {
                    expected: dim,
                    got: c.cov.dim(),
                    context: format!("cluster {i}"),
                });
            }
        }
        let total: f64 = clusters.iter().map(|c| c.rho).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(SpectraError::InvalidModel(format!(
                "cluster weights sum to {total}, expected 1"
            )));
        }
        Ok(MixtureModel { clusters, dim })
    }

    /// Single centered cloud: the Gaussian covariate model.
    pub fn gcm(cov: CovarianceModel) -> Result<Self, SpectraError> {
        MixtureModel::new(vec![Cluster::zero_mean(1.0, cov)?])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.clusters.iter().map(|c| c.rho).collect()
    }

    pub fn all_means_zero(&self) -> bool {
        self.clusters.iter().all(|c| c.mean.iter().all(|&v| v == 0.0))
    }

    /// Same mixture with every mean zeroed.
    pub fn zeroed_means(&self) -> MixtureModel {
        let clusters = self
            .clusters
            .iter()
            .map(|c| Cluster {
                rho: c.rho,
                mean: DVector::zeros(self.dim),
                cov: c.cov.clone(),
            })
            .collect();
        MixtureModel {
            clusters,
            dim: self.dim,
        }
    }

    /// Axis-aligned spectra for all clusters, when they share a basis.
    /// Spectral clusters must carry the same basis token; isotropic clusters
    /// are compatible with anything; any dense cluster forces the dense path.
    fn shared_spectra(&self) -> Option<Vec<Vec<f64>>> {
        let mut token: Option<&str> = None;
        for c in &self.clusters {
            match c.cov.basis_token() {
                Some(t) => match token {
                    None => token = Some(t),
                    Some(prev) if prev == t => {}
                    Some(_) => return None,
                },
                None => {
                    if matches!(c.cov, CovarianceModel::Dense { .. }) {
                        return None;
                    }
                }
            }
        }
        self.clusters.iter().map(|c| c.cov.axis_spectrum()).collect()
    }
}

/// Conjugate order parameters of one cluster.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Conjugates {
    pub m_hat: f64,
    pub q_hat: f64,
    pub v_hat: f64,
}

/// Order parameters of one cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overlaps {
    pub m: f64,
    pub q: f64,
    pub v: f64,
}

/// Prior channel: maps conjugates to order parameters.
///
/// With `A = lambda*I + sum_c vhat_c Sigma_c`:
///   `V_c = tr(Sigma_c A^-1) / p`
///   `q_c = sum_c' [ qhat_c' tr(Sigma_c' Sigma_c A^-2)
///                   + mhat_c mhat_c' mu_c^T Sigma_c A^-2 mu_c' ] / p`
///   `m_c = mhat_c sum_c' mhat_c' mu_c^T A^-1 mu_c' / p`
///
/// Rank-one mean terms are evaluated as vector quadratic forms. The dense
/// path factorizes `A` once per call and reuses it for all clusters.
pub fn prior_channel(
    model: &MixtureModel,
    hats: &[Conjugates],
    lambda: f64,
) -> Result<Vec<Overlaps>, SpectraError> {
    let k = model.k();
    if hats.len() != k {
        return Err(SpectraError::DimensionMismatch {
            expected: k,
            got: hats.len(),
            context: "conjugates per cluster".into(),
        });
    }
    assert!(lambda >= 0.0, "lambda must be non-negative, got {lambda}");
    for h in hats {
        assert!(h.v_hat >= 0.0, "conjugate v_hat must be non-negative, got {}", h.v_hat);
    }
    match model.shared_spectra() {
        Some(spectra) => prior_channel_spectral(model, &spectra, hats, lambda),
        None => prior_channel_dense(model, hats, lambda),
    }
}

fn prior_channel_spectral(
    model: &MixtureModel,
    spectra: &[Vec<f64>],
    hats: &[Conjugates],
    lambda: f64,
) -> Result<Vec<Overlaps>, SpectraError> {
    let p = model.dim();
    let k = model.k();
    let mut a = vec![lambda; p];
    for (s, h) in spectra.iter().zip(hats) {
        for i in 0..p {
            a[i] += h.v_hat * s[i];
        }
    }
    let amin = a.iter().cloned().fold(f64::INFINITY, f64::min);
    let amax = a.iter().cloned().fold(0.0f64, f64::max);
    if !(amin > 0.0) || amax / amin > RESOLVENT_COND_LIMIT {
        return Err(SpectraError::SingularResolvent {
            condition: if amin > 0.0 { amax / amin } else { f64::INFINITY },
        });
    }

    let pf = p as f64;
    let mut out = Vec::with_capacity(k);
    for c in 0..k {
        let sc = &spectra[c];
        let v = sc.iter().zip(&a).map(|(s, ai)| s / ai).sum::<f64>() / pf;

        let mut q = 0.0;
        for c2 in 0..k {
            let t: f64 = spectra[c2]
                .iter()
                .zip(sc)
                .zip(&a)
                .map(|((s2, s1), ai)| s2 * s1 / (ai * ai))
                .sum();
            q += hats[c2].q_hat * t;
        }
        let mut m = 0.0;
        if hats[c].m_hat != 0.0 {
            let mu_c = &model.clusters()[c].mean;
            for c2 in 0..k {
                if hats[c2].m_hat == 0.0 {
                    continue;
                }
                let mu_c2 = &model.clusters()[c2].mean;
                let mut q_form = 0.0;
                let mut m_form = 0.0;
                for i in 0..p {
                    let prod = mu_c[i] * mu_c2[i];
                    q_form += prod * sc[i] / (a[i] * a[i]);
                    m_form += prod / a[i];
                }
                q += hats[c].m_hat * hats[c2].m_hat * q_form;
                m += hats[c].m_hat * hats[c2].m_hat * m_form;
            }
        }
        out.push(Overlaps {
            m: m / pf,
            q: q / pf,
            v,
        });
    }
    Ok(out)
}

fn prior_channel_dense(
    model: &MixtureModel,
    hats: &[Conjugates],
    lambda: f64,
) -> Result<Vec<Overlaps>, SpectraError> {
    let p = model.dim();
    let k = model.k();
    let sigmas: Vec<DMatrix<f64>> = model.clusters().iter().map(|c| c.cov.to_dense()).collect();

    let mut a = DMatrix::<f64>::identity(p, p) * lambda;
    for (sig, h) in sigmas.iter().zip(hats) {
        a += sig * h.v_hat;
    }
    // One symmetric factorization per call, reused for every cluster trace.
    let eig = a.symmetric_eigen();
    let dmin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let dmax = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    if !(dmin > 0.0) || dmax / dmin > RESOLVENT_COND_LIMIT {
        return Err(SpectraError::SingularResolvent {
            condition: if dmin > 0.0 { dmax / dmin } else { f64::INFINITY },
        });
    }
    let mut inv_d = eig.eigenvalues.clone();
    inv_d.apply(|v| *v = 1.0 / *v);
    // A^-1 = U diag(1/d) U^T, symmetric.
    let resolvent = &eig.eigenvectors * DMatrix::from_diagonal(&inv_d) * eig.eigenvectors.transpose();

    // P_c = A^-1 Sigma_c; tr(Sigma_c' Sigma_c A^-2) = <P_c', P_c> elementwise.
    let prods: Vec<DMatrix<f64>> = sigmas.iter().map(|s| &resolvent * s).collect();
    let res_mu: Vec<DVector<f64>> = model
        .clusters()
        .iter()
        .map(|c| &resolvent * &c.mean)
        .collect();
    let res_sig_mu: Vec<DVector<f64>> = model
        .clusters()
        .iter()
        .zip(&sigmas)
        .map(|(c, s)| &resolvent * (s * &c.mean))
        .collect();

    let pf = p as f64;
    let mut out = Vec::with_capacity(k);
    for c in 0..k {
        let v = sigmas[c].iter().zip(resolvent.iter()).map(|(x, y)| x * y).sum::<f64>() / pf;
        let mut q = 0.0;
        for c2 in 0..k {
            let t: f64 = prods[c2].iter().zip(prods[c].iter()).map(|(x, y)| x * y).sum();
            q += hats[c2].q_hat * t;
        }
        let mut m = 0.0;
        if hats[c].m_hat != 0.0 {
            let mu_c = &model.clusters()[c].mean;
            for c2 in 0..k {
                if hats[c2].m_hat == 0.0 {
                    continue;
                }
                q += hats[c].m_hat * hats[c2].m_hat * res_sig_mu[c].dot(&res_mu[c2]);
                m += hats[c].m_hat * hats[c2].m_hat * mu_c.dot(&res_mu[c2]);
            }
        }
        out.push(Overlaps {
            m: m / pf,
            q: q / pf,
            v,
        });
    }
    Ok(out)
}

/// Sample moments of a dataset.
#[derive(Debug, Clone)]
pub struct Moments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Per-class moments, present when labels were supplied. Classes are
    /// keyed by tag, sorted.
    pub per_class: Vec<ClassMoments>,
}

#[derive(Debug, Clone)]
pub struct ClassMoments {
    pub tag: String,
    pub n: usize,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

fn sample_moments(cols: &[usize], data: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let p = data.nrows();
    let n = cols.len();
    let mut mean = DVector::<f64>::zeros(p);
    for &j in cols {
        mean += data.column(j);
    }
    mean /= n as f64;
    let mut cov = DMatrix::<f64>::zeros(p, p);
    for &j in cols {
        let d = data.column(j) - &mean;
        cov.syger(1.0 / (n as f64 - 1.0), &d, &d, 1.0);
    }
    // syger filled the lower triangle; mirror it.
    for i in 0..p {
        for j in (i + 1)..p {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    (mean, cov)
}

/// Unbiased sample mean and covariance (divisor `n - 1`); columns of `data`
/// are samples. With labels, per-class moments (centered per class) come
/// along. Dataset-level centering is the default fed to the theory;
/// per-class covariances exist for the homogeneity diagnostics.
pub fn empirical_moments(
    data: &DMatrix<f64>,
    labels: Option<&[String]>,
) -> Result<Moments, SpectraError> {
    let n = data.ncols();
    if n < 2 {
        return Err(SpectraError::InsufficientSamples {
            group: "dataset".into(),
            n,
        });
    }
    if let Some(tags) = labels {
        if tags.len() != n {
            return Err(SpectraError::DimensionMismatch {
                expected: n,
                got: tags.len(),
                context: "labels per sample".into(),
            });
        }
    }
    let all: Vec<usize> = (0..n).collect();
    let (mean, cov) = sample_moments(&all, data);

    let mut per_class = Vec::new();
    if let Some(tags) = labels {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (j, t) in tags.iter().enumerate() {
            groups.entry(t.as_str()).or_default().push(j);
        }
        for (tag, cols) in groups {
            if cols.len() < 2 {
                return Err(SpectraError::InsufficientSamples {
                    group: tag.to_string(),
                    n: cols.len(),
                });
            }
            let (m, c) = sample_moments(&cols, data);
            per_class.push(ClassMoments {
                tag: tag.to_string(),
                n: cols.len(),
                mean: m,
                cov: c,
            });
        }
    }
    Ok(Moments {
        mean,
        cov,
        per_class,
    })
}

/// Correlation matrix of a covariance; zero-variance coordinates contribute
/// zero rows and columns rather than NaN.
pub fn correlation_matrix(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let p = cov.nrows();
    let std: Vec<f64> = (0..p)
        .map(|i| {
            let v = cov[(i, i)];
            if v > 0.0 {
                v.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    DMatrix::from_fn(p, p, |i, j| {
        if std[i] > 0.0 && std[j] > 0.0 {
            if i == j {
                1.0
            } else {
                cov[(i, j)] / (std[i] * std[j])
            }
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone)]
pub struct PairDistance {
    pub a: String,
    pub b: String,
    /// Relative Frobenius distance between raw covariances.
    pub covariance: f64,
    /// Relative Frobenius distance between correlation matrices.
    pub correlation: f64,
}

#[derive(Debug, Clone)]
pub struct HomogeneityReport {
    pub pairs: Vec<PairDistance>,
    /// Largest pairwise correlation distance: the homogeneity score.
    pub score: f64,
    pub covariance_score: f64,
}

fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = (a - b).norm();
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Pairwise similarity of per-class covariances, on both the raw matrices
/// and their correlation matrices.
pub fn homogeneity_report(
    covs: &[(String, DMatrix<f64>)],
) -> Result<HomogeneityReport, SpectraError> {
    if covs.len() < 2 {
        return Err(SpectraError::InvalidModel(format!(
            "homogeneity report needs at least 2 classes, got {}",
            covs.len()
        )));
    }
    let p = covs[0].1.nrows();
    for (tag, c) in covs {
        if c.nrows() != p || c.ncols() != p {
            return Err(SpectraError::DimensionMismatch {
                expected: p,
                got: c.nrows(),
                context: format!("class '{tag}' covariance"),
            });
        }
    }
    let corrs: Vec<DMatrix<f64>> = covs.iter().map(|(_, c)| correlation_matrix(c)).collect();
    let mut pairs = Vec::new();
    let mut score = 0.0f64;
    let mut cov_score = 0.0f64;
    for i in 0..covs.len() {
        for j in (i + 1)..covs.len() {
            let covariance = relative_frobenius(&covs[i].1, &covs[j].1);
            let correlation = relative_frobenius(&corrs[i], &corrs[j]);
            score = score.max(correlation);
            cov_score = cov_score.max(covariance);
            pairs.push(PairDistance {
                a: covs[i].0.clone(),
                b: covs[j].0.clone(),
                covariance,
                correlation,
            });
        }
    }
    Ok(HomogeneityReport {
        pairs,
        score,
        covariance_score: cov_score,
    })
}

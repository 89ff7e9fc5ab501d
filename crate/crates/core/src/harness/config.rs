//! Experiment configuration: JSON on disk, validated into model builders.

use crate::erm::Nonlinearity;
use crate::harness::HarnessError;
use crate::io;
use crate::prox::Loss;
use crate::replica::SaddleConfig;
use crate::spectra::{empirical_moments, Cluster, CovarianceModel, MixtureModel};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Default cap on `p * max(alpha)`, the largest sample count of the sweep.
const DEFAULT_SAMPLE_BUDGET: f64 = 1e7;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub losses: Vec<Loss>,
    pub alphas: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// Simulation dimension.
    pub p: usize,
    /// Number of simulation seeds per sweep point.
    #[serde(default = "one")]
    pub seeds: u32,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub solver: SolverOverrides,
    #[serde(default)]
    pub sample_budget: Option<f64>,
    #[serde(default)]
    pub outputs: OutputSpec,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OutputSpec {
    pub csv: Option<PathBuf>,
    pub svg: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SolverOverrides {
    pub damping: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub quad_order: Option<usize>,
    pub lambda_floor: Option<f64>,
}

impl SolverOverrides {
    pub fn apply(&self, mut cfg: SaddleConfig) -> SaddleConfig {
        if let Some(v) = self.damping {
            cfg.damping = v;
        }
        if let Some(v) = self.tol {
            cfg.tol = v;
        }
        if let Some(v) = self.max_iter {
            cfg.max_iter = v;
        }
        if let Some(v) = self.quad_order {
            cfg.quad_order = v;
        }
        if let Some(v) = self.lambda_floor {
            cfg.lambda_floor = v;
        }
        cfg
    }
}

/// Data model: a synthetic mixture, or an externally supplied feature
/// matrix (rows are samples), optionally standardized and passed through a
/// random feature map.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Mixture { clusters: Vec<ClusterSpec> },
    Data {
        path: PathBuf,
        #[serde(default)]
        labels: Option<PathBuf>,
        #[serde(default)]
        normalization: Normalization,
        #[serde(default)]
        feature_map: Option<FeatureMapSpec>,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    PerCoordinate,
    Global,
    None,
}

impl Normalization {
    pub fn name(&self) -> &'static str {
        match self {
            Normalization::PerCoordinate => "per_coordinate",
            Normalization::Global => "global",
            Normalization::None => "none",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureMapSpec {
    pub nonlinearity: Nonlinearity,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub rho: f64,
    #[serde(default)]
    pub mean: MeanSpec,
    pub cov: CovSpec,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeanSpec {
    #[default]
    Zero,
    /// `value * e_index`.
    Basis { index: usize, value: f64 },
    Values { values: Vec<f64> },
    /// I.i.d. `N(0, scale^2/p)` entries, so the squared norm is O(scale^2).
    Gaussian { scale: f64, seed: u64 },
}

impl MeanSpec {
    fn build(&self, dim: usize) -> Result<DVector<f64>, HarnessError> {
        match self {
            MeanSpec::Zero => Ok(DVector::zeros(dim)),
            MeanSpec::Basis { index, value } => {
                if *index >= dim {
                    return Err(HarnessError::Config(format!(
                        "basis mean index {index} out of range for dimension {dim}"
                    )));
                }
                let mut v = DVector::zeros(dim);
                v[*index] = *value;
                Ok(v)
            }
            MeanSpec::Values { values } => {
                if values.len() != dim {
                    return Err(HarnessError::Config(format!(
                        "mean has {} entries, dimension is {dim}",
                        values.len()
                    )));
                }
                Ok(DVector::from_column_slice(values))
            }
            MeanSpec::Gaussian { scale, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let s = scale / (dim as f64).sqrt();
                Ok(DVector::from_fn(dim, |_, _| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    s * g
                }))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovSpec {
    Isotropic { scale: f64 },
    Spectral {
        eigenvalues: Vec<f64>,
        #[serde(default = "shared_basis")]
        basis: String,
    },
    /// Equal contiguous blocks with the given diagonal values, expanded to
    /// the full dimension.
    Blocks {
        values: Vec<f64>,
        #[serde(default = "shared_basis")]
        basis: String,
    },
    /// Spectrum drawn i.i.d. uniform in `[lo, hi]` with a fixed seed.
    UniformSpectrum {
        lo: f64,
        hi: f64,
        seed: u64,
        #[serde(default = "shared_basis")]
        basis: String,
    },
    Dense { rows: Vec<Vec<f64>> },
}

fn shared_basis() -> String {
    "shared".into()
}

impl CovSpec {
    fn build(&self, dim: usize) -> Result<CovarianceModel, HarnessError> {
        let cov = match self {
            CovSpec::Isotropic { scale } => CovarianceModel::isotropic(*scale, dim)?,
            CovSpec::Spectral { eigenvalues, basis } => {
                if eigenvalues.len() != dim {
                    return Err(HarnessError::Config(format!(
                        "spectrum has {} eigenvalues, dimension is {dim}",
                        eigenvalues.len()
                    )));
                }
                CovarianceModel::spectral(eigenvalues.clone(), basis.clone())?
            }
            CovSpec::Blocks { values, basis } => {
                if values.is_empty() || values.len() > dim {
                    return Err(HarnessError::Config(format!(
                        "{} block values do not fit dimension {dim}",
                        values.len()
                    )));
                }
                let b = dim / values.len();
                let mut eigs = Vec::with_capacity(dim);
                for (k, &v) in values.iter().enumerate() {
                    let len = if k + 1 == values.len() { dim - k * b } else { b };
                    eigs.extend(std::iter::repeat_n(v, len));
                }
                CovarianceModel::spectral(eigs, basis.clone())?
            }
            CovSpec::UniformSpectrum { lo, hi, seed, basis } => {
                if !(hi > lo) {
                    return Err(HarnessError::Config(format!(
                        "uniform spectrum needs hi > lo, got [{lo}, {hi}]"
                    )));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let eigs: Vec<f64> = (0..dim).map(|_| rng.random_range(*lo..*hi)).collect();
                CovarianceModel::spectral(eigs, basis.clone())?
            }
            CovSpec::Dense { rows } => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(HarnessError::Config(format!(
                        "dense covariance must be {dim}x{dim}"
                    )));
                }
                let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
                CovarianceModel::dense(DMatrix::from_row_slice(dim, dim, &flat))?
            }
        };
        Ok(cov)
    }
}

/// The source data resolved into concrete objects the runners consume.
pub enum ResolvedModel {
    /// Synthetic mixture: theory solves it directly, simulations sample it.
    Mixture(MixtureModel),
    /// External matrix: theory uses the empirical covariance as a single
    /// centered Gaussian; simulations subsample columns.
    Data {
        /// Feature matrix, samples as columns (after normalization and
        /// optional feature map).
        features: DMatrix<f64>,
        theory: MixtureModel,
        provenance: String,
    },
}

impl ResolvedModel {
    pub fn theory_model(&self) -> &MixtureModel {
        match self {
            ResolvedModel::Mixture(m) => m,
            ResolvedModel::Data { theory, .. } => theory,
        }
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            HarnessError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.p == 0 {
            return Err(HarnessError::Config("p must be positive".into()));
        }
        if self.seeds == 0 {
            return Err(HarnessError::Config("seeds must be positive".into()));
        }
        for w in self.alphas.windows(2) {
            if !(w[1] > w[0]) {
                return Err(HarnessError::Config(format!(
                    "alphas must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if let Some(bad) = self.alphas.iter().find(|&&a| !(a > 0.0)) {
            return Err(HarnessError::Config(format!("alphas must be positive, got {bad}")));
        }
        if let Some(bad) = self.lambdas.iter().find(|&&l| !(l >= 0.0)) {
            return Err(HarnessError::Config(format!(
                "lambdas must be non-negative, got {bad}"
            )));
        }
        let budget = self.sample_budget.unwrap_or(DEFAULT_SAMPLE_BUDGET);
        let max_alpha = self.alphas.iter().cloned().fold(0.0f64, f64::max);
        if self.p as f64 * max_alpha > budget {
            return Err(HarnessError::Config(format!(
                "p * max(alpha) = {} exceeds the sample budget {budget}",
                self.p as f64 * max_alpha
            )));
        }
        Ok(())
    }

    pub fn saddle_config(&self) -> SaddleConfig {
        self.solver.apply(SaddleConfig::default())
    }

    /// Builds the mixture / loads and preprocesses the data file.
    pub fn resolve_model(&self) -> Result<ResolvedModel, HarnessError> {
        match &self.model {
            ModelSpec::Mixture { clusters } => {
                let built: Result<Vec<Cluster>, HarnessError> = clusters
                    .iter()
                    .map(|c| {
                        Ok(Cluster::new(c.rho, c.mean.build(self.p)?, c.cov.build(self.p)?)?)
                    })
                    .collect();
                Ok(ResolvedModel::Mixture(MixtureModel::new(built?)?))
            }
            ModelSpec::Data {
                path,
                normalization,
                feature_map,
                ..
            } => {
                let stored = io::read_matrix(path)?;
                let mut design = io::stored_to_design(&stored);
                normalize_in_place(&mut design, *normalization);
                let features = match feature_map {
                    Some(fm) => crate::erm::random_features(&design, self.p, fm.nonlinearity, fm.seed),
                    None => {
                        if design.nrows() != self.p {
                            return Err(HarnessError::Config(format!(
                                "data file has dimension {}, config p = {} (add a feature map or fix p)",
                                design.nrows(),
                                self.p
                            )));
                        }
                        design
                    }
                };
                let moments = empirical_moments(&features, None)?;
                let theory = MixtureModel::gcm(CovarianceModel::dense(moments.cov)?)?;
                let provenance = format!(
                    "file={} normalization={} feature_map={}",
                    path.display(),
                    normalization.name(),
                    feature_map
                        .as_ref()
                        .map(|f| format!("{:?}(seed={})", f.nonlinearity, f.seed))
                        .unwrap_or_else(|| "none".into()),
                );
                Ok(ResolvedModel::Data {
                    features,
                    theory,
                    provenance,
                })
            }
        }
    }
}

/// Standardizes samples-in-columns data in place.
fn normalize_in_place(design: &mut DMatrix<f64>, how: Normalization) {
    let (p, n) = design.shape();
    if n == 0 {
        return;
    }
    match how {
        Normalization::None => {}
        Normalization::PerCoordinate => {
            for i in 0..p {
                let mut mean = 0.0;
                for j in 0..n {
                    mean += design[(i, j)];
                }
                mean /= n as f64;
                let mut var = 0.0;
                for j in 0..n {
                    let d = design[(i, j)] - mean;
                    var += d * d;
                }
                let std = (var / n as f64).sqrt();
                let inv = if std > 0.0 { 1.0 / std } else { 0.0 };
                for j in 0..n {
                    design[(i, j)] = (design[(i, j)] - mean) * inv;
                }
            }
        }
        Normalization::Global => {
            let mean = design.iter().sum::<f64>() / (p * n) as f64;
            let var = design.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (p * n) as f64;
            let inv = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
            design.apply(|v| *v = (*v - mean) * inv);
        }
    }
}

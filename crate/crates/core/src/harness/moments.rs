//! Moments diagnostics over external data files: dataset mean/covariance in
//! the binary matrix format plus the per-class homogeneity report as CSV.

use crate::harness::HarnessError;
use crate::io;
use crate::spectra::{empirical_moments, homogeneity_report, HomogeneityReport};
use nalgebra::DMatrix;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub struct MomentsArtifacts {
    pub mean_path: PathBuf,
    pub cov_path: PathBuf,
    /// Present when labels were supplied.
    pub homogeneity_path: Option<PathBuf>,
    pub report: Option<HomogeneityReport>,
    pub n_samples: usize,
    pub dim: usize,
}

pub fn homogeneity_csv(report: &HomogeneityReport) -> String {
    let mut out = String::from("class_a,class_b,cov_distance,corr_distance\n");
    for p in &report.pairs {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.a,
            p.b,
            crate::harness::curve::fmt_f64(p.covariance),
            crate::harness::curve::fmt_f64(p.correlation),
        ));
    }
    out.push_str(&format!(
        "max,max,{},{}\n",
        crate::harness::curve::fmt_f64(report.covariance_score),
        crate::harness::curve::fmt_f64(report.score),
    ));
    out
}

/// Reads the data file (rows are samples), computes dataset moments and,
/// with labels, the per-class homogeneity distances. Writes
/// `<prefix>.mean.gumm`, `<prefix>.cov.gumm`, and `<prefix>.homogeneity.csv`.
pub fn run_moments(
    data_path: &Path,
    labels_path: Option<&Path>,
    out_prefix: &Path,
) -> Result<MomentsArtifacts, HarnessError> {
    let stored = io::read_matrix(data_path)?;
    let design = io::stored_to_design(&stored);
    let labels = labels_path.map(io::read_labels).transpose()?;
    let moments = empirical_moments(&design, labels.as_deref())?;

    let prefix = out_prefix.to_string_lossy();
    let mean_path = PathBuf::from(format!("{prefix}.mean.gumm"));
    let cov_path = PathBuf::from(format!("{prefix}.cov.gumm"));
    // Mean as a single stored row.
    let mean_row = DMatrix::from_fn(1, moments.mean.len(), |_, j| moments.mean[j]);
    io::write_matrix_gumm(&mean_path, &mean_row)?;
    io::write_matrix_gumm(&cov_path, &moments.cov)?;

    let mut homogeneity_path = None;
    let mut report = None;
    if !moments.per_class.is_empty() {
        let tagged: Vec<(String, DMatrix<f64>)> = moments
            .per_class
            .iter()
            .map(|c| (c.tag.clone(), c.cov.clone()))
            .collect();
        let rep = homogeneity_report(&tagged)?;
        let path = PathBuf::from(format!("{prefix}.homogeneity.csv"));
        std::fs::write(&path, homogeneity_csv(&rep))
            .map_err(|e| HarnessError::Curve(format!("cannot write {}: {e}", path.display())))?;
        homogeneity_path = Some(path);
        report = Some(rep);
    }
    Ok(MomentsArtifacts {
        mean_path,
        cov_path,
        homogeneity_path,
        report,
        n_samples: design.ncols(),
        dim: design.nrows(),
    })
}

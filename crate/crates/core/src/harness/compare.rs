//! Theory-versus-simulation comparison over the shared (loss, alpha, lambda)
//! keys: per-point absolute deviations and z-scores, with pass/fail against
//! configured thresholds.

use crate::harness::curve::{fmt_f64, LearningCurve, Source};
use crate::harness::HarnessError;
use crate::prox::Loss;
use std::collections::BTreeMap;

pub const REPORT_CSV_HEADER: &str = "loss,alpha,lambda,theory_loss,sim_loss,abs_dev,z";

#[derive(Debug, Clone, PartialEq)]
pub struct ComparePoint {
    pub loss: Loss,
    pub alpha: f64,
    pub lambda: f64,
    pub theory_loss: f64,
    pub sim_loss: f64,
    pub abs_dev: f64,
    /// Deviation over the simulation standard error, when one exists.
    pub z: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub points: Vec<ComparePoint>,
    pub max_dev: f64,
    pub max_z: Option<f64>,
    pub max_dev_threshold: Option<f64>,
    pub max_z_threshold: Option<f64>,
    pub pass: bool,
}

fn key(loss: Loss, alpha: f64, lambda: f64) -> (String, u64, u64) {
    (loss.name().to_string(), alpha.to_bits(), lambda.to_bits())
}

/// Joins the curves on their exact keys and scores the deviations.
///
/// The reference side uses theory rows; the other side uses simulation
/// rows, or, when the curve carries none (two predictions being
/// differenced), its theory rows.
pub fn run_compare(
    theory: &LearningCurve,
    sim: &LearningCurve,
    max_dev_threshold: Option<f64>,
    max_z_threshold: Option<f64>,
) -> Result<CompareReport, HarnessError> {
    let mut theory_map = BTreeMap::new();
    for row in theory.rows.iter().filter(|r| r.source == Source::Theory) {
        theory_map.insert(key(row.loss, row.alpha, row.lambda), row);
    }
    let sim_source = if sim.rows.iter().any(|r| r.source == Source::Simulation) {
        Source::Simulation
    } else {
        Source::Theory
    };
    let mut points = Vec::new();
    for row in sim.rows.iter().filter(|r| r.source == sim_source) {
        let Some(t) = theory_map.get(&key(row.loss, row.alpha, row.lambda)) else {
            continue;
        };
        // Failed points carry NaN means; they cannot be scored.
        if !row.mean_loss.is_finite() || !t.mean_loss.is_finite() {
            continue;
        }
        let abs_dev = (row.mean_loss - t.mean_loss).abs();
        let z = row
            .stderr_loss
            .filter(|&s| s > 0.0)
            .map(|s| abs_dev / s);
        points.push(ComparePoint {
            loss: row.loss,
            alpha: row.alpha,
            lambda: row.lambda,
            theory_loss: t.mean_loss,
            sim_loss: row.mean_loss,
            abs_dev,
            z,
        });
    }
    if points.is_empty() {
        return Err(HarnessError::EmptyIntersection);
    }
    let max_dev = points.iter().map(|p| p.abs_dev).fold(0.0f64, f64::max);
    let max_z = points
        .iter()
        .filter_map(|p| p.z)
        .fold(None, |acc: Option<f64>, z| Some(acc.map_or(z, |a| a.max(z))));
    let mut pass = true;
    if let Some(limit) = max_dev_threshold {
        pass &= max_dev <= limit;
    }
    if let (Some(limit), Some(mz)) = (max_z_threshold, max_z) {
        pass &= mz <= limit;
    }
    Ok(CompareReport {
        points,
        max_dev,
        max_z,
        max_dev_threshold,
        max_z_threshold,
        pass,
    })
}

impl CompareReport {
    /// Structured text report, deterministic for fixed inputs.
    pub fn to_text(&self) -> String {
        let mut out = String::from("theory-vs-simulation comparison\n");
        for p in &self.points {
            out.push_str(&format!(
                "point loss={} alpha={} lambda={} theory={} sim={} dev={} z={}\n",
                p.loss.name(),
                fmt_f64(p.alpha),
                fmt_f64(p.lambda),
                fmt_f64(p.theory_loss),
                fmt_f64(p.sim_loss),
                fmt_f64(p.abs_dev),
                p.z.map(fmt_f64).unwrap_or_else(|| "n/a".into()),
            ));
        }
        out.push_str(&format!("summary max_dev={}", fmt_f64(self.max_dev)));
        match self.max_z {
            Some(z) => out.push_str(&format!(" max_z={}", fmt_f64(z))),
            None => out.push_str(" max_z=n/a"),
        }
        match self.max_dev_threshold {
            Some(t) => out.push_str(&format!(" dev_threshold={}", fmt_f64(t))),
            None => out.push_str(" dev_threshold=none"),
        }
        match self.max_z_threshold {
            Some(t) => out.push_str(&format!(" z_threshold={}", fmt_f64(t))),
            None => out.push_str(" z_threshold=none"),
        }
        out.push_str(&format!(" verdict={}\n", if self.pass { "PASS" } else { "FAIL" }));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_CSV_HEADER);
        out.push('\n');
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                p.loss.name(),
                fmt_f64(p.alpha),
                fmt_f64(p.lambda),
                fmt_f64(p.theory_loss),
                fmt_f64(p.sim_loss),
                fmt_f64(p.abs_dev),
                p.z.map(fmt_f64).unwrap_or_default(),
            ));
        }
        out
    }
}

//! Learning-curve records and their bit-exact CSV form.
//!
//! Schema: `loss,alpha,lambda,source,mean_loss,stderr_loss,mean_01,stderr_01,n_seeds,converged`
//! with floats printed to 17 significant digits so a parsed curve equals the
//! in-memory one exactly.

use crate::harness::HarnessError;
use crate::prox::Loss;
use std::path::Path;

pub const CSV_HEADER: &str =
    "loss,alpha,lambda,source,mean_loss,stderr_loss,mean_01,stderr_01,n_seeds,converged";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Theory,
    Simulation,
}

impl Source {
    pub fn name(&self) -> &'static str {
        match self {
            Source::Theory => "theory",
            Source::Simulation => "simulation",
        }
    }
}

impl std::str::FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "theory" => Ok(Source::Theory),
            "simulation" => Ok(Source::Simulation),
            other => Err(format!("unknown source '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub loss: Loss,
    pub alpha: f64,
    pub lambda: f64,
    pub source: Source,
    pub mean_loss: f64,
    /// Present only for simulation rows with at least two seeds.
    pub stderr_loss: Option<f64>,
    pub mean_01: f64,
    pub stderr_01: Option<f64>,
    pub n_seeds: u32,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LearningCurve {
    pub rows: Vec<CurveRow>,
}

/// 17 significant digits: exact f64 round trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn parse_f64(field: &str, line: usize) -> Result<f64, HarnessError> {
    field
        .parse::<f64>()
        .map_err(|e| HarnessError::Curve(format!("line {line}: bad float '{field}': {e}")))
}

fn parse_opt(field: &str, line: usize) -> Result<Option<f64>, HarnessError> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_f64(field, line).map(Some)
    }
}

impl LearningCurve {
    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            a.loss
                .name()
                .cmp(b.loss.name())
                .then(a.alpha.total_cmp(&b.alpha))
                .then(a.lambda.total_cmp(&b.lambda))
                .then(a.source.name().cmp(b.source.name()))
        });
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.loss.name(),
                fmt_f64(r.alpha),
                fmt_f64(r.lambda),
                r.source.name(),
                fmt_f64(r.mean_loss),
                fmt_opt(r.stderr_loss),
                fmt_f64(r.mean_01),
                fmt_opt(r.stderr_01),
                r.n_seeds,
                r.converged,
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, HarnessError> {
        let mut rows = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            if idx == 0 {
                if line != CSV_HEADER {
                    return Err(HarnessError::Curve(format!(
                        "unexpected header '{line}'"
                    )));
                }
                continue;
            }
            let lineno = idx + 1;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 10 {
                return Err(HarnessError::Curve(format!(
                    "line {lineno}: expected 10 fields, got {}",
                    fields.len()
                )));
            }
            rows.push(CurveRow {
                loss: fields[0]
                    .parse()
                    .map_err(|e| HarnessError::Curve(format!("line {lineno}: {e}")))?,
                alpha: parse_f64(fields[1], lineno)?,
                lambda: parse_f64(fields[2], lineno)?,
                source: fields[3]
                    .parse()
                    .map_err(|e| HarnessError::Curve(format!("line {lineno}: {e}")))?,
                mean_loss: parse_f64(fields[4], lineno)?,
                stderr_loss: parse_opt(fields[5], lineno)?,
                mean_01: parse_f64(fields[6], lineno)?,
                stderr_01: parse_opt(fields[7], lineno)?,
                n_seeds: fields[8]
                    .parse()
                    .map_err(|e| HarnessError::Curve(format!("line {lineno}: {e}")))?,
                converged: match fields[9] {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(HarnessError::Curve(format!(
                            "line {lineno}: bad converged flag '{other}'"
                        )))
                    }
                },
            });
        }
        Ok(LearningCurve { rows })
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_csv())
            .map_err(|e| HarnessError::Curve(format!("cannot write {}: {e}", path.display())))
    }

    pub fn read_csv(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Curve(format!("cannot read {}: {e}", path.display())))?;
        Self::from_csv(&text)
    }

    pub fn any_failed(&self) -> bool {
        self.rows.iter().any(|r| !r.converged)
    }
}

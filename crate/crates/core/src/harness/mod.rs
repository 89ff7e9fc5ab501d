//! Experiment harness: configuration, sweep runners, learning-curve CSV,
//! theory-vs-simulation comparison, SVG plots, and moments diagnostics.

pub mod compare;
pub mod config;
pub mod curve;
pub mod moments;
pub mod runner;
pub mod svg;

use crate::erm::ErmError;
use crate::io::GulIoError;
use crate::replica::ReplicaError;
use crate::spectra::SpectraError;
use thiserror::Error;

pub use compare::{run_compare, CompareReport};
pub use config::ExperimentConfig;
pub use curve::{CurveRow, LearningCurve, Source};
pub use moments::run_moments;
pub use runner::{run_predict, run_simulate};
pub use svg::emit_svg;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("curve error: {0}")]
    Curve(String),
    #[error(transparent)]
    Io(#[from] GulIoError),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error(transparent)]
    Replica(#[from] ReplicaError),
    #[error(transparent)]
    Erm(#[from] ErmError),
    #[error("no shared (loss, alpha, lambda) keys between the curves")]
    EmptyIntersection,
    #[error("cannot plot an empty curve")]
    EmptyCurve,
}

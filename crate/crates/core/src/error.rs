use std::io;

use thiserror::Error;

/// Errors produced anywhere in the offline/online chain.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh request: {0}")]
    InvalidMesh(String),

    #[error("degenerate facet {facet}: length {length:e}")]
    DegenerateFacet { facet: usize, length: f64 },

    #[error("point ({x}, {y}) lies outside the mesh")]
    PointOutsideDomain { x: f64, y: f64 },

    #[error("invalid material: {0}")]
    InvalidMaterial(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("elastic system is singular; check displacement constraints for rigid-body modes")]
    RigidBodyMode,

    #[error("linear system is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error(
        "fixed-stress iteration did not converge in {iterations} iterations at t = {time} s \
         (pressure increment {pressure_increment:e}, displacement increment {displacement_increment:e})"
    )]
    FixedStressDiverged {
        time: f64,
        iterations: usize,
        pressure_increment: f64,
        displacement_increment: f64,
    },

    #[error("time step {step} (t = {time} s) failed: {source}")]
    StepFailed {
        step: usize,
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    TrainingDiverged { epoch: usize, loss: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("format error: {0}")]
    Format(String),

    #[error("provenance mismatch: {0}")]
    Provenance(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

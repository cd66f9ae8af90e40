use thiserror::Error;

use crate::solver::OrbitRecord;

#[derive(Debug, Error)]
pub enum Error {
    /// A point-level operation was called outside its domain.
    #[error("{0}")]
    Domain(String),

    #[error("invalid loop: {0}")]
    InvalidLoop(String),

    #[error("degenerate loop: ẑ vanishes (ẑ = {zhat:e})")]
    DegenerateLoop { zhat: f64 },

    #[error("winding undefined: loop touches center")]
    WindingTouchesCenter,

    #[error("undersampled loop: angular increment {increment:.6} ≥ π at sample {index}")]
    UndersampledLoop { index: usize, increment: f64 },

    #[error("undersampled lift at sample {index}")]
    UndersampledLift { index: usize },

    #[error("cannot lift through branch point (sample {index} within clearance of ±1)")]
    LiftThroughBranchPoint { index: usize },

    #[error("unregularized action singular near collision (sample {index})")]
    SingularAction { index: usize },

    #[error("singularity: q = {re} + {im}i at a primary")]
    Singularity { re: f64, im: f64 },

    #[error("invalid field configuration: {0}")]
    InvalidFields(String),

    #[error("field validation failed: {}", .0.join("; "))]
    FieldValidation(Vec<String>),

    #[error("no convergence after {iterations} iterations (grad_norm = {grad_norm:e})")]
    NoConvergence {
        iterations: usize,
        grad_norm: f64,
        best: Box<OrbitRecord>,
    },

    #[error("degenerated toward excluded locus: {0}")]
    Degenerated(String),

    #[error("continuation failed at step {step}: {source}")]
    Continuation {
        step: usize,
        config: Box<crate::fields::FieldConfig>,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid options: {0}")]
    InvalidOptions(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

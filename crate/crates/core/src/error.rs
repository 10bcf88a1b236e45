use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the modal analysis and swing-up pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("linearized stiffness is not symmetric positive-definite (min eigenvalue {min_eigenvalue:e})")]
    StiffnessNotSpd { min_eigenvalue: f64 },

    #[error("non-finite state after integrating to t = {t} s")]
    Blowup { t: f64 },

    #[error("shooting did not converge after {iterations} iterations (best residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("orbit at E = {energy} J has {count} turning points, expected 2")]
    SpuriousTurningPoint { energy: f64, count: usize },

    #[error("continuation stalled at E = {energy} J (step floor {floor:e} J)")]
    ContinuationStalled { energy: f64, floor: f64 },

    #[error("no grid energy exceeds the instability threshold")]
    NeverUnstable,

    #[error("torque limit {tau_max} N·m cannot hold any turning point of the family (top energy {top_energy} J)")]
    Unreachable { tau_max: f64, top_energy: f64 },

    #[error("phase is undefined at q1 = {q1:e}, qd1 = {qd1:e}")]
    DegeneratePhase { q1: f64, qd1: f64 },

    #[error("energy {energy} J is outside chart range [{lo}, {hi}] J")]
    OutOfRange { energy: f64, lo: f64, hi: f64 },

    #[error("triangulation failed: {0}")]
    DegenerateTriangulation(String),

    #[error("phase is not monotone along the orbit at E = {energy} J")]
    PhaseNotMonotone { energy: f64 },

    #[error("matrix square root failed: {0}")]
    MatrixSqrtFailure(&'static str),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unsupported schema version {found} (expected {expected})")]
    Schema { found: u32, expected: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

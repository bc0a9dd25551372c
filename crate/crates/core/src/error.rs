use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("integration diverged: non-finite state after {substeps} substeps")]
    IntegrationDiverged { substeps: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("state {state:?} lies outside the state bounds")]
    OutOfBounds { state: Vec<f64> },

    #[error("infeasible edge {from} -> {to}: residual {residual:e} >= {tolerance:e}")]
    InfeasibleEdge {
        from: usize,
        to: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("no such vertex: {0}")]
    UnknownVertex(usize),

    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("layer dimensions do not chain: {0}")]
    DimensionChain(String),

    #[error("unsupported format version {found} (supported major {supported})")]
    VersionMismatch { found: String, supported: u32 },

    #[error("corrupt file: {0}")]
    CorruptFile(String),

    #[error("controller starved: no finite value within reach at {} probed controls", probed.len())]
    ControllerStarved { probed: Vec<Vec<f64>> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Checks a `"<major>.<minor>"` version string against the supported major.
pub(crate) fn check_version(found: &str, supported: u32) -> Result<()> {
    let major = found
        .split('.')
        .next()
        .and_then(|m| m.trim().parse::<u32>().ok());
    match major {
        Some(m) if m == supported => Ok(()),
        _ => Err(Error::VersionMismatch {
            found: found.to_string(),
            supported,
        }),
    }
}

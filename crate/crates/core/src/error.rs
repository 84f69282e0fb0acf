use thiserror::Error;

pub type Result<T, E = KitroError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KitroError {
    #[error("rotation {index} is not a proper rotation (deviation {deviation:.3e})")]
    NonOrthonormalRotation { index: usize, deviation: f64 },

    #[error("point {index} is not projectable (depth {depth})")]
    NotProjectable { index: usize, depth: f64 },

    #[error("degenerate camera configuration: {0}")]
    DegenerateCamera(String),

    #[error("rotation axis is not unit length (norm {norm})")]
    NonUnitAxis { norm: f64 },

    #[error("rotation axis is ambiguous for antiparallel directions")]
    AmbiguousAxis,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("chain of {len} bones exceeds the maximum of {max}")]
    ChainTooLong { len: usize, max: usize },

    #[error("numerical degradation: rotation drift {deviation:.3e}")]
    NumericalDegradation { deviation: f64 },

    #[error("sampling failed after {attempts} attempts")]
    SamplingFailed { attempts: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("malformed model or record: {0}")]
    Format(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("combined system of {0} qubits exceeds the supported maximum of 4")]
    DimensionOverflow(usize),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("unknown qubit label `{0}`")]
    UnknownLabel(String),

    #[error("duplicate qubit label `{0}`")]
    DuplicateLabel(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("target fidelity {target} is unreachable for the {channel} channel")]
    UnreachableTarget { target: f64, channel: &'static str },

    #[error("heralding probability {0:e} is too small to condition on")]
    VanishingHerald(f64),

    #[error("measurement settings do not span the two-qubit operator space (rank {rank} < 16)")]
    RankDeficient { rank: usize },

    #[error("optimizer did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },

    #[error("no usable events in stream")]
    EmptyStream,

    #[error("interferometer delay is off by {observed_ps:.1} ps, beyond the {tolerance_ps} ps tolerance")]
    MismatchedDelay { observed_ps: f64, tolerance_ps: f64 },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

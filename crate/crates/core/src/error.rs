use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A configuration field is missing or out of range.
    #[error("{path}: {message}")]
    Config { path: String, message: String },

    #[error("target is colocated with the base station (zero range)")]
    ZeroRange,

    #[error("reciprocal filter: transmitted symbol at (k={k}, m={m}) is zero")]
    ZeroSymbol { k: usize, m: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("insufficient measurements: {needed} required, {got} available")]
    InsufficientMeasurements { needed: usize, got: usize },

    #[error("all fusion weights are zero")]
    ZeroWeights,

    #[error("normal equations are rank deficient (condition ratio {ratio:.3e})")]
    RankDeficient { ratio: f64 },

    #[error("sector [{theta_min:.4}, {theta_max:.4}] rad is outside the visible region")]
    SectorOutOfRange { theta_min: f64, theta_max: f64 },

    #[error("sector beam misses its contract: ripple {ripple_db:.2} dB, sidelobe {sidelobe_db:.2} dB")]
    SectorContract { ripple_db: f64, sidelobe_db: f64 },

    #[error("linear solve failed: {0}")]
    Solve(String),

    #[error("empty grid")]
    EmptyGrid,

    #[error("trial {trial} at point {point}: {source}")]
    Trial {
        trial: usize,
        point: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

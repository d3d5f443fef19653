//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// The 3x3 chart-identification system could not be solved. Cannot occur
    /// for the pinhole chart; kept as a defensive path.
    #[error("singular chart system at pixel ({i}, {j})")]
    SingularChart { i: usize, j: usize },

    #[error("grid/field shape mismatch: expected {expected:?}, got {got:?}")]
    GridMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("ray origin lies outside the scene interior")]
    OriginOutside,

    #[error("bad configuration: {0}")]
    BadConfig(String),

    #[error("surface-of-revolution profile is not convex: {0}")]
    NonConvexProfile(String),

    #[error("camera position {position:?} left the trajectory envelope")]
    EnvelopeExit { position: [f64; 3] },

    #[error("time {t} outside trajectory range [0, {duration}]")]
    OutOfRange { t: f64, duration: f64 },

    #[error("need frames around index {index}, sequence has {len}")]
    InsufficientFrames { index: usize, len: usize },

    /// A characteristic path left the chart domain while a chart-restricted
    /// depth field was the only depth source.
    #[error("characteristic path left the chart domain")]
    LeftDomain,

    #[error("non-finite value in {what} at step {step}")]
    NonfiniteField { what: &'static str, step: u64 },

    #[error("bad observer gains: {0}")]
    BadGains(String),

    #[error("bad window margins: {0}")]
    BadMargins(String),

    #[error("missing or empty diagnostics CSV: {0}")]
    MissingCsv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

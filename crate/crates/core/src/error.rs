use thiserror::Error;

/// Errors raised by the geometric primitives and the analysis pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid plane: {0}")]
    InvalidPlane(String),

    #[error("rank-deficient basis: vector {index} has residual norm {residual:e} below 1e-12")]
    RankDeficient { index: usize, residual: f64 },

    #[error("empty basis")]
    EmptyBasis,

    #[error("smallness condition violated: C3(m)*(eps + C2(m)*delta) = {value} must be < 1/2")]
    SmallnessCondition { value: f64 },

    #[error("degenerate face {face}: opposite face volume {volume:e} is below threshold")]
    DegenerateFace { face: usize, volume: f64 },

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("I/O error: {0}")]
    Io(String),

    #[error("too few usable points: need {needed}, found {found}")]
    TooFewPoints { needed: usize, found: usize },

    #[error("exact search cutoff exceeded: N = {n} > {cutoff} (pass an override to force)")]
    CutoffExceeded { n: usize, cutoff: usize },

    #[error("sample carries no analytic tangent planes")]
    MissingTangents,

    #[error("no usable scales after guards: {0}")]
    EmptyGrid(String),

    #[error("too flat to fit: every beta value is below the noise floor")]
    TooFlatToFit,

    #[error("insufficient family: {0}")]
    InsufficientFamily(String),

    #[error("inconsistent data: {0}")]
    Inconsistent(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

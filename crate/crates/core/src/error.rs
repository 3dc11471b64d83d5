use thiserror::Error;

/// Errors raised by model construction, inference, persistence and benchmarking.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("index {index} out of range (bound {bound})")]
    IndexOutOfRange { index: usize, bound: usize },

    #[error("invalid sparse structure: {0}")]
    InvalidStructure(String),

    #[error("invalid chunk boundaries: {0}")]
    InvalidBoundaries(String),

    #[error("chunk width {0} exceeds the 16-bit local column range")]
    ChunkTooWide(usize),

    #[error("dense lookup requires a scratch buffer")]
    MissingScratch,

    #[error("scratch holds {have} slots but the matrix dimension is {need}")]
    ScratchTooSmall { have: usize, need: usize },

    #[error("hash lookup requires a hash index; build it before inference")]
    MissingHashIndex,

    #[error("top-k {k} must be between 1 and the beam width {beam}")]
    InvalidTopk { k: usize, beam: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported format: {0}")]
    Version(String),

    #[error("shape inconsistency: {0}")]
    Shape(String),

    #[error("predictions of configuration `{0}` differ from the reference")]
    PredictionMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors produced anywhere in the spotting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate polyline: {0}")]
    DegeneratePolyline(String),
    #[error("bad arity: {0}")]
    BadArity(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("arity mismatch: expected {expected}, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("degenerate box: {0}")]
    DegenerateBox(String),
    #[error("singular matrix")]
    SingularMatrix,
    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(String),
    #[error("singular linear system: {0}")]
    SingularSystem(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("insufficient statistics: {0}")]
    InsufficientStatistics(String),
    #[error("index {index} out of range for size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("missing gradient for parameter {0}")]
    MissingGradient(String),
    #[error("empty target sequence")]
    EmptyTarget,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("baseline too short: need {needed:.2} px, have {available:.2} px")]
    BaselineTooShort { needed: f64, available: f64 },
    #[error("could not place instance after {0} tries")]
    PlacementFailure(usize),
    #[error("lexicon is empty")]
    EmptyLexicon,
    #[error("unsupported character {0:?}")]
    UnsupportedChar(char),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

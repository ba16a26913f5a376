use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("{op}: input slice has zero norm")]
    ZeroNorm { op: &'static str },

    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("graph was already back-propagated; build a new graph for the next step")]
    GraphConsumed,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("training diverged at epoch {epoch}, step {step}: first non-finite term is {term}")]
    Diverged { epoch: usize, step: usize, term: &'static str },

    #[error("manifest row {row}: {message}")]
    Manifest { row: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing role {0} in scored samples")]
    MissingRole(&'static str),

    #[error("expected artifact not found: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("hash mismatch: {0}")]
    HashMismatch(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("png decode error: {0}")]
    PngDecode(#[from] png::DecodingError),

    #[error("png encode error: {0}")]
    PngEncode(#[from] png::EncodingError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

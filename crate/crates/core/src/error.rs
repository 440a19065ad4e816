use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero-norm vector in {0} argument")]
    ZeroNorm(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("token id {id} at position {position} is outside vocabulary of size {vocab_size}")]
    TokenOutOfRange { position: usize, id: u32, vocab_size: usize },

    #[error("sequence has no unmasked positions")]
    AllMasked,

    #[error("sequence length {len} exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{}:{line}: {message}", path.display())]
    Schema { path: PathBuf, line: usize, message: String },

    #[error("unknown entity id `{0}`")]
    UnknownEntity(String),

    #[error("encoding entity `{id}`: {source}")]
    EntityEncoding { id: String, source: Box<Error> },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training failed at epoch {epoch}, step {step}: {source}")]
    Training { epoch: usize, step: usize, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable category, used for CLI error lines.
    pub fn category(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. }
            | Error::ZeroNorm(_)
            | Error::NonFinite(_)
            | Error::AllMasked => "numeric",
            Error::Empty(_) | Error::InvalidArgument(_) => "argument",
            Error::TokenOutOfRange { .. } | Error::SequenceTooLong { .. } => "sequence",
            Error::Config(_) => "config",
            Error::Schema { .. } => "schema",
            Error::UnknownEntity(_) => "data",
            Error::EntityEncoding { source, .. } | Error::Training { source, .. } => {
                source.category()
            }
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
        }
    }
}

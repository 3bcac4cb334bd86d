use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("adapter `{adapter}` failed: {message}")]
    Adapter { adapter: String, message: String },
    #[error("degenerate crop")]
    DegenerateCrop,
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: u32, size: usize },
    #[error("invalid prompt sequence at token {position}: {message}")]
    InvalidPrompt { position: usize, message: String },
    #[error("caption length {len} exceeds maximum {max}")]
    LengthOverflow { len: usize, max: usize },
    #[error("no supervised positions")]
    NoSupervisedPositions,
    #[error("non-finite loss at step {step}: {diagnostics}")]
    NonFiniteLoss { step: u64, diagnostics: String },
    #[error("empty record list")]
    EmptyRecords,
    #[error("model `{model}` has no caption for image `{image}`")]
    MissingCaption { model: String, image: String },
    #[error("empty candidate corpus")]
    EmptyCandidates,
    #[error("candidate {index} has no references")]
    MissingReferences { index: usize },
    #[error("invalid synonym table: {0}")]
    InvalidSynonym(String),
    #[error("similarity scorer failed on `{image}`: {message}")]
    Scorer { image: String, message: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

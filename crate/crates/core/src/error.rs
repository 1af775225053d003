use thiserror::Error;

use crate::corpus::RecordId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate record id {0}")]
    DuplicateId(RecordId),
    #[error("empty text")]
    EmptyText,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("bpe merge table required for bpe tokenization")]
    BpeNotTrained,
    #[error("vocab size {vocab_size} must exceed alphabet size {alphabet}")]
    VocabTooSmall { vocab_size: usize, alphabet: usize },
    #[error("empty token sequence")]
    EmptyTokens,
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("empty sample")]
    EmptySample,
    #[error("unknown record {0}")]
    UnknownRecord(RecordId),
    #[error("already labeled: record {0}")]
    AlreadyLabeled(RecordId),
    #[error("record {0} was not issued in a batch")]
    NotIssued(RecordId),
    #[error("nothing to predict from")]
    NothingToPredict,
    #[error("training already running")]
    TrainingBusy,
    #[error("session file: {0}")]
    SessionFormat(String),
    #[error("model snapshot: {0}")]
    SnapshotFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable code used in structured error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptyCorpus => "empty_corpus",
            Error::Parse { .. } => "parse_error",
            Error::DuplicateId(_) => "duplicate_id",
            Error::EmptyText => "empty_text",
            Error::Config(_) => "invalid_config",
            Error::BpeNotTrained => "bpe_not_trained",
            Error::VocabTooSmall { .. } => "vocab_too_small",
            Error::EmptyTokens => "empty_tokens",
            Error::ZeroNorm => "zero_norm",
            Error::UnknownToken(_) => "unknown_token",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::EmptySample => "empty_sample",
            Error::UnknownRecord(_) => "unknown_record",
            Error::AlreadyLabeled(_) => "already_labeled",
            Error::NotIssued(_) => "not_issued",
            Error::NothingToPredict => "nothing_to_predict",
            Error::TrainingBusy => "training_busy",
            Error::SessionFormat(_) => "session_format",
            Error::SnapshotFormat(_) => "snapshot_format",
            Error::Io(_) => "io_error",
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid parameter `{name}`: {reason}")]
    Param { name: String, reason: String },

    #[error("missing gradient for trainable parameter `{0}`")]
    MissingGradient(String),

    #[error("CTC length constraint: {frames} frames cannot align a target of {target_len} symbols (need at least {required})")]
    CtcLength { frames: usize, target_len: usize, required: usize },

    #[error("schema violation at line {line}, field `{field}`: {reason}")]
    Schema { line: usize, field: String, reason: String },

    #[error("missing signal for utterance `{utterance_id}` ({path})")]
    MissingSignal { utterance_id: String, path: PathBuf },

    #[error("out-of-vocabulary word `{0}`")]
    OutOfVocabulary(String),

    #[error("input too short: length {len}, minimum {min}")]
    TooShort { len: usize, min: usize },

    #[error("utterance shorter than one frame: {len} samples < frame length {frame_length}")]
    ShorterThanFrame { len: usize, frame_length: usize },

    #[error("sequence length {len} exceeds the model limit {limit}")]
    TooLong { len: usize, limit: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite loss at epoch {epoch}, step {step}, batch {batch}")]
    NonFiniteLoss { epoch: usize, step: usize, batch: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("missing prerequisite {artifact}; produce it with `{command}`")]
    MissingPrerequisite { artifact: String, command: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable class name.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "ShapeError",
            Error::Param { .. } => "ParameterError",
            Error::MissingGradient(_) => "MissingGradient",
            Error::CtcLength { .. } => "CtcLengthError",
            Error::Schema { .. } => "SchemaError",
            Error::MissingSignal { .. } => "MissingSignal",
            Error::OutOfVocabulary(_) => "OutOfVocabulary",
            Error::TooShort { .. } => "InputTooShort",
            Error::ShorterThanFrame { .. } => "InputTooShort",
            Error::TooLong { .. } => "InputTooLong",
            Error::Empty(_) => "EmptyInput",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::Checkpoint(_) => "CheckpointError",
            Error::MissingPrerequisite { .. } => "MissingPrerequisite",
            Error::Config(_) => "ConfigError",
            Error::Io { .. } => "IoError",
            Error::Json(_) => "JsonError",
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Param { name: name.into(), reason: reason.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

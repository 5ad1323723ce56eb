use thiserror::Error;

use crate::tensor::Shape4;

/// Errors raised by the numeric core.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("{op}: shape mismatch, left {left} vs right {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape4,
        right: Shape4,
    },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("{op}: {channels} channels not divisible by {groups} groups")]
    Indivisible {
        op: &'static str,
        channels: usize,
        groups: usize,
    },
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),
    #[error("{0}: backward called without a cached forward pass")]
    MissingForwardCache(&'static str),
    #[error("batch statistics need at least two values per channel, got {0}")]
    DegenerateBatch(usize),
    #[error("invalid ME module config: rule `{rule}` violated ({detail})")]
    InvalidModule { rule: &'static str, detail: String },
    #[error("stage {stage} module {index}: {source}")]
    InNetwork {
        stage: usize,
        index: usize,
        source: Box<Error>,
    },
    #[error("malformed model notation at position {position}: {message}")]
    Notation { position: usize, message: String },
    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

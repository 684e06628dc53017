use std::time::Duration;

use crate::algebra::AlgebraError;
use crate::schema::SchemaError;

/// Everything that can go wrong while building or running transductions.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransductionError {
    #[error("input type mismatch: expected `{expected}`, found `{found}`")]
    TypeMismatch { expected: String, found: String },
    #[error("schema violation: {0}")]
    SchemaViolation(SchemaError),
    #[error("invalid provenance: {0}")]
    InvalidProvenance(String),
    #[error("invalid confidence {0}: must lie in [0, 1]")]
    InvalidConfidence(f64),
    #[error("could not parse model output: {0}")]
    Parse(String),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend call timed out after {0:?}")]
    Timeout(Duration),
    #[error("no mock rule matches `{target_type} << {source_type}`")]
    NoMatchingRule { source_type: String, target_type: String },
    #[error("kernel output invalid: {0}")]
    KernelOutputInvalid(SchemaError),
    #[error("cannot compose: first stage produces `{produced}` but the next stage expects `{expected}`")]
    CompositionTypeMismatch { produced: String, expected: String },
    #[error("unsupported feature: {0}")]
    UnsupportedFeature(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("reduce over an empty collection")]
    EmptyCollection,
    #[error("`{0}` cannot aggregate a collection")]
    NotAReducer(String),
    #[error("reducer `{0}` needs a combiner to aggregate partial results in stages")]
    NotStageable(String),
    #[error("element {index}: {error}")]
    AtIndex {
        index: usize,
        error: Box<TransductionError>,
    },
    #[error("trace sink unavailable: {0}")]
    SinkUnavailable(String),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

impl TransductionError {
    pub(crate) fn at(index: usize, error: TransductionError) -> Self {
        TransductionError::AtIndex {
            index,
            error: Box::new(error),
        }
    }
}

pub type Result<T, E = TransductionError> = std::result::Result<T, E>;

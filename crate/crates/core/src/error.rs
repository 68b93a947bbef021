use alloc::string::String;

use crate::measures::Measure;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("record {id}: {reason}")]
    InvalidRecord { id: String, reason: String },

    #[error("record {id}: task `{task}` needs an expression span")]
    MissingExpression { id: String, task: &'static str },

    #[error("record {id}: sentence is empty")]
    EmptySentence { id: String },

    #[error("prediction {index} is for `{found}`, expected `{expected}`")]
    IdMismatch {
        index: usize,
        expected: String,
        found: String,
    },

    #[error("no rows left to score")]
    EmptyDataset,

    #[error("symbol {0:?} is not in the vocabulary")]
    UnknownSymbol(char),

    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(&'static str),

    #[error("probability {0} is outside (0, 1]")]
    InvalidProbability(f64),

    #[error("distribution sums to {sum}, not 1")]
    NotNormalized { sum: f64 },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("reference distribution needs at least two symbols")]
    DegenerateVocabulary,

    #[error("char span [{start}, {end}) covers no tokens")]
    SpanNotCovered { start: usize, end: usize },

    #[error("expression tokens fall outside the sentence range")]
    SpanOutsideSentence,

    #[error("{field} unavailable (needed for {measure})")]
    MeasureUnavailable {
        measure: Measure,
        field: &'static str,
    },

    #[error("trace violates its invariants ({count} violations)")]
    InvalidTrace { count: usize },

    #[error("no feature in the manifest is tagged {0}")]
    NothingToAblate(Measure),

    #[error("labels contain a single class")]
    SingleClass,

    #[error("non-finite feature at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("expected {expected} columns, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("threshold {0} is outside (0, 1)")]
    InvalidThreshold(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),

    #[error("test split is empty")]
    EmptyTestSet,
}

//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed header: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("{path}: bad magic number (not a {expected} file)")]
    BadMagic { path: PathBuf, expected: &'static str },

    #[error("{path}: unsupported format version {found}")]
    UnsupportedVersion { path: PathBuf, found: u64 },

    #[error("{path}: non-finite value at row {row}, column {col}")]
    NonFinite { path: PathBuf, row: usize, col: usize },

    #[error("{path}: row {row}: label {label} out of range (expected < {num_classes})")]
    LabelOutOfRange {
        path: PathBuf,
        row: usize,
        label: u32,
        num_classes: usize,
    },

    #[error("{path}: ragged row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        path: PathBuf,
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("{path}: row {row}, column {col}: cannot parse {token:?} as a number")]
    BadNumber {
        path: PathBuf,
        row: usize,
        col: usize,
        token: String,
    },

    #[error("taxonomy has multiple roots: nodes {first} and {second}")]
    MultipleRoots { first: usize, second: usize },

    #[error("taxonomy has no root (no node with parent -1)")]
    NoRoot,

    #[error("taxonomy cycle detected through node {node}")]
    TaxonomyCycle { node: usize },

    #[error("taxonomy node {node} has dangling parent {parent}")]
    DanglingParent { node: usize, parent: usize },

    #[error("class {class} does not map to any taxonomy node")]
    UnmappedClass { class: usize },

    #[error("class {class} not found in embedding file header")]
    ClassNameMismatch { class: String },

    #[error("empty class set")]
    EmptyClassSet,

    #[error("train split is empty")]
    EmptySplit,

    #[error("evaluation set is empty")]
    EmptyEvalSet,

    #[error("class {class} has a zero embedding column; cannot l2-normalize")]
    ZeroColumn { class: usize },

    #[error("expected {expected} encoding, found {found}")]
    WrongEncoding { expected: &'static str, found: &'static str },

    #[error("cannot mean-center an embedding that is already l2-normalized")]
    CenterAfterNormalize,

    #[error("svd rank {rank} out of range (must be in 1..={max})")]
    RankOutOfRange { rank: usize, max: usize },

    #[error("cannot sample {requested} dimensions from an embedding with {available}")]
    SampleCountOutOfRange { requested: usize, available: usize },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("attribute table is not binary {{0,1}}")]
    NonBinaryAttributes,

    #[error("logistic solver did not converge for attribute {attribute} (gradient norm {grad_norm:.3e})")]
    NoConvergence { attribute: usize, grad_norm: f64 },

    #[error("{0}")]
    Other(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

use std::path::PathBuf;

use thiserror::Error;

use crate::circuit::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The node list does not form an index-ordered DAG.
    #[error("structural error at node {node}: {reason}")]
    Structure { node: usize, reason: String },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("sample has {got} values, circuit has {expected} variables")]
    SampleLength { expected: usize, got: usize },

    #[error("variable {var}: {reason}")]
    SampleValue { var: usize, reason: String },

    #[error("empty batch")]
    EmptyBatch,

    #[error("zero-likelihood sample at index {index}")]
    ZeroLikelihood { index: usize },

    #[error("parameters are not normalized; renormalize them first")]
    NotNormalized,

    #[error("partition function of node {node} is {value}; cannot renormalize")]
    DegeneratePartition { node: NodeId, value: f64 },

    #[error("parameter vector has {got} entries, circuit has {expected} sum edges")]
    ParamLength { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dataset row {row}, column {col}: {reason}")]
    DataCell { row: usize, col: usize, reason: String },

    #[error("dataset: {0}")]
    Data(String),

    #[error("enumeration guard exceeded: {0}")]
    TooLarge(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(line: usize, reason: impl Into<String>) -> Self {
        Error::Parse { line, reason: reason.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

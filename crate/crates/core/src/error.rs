use thiserror::Error;

/// Errors raised anywhere in the lab.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("index {index} out of range for {op} with bound {bound}")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("grade mapping error: {0}")]
    Mapping(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("empty dataset requested")]
    EmptyDataset,

    #[error("AUC undefined: no class has both positive and negative samples")]
    UndefinedAuc,

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training aborted at epoch {epoch}, batch {batch}: {message}")]
    Training {
        epoch: usize,
        batch: usize,
        message: String,
    },

    #[error("experiment cell `{cell}` failed: {source}")]
    Experiment {
        cell: String,
        #[source]
        source: Box<LabError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, expected: impl ToString, got: impl ToString) -> LabError {
    LabError::Shape {
        op,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}

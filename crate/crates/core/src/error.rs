use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("column `{0}` has no generator")]
    MissingGenerator(String),
    #[error("foreign key `{0}` targets an empty relation")]
    EmptyForeignKeyTarget(String),
    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("csv header mismatch: expected {expected:?}, found {found:?}")]
    HeaderMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("duplicate primary key value {value} in `{column}`")]
    DuplicatePrimaryKey { column: String, value: i64 },
    #[error("dangling foreign key value {value} in `{column}`")]
    DanglingForeignKey { column: String, value: i64 },
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("relation set is not connected by the query's join predicates")]
    Disconnected,
    #[error("cartesian product of {0} rows exceeds the nested-loop guard")]
    SizeGuard(u128),
    #[error("cardinality overflowed 64 bits")]
    Overflow,
    #[error("no connected relation subset of size {0} exists")]
    Unsatisfiable(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite loss at epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("model has not been fitted")]
    Untrained,
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("every grid cell diverged: {0:?}")]
    AllCellsDiverged(Vec<String>),
    #[error("labeler failed: {0}")]
    Labeler(String),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}

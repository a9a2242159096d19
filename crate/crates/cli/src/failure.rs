use std::fmt;

use cardlab::Error;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

/// A one-line, machine-parsable error: `CODE: message`.
#[derive(Debug)]
pub struct Failure {
    pub code: &'static str,
    pub message: String,
    pub exit: i32,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure { code: "E_USAGE", message: message.into(), exit: EXIT_USAGE }
    }

    pub fn data(code: &'static str, message: impl Into<String>) -> Self {
        Failure { code, message: message.into(), exit: EXIT_DATA }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let one_line = self.message.replace('\n', " ");
        write!(f, "{}: {}", self.code, one_line)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        let (code, exit) = match &e {
            Error::NonFinite { .. } | Error::AllCellsDiverged(_) => ("E_DIVERGED", EXIT_DIVERGED),
            Error::InvalidArgument(_) => ("E_INVALID_ARGUMENT", EXIT_USAGE),
            Error::File { source, .. } if source.kind() == std::io::ErrorKind::NotFound => ("E_NOT_FOUND", EXIT_DATA),
            Error::File { .. } | Error::Io(_) => ("E_IO", EXIT_DATA),
            Error::Json(_) | Error::Csv(_) | Error::Parse { .. } | Error::HeaderMismatch { .. } => ("E_PARSE", EXIT_DATA),
            Error::UnknownRelation(_)
            | Error::UnknownColumn(_)
            | Error::InvalidSchema(_)
            | Error::MissingGenerator(_)
            | Error::EmptyForeignKeyTarget(_)
            | Error::DuplicatePrimaryKey { .. }
            | Error::DanglingForeignKey { .. } => ("E_SCHEMA", EXIT_DATA),
            Error::InvalidQuery(_) | Error::Disconnected | Error::Unsatisfiable(_) => ("E_QUERY", EXIT_DATA),
            Error::SizeGuard(_) | Error::Overflow => ("E_LIMIT", EXIT_DATA),
            Error::ShapeMismatch { .. } => ("E_SHAPE", EXIT_DATA),
            Error::Untrained => ("E_UNTRAINED", EXIT_DATA),
            Error::Degenerate(_) => ("E_DEGENERATE", EXIT_DATA),
            Error::Labeler(_) => ("E_LABELER", EXIT_DATA),
        };
        Failure { code, message, exit }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::data("E_IO", e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::data("E_PARSE", e.to_string())
    }
}

use std::path::PathBuf;

/// Errors of the file formats and the command-line tool.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] lumpkit_core::Error),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line} has {found} values, expected {expected}")]
    RaggedRows {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {0} is not `<two letters> <count>`")]
    BadBigram(usize),
    #[error("line {0} contains a character outside a-z")]
    NonLetter(usize),
    #[error("line {0} has a negative count")]
    NegativeCount(usize),
    #[error("partition for k = {0} is not a valid assignment")]
    BadAssignment(usize),
    #[error("labels do not match the matrix: {0}")]
    LabelMismatch(String),
    #[error("label {0:?} appears more than once")]
    DuplicateLabel(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for file-system failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

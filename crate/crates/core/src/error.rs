use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {context} at index {index}")]
    NonFinite { context: &'static str, index: usize },

    #[error("non-finite score {value} for sample `{sample_id}`")]
    NonFiniteScore { sample_id: String, value: f64 },

    #[error("{what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("class index {index} out of range for {class_count} classes")]
    ClassIndex { index: usize, class_count: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid score specification: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("score `{descriptor}` requires {requirement}")]
    MissingRequirement {
        descriptor: String,
        requirement: &'static str,
    },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("{}: {message}", location(path, *line))]
    Format {
        path: PathBuf,
        line: Option<usize>,
        message: String,
    },

    #[error("{path}: unsupported format_version `{found}` (supported: {supported})", path = path.display(), supported = SUPPORTED_VERSIONS.join(", "))]
    UnsupportedVersion { path: PathBuf, found: String },

    #[error("{path}: {source}", path = path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub const SUPPORTED_VERSIONS: &[&str] = &["1"];

fn location(path: &std::path::Path, line: Option<usize>) -> String {
    match line {
        Some(line) => format!("{}:{line}", path.display()),
        None => path.display().to_string(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: Option<usize>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A non-finite value appeared. `node` is the first graph node that
    /// produced it, when the failure originated inside a graph evaluation.
    #[error("numerical error{}: {context}", node.map(|n| format!(" at node {n}")).unwrap_or_default())]
    Numerical { node: Option<usize>, context: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("optimizer state error: {0}")]
    State(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("alignment undefined: {0}")]
    AlignmentUndefined(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn numerical(node: Option<usize>, context: impl Into<String>) -> Self {
        Error::Numerical {
            node,
            context: context.into(),
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("SH degree mismatch: {left} vs {right}")]
    DegreeMismatch { left: usize, right: usize },

    /// A file could not be decoded. `offset` is a byte offset into the file
    /// (or a 1-based line number for text formats, see `line`).
    #[error("parse error in {path:?} at {}: {message}", location(*.line, *.offset))]
    Parse {
        path: Option<PathBuf>,
        line: Option<usize>,
        offset: Option<u64>,
        message: String,
    },

    #[error("gaussian {index}: {message}")]
    InvalidGaussian { index: usize, message: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("scene too dense: no valid start/goal pair after {attempts} attempts")]
    SceneTooDense { attempts: usize },

    #[error("non-finite drone state")]
    NonFiniteState,

    #[error("episode is not active: {0}")]
    EpisodeInactive(&'static str),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn location(line: Option<usize>, offset: Option<u64>) -> String {
    match (line, offset) {
        (Some(l), _) => format!("line {l}"),
        (None, Some(o)) => format!("byte {o}"),
        (None, None) => "unknown position".to_string(),
    }
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn parse_at(offset: u64, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: None,
            line: None,
            offset: Some(offset),
            message: msg.into(),
        }
    }

    pub(crate) fn with_path(self, p: &std::path::Path) -> Self {
        match self {
            Error::Parse {
                line,
                offset,
                message,
                ..
            } => Error::Parse {
                path: Some(p.to_path_buf()),
                line,
                offset,
                message,
            },
            other => other,
        }
    }
}

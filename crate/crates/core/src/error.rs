use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or lengths that do not fit together.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A non-finite value appeared where a finite one is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// No CTC path of the given length collapses to the target.
    #[error("unalignable target: {frames} frames cannot emit {labels} labels ({repeats} adjacent repeats)")]
    Unalignable {
        frames: usize,
        labels: usize,
        repeats: usize,
    },

    #[error("character {ch:?} is not in the alphabet (word {word:?})")]
    OutOfAlphabet { ch: char, word: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("incompatible model: {0}")]
    Incompatible(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Self::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}

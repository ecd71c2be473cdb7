use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("label file name `{0}` does not match `<sequence ID>_<frame ID>.txt`")]
    NameFormat(String),

    #[error("{file}:{line}: {message}")]
    LineFormat {
        file: String,
        line: usize,
        message: String,
    },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("sequence `{sequence}`: expected frame {expected}, found {found}")]
    Continuity {
        sequence: String,
        expected: u32,
        found: u32,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("generator: {0}")]
    Gen(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("sequence `{sequence}` frame {frame} has no raster")]
    MissingRaster { sequence: String, frame: u32 },

    #[error("feature: {0}")]
    Feature(String),

    #[error("trace: {0}")]
    Trace(String),

    #[error("empty score list")]
    EmptyScore,

    #[error("domain: {0}")]
    Domain(String),

    #[error("pool exhausted: requested {requested}, available {available}")]
    PoolExhausted { requested: usize, available: usize },

    #[error("strategy `{0}` requires model scores")]
    MissingScores(String),

    #[error("strategy `{0}` must not receive model scores")]
    ScoresNotAllowed(String),

    #[error("sequence `{0}` has no flow statistics")]
    MissingStats(String),

    #[error("test split is empty")]
    EmptyTest,

    #[error("performance-cost curve is empty")]
    EmptyCurve,

    #[error("mode: {0}")]
    Mode(String),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for configuration problems, 3 for invalid input
    /// data, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Mode(_) => 2,
            Error::NameFormat(_)
            | Error::LineFormat { .. }
            | Error::Manifest(_)
            | Error::Continuity { .. }
            | Error::Trace(_)
            | Error::MissingRaster { .. }
            | Error::MissingStats(_) => 3,
            _ => 1,
        }
    }
}

use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed track JSON: {0}")]
    Json(#[from] serde_json::Error),

    /// Domain validation failure (bad point count, non-monotone indices,
    /// non-finite values, out-of-range parameters, ...).
    #[error("{0}")]
    Invalid(String),

    #[error("track too short: {0} frame(s), need at least 2")]
    TrackTooShort(usize),

    #[error("gimbal lock: yaw too close to ±π/2")]
    GimbalLock,

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("frame {index}: {source}")]
    AtFrame {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("dataset contains a single class only")]
    SingleClass,

    #[error("total conflict between mass functions")]
    TotalConflict,

    #[error("unsupported checkpoint format version {0}")]
    Version(u64),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn file(path: impl Into<PathBuf>, source: impl Into<Error>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(source.into()),
        }
    }

    pub fn at_frame(index: usize, source: Error) -> Self {
        Error::AtFrame {
            index,
            source: Box::new(source),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

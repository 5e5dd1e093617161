use std::fmt;
use std::path::PathBuf;

/// Where in an input file a parse error was detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    Byte(u64),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Line(n) => write!(f, "line {n}"),
            Location::Byte(n) => write!(f, "byte {n}"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: parse error at {location}: {message}", path.display())]
    Parse {
        path: PathBuf,
        location: Location,
        message: String,
    },
    #[error("non-finite {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("normal count {normals} does not match point count {points}")]
    NormalCountMismatch { points: usize, normals: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("degenerate bounding box: all points identical")]
    DegenerateBounds,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("k = {k} exceeds the {available} available points")]
    KTooLarge { k: usize, available: usize },
    #[error("normals required but not present")]
    MissingNormals,
    #[error("checkpoint has bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("non-finite loss in term `{term}`{}", iteration.map(|i| format!(" at iteration {i}")).unwrap_or_default())]
    NonFiniteLoss {
        term: &'static str,
        iteration: Option<usize>,
    },
    #[error("shell sampling failed: accepted {accepted} of {attempted} candidates")]
    SamplingFailure { accepted: usize, attempted: usize },
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
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

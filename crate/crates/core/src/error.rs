use std::fmt;

/// Errors produced by the placement-optimization library.
#[derive(Debug)]
pub enum Error {
    /// A translated object footprint would leave the grid.
    OutOfBounds { dx: i64, dy: i64 },
    /// Two grids that must share dimensions do not.
    DimMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    /// A grid, mask or scene violates one of its construction invariants.
    InvalidGrid(String),
    /// A configuration value is outside its admissible range.
    ConfigInvalid(String),
    /// No in-bounds placement exists for the object.
    NoLegalAction,
    /// The optimizer was handed an empty or illegal candidate set.
    NoLegalCandidates,
    /// Tensor or network shapes do not line up.
    ShapeMismatch(String),
    /// Training produced a NaN or infinite loss.
    NonFiniteLoss { step: usize },
    /// The GP kernel matrix stayed indefinite after jitter escalation.
    SingularKernel,
    /// A binary artifact could not be decoded.
    Format(String),
    Io(std::io::Error),
    Json(serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::OutOfBounds { dx, dy } => {
                write!(f, "object footprint leaves the grid at shift ({dx}, {dy}) cells")
            }
            Error::DimMismatch { expected, found } => write!(
                f,
                "grid dimension mismatch: expected {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Error::InvalidGrid(msg) => write!(f, "invalid grid: {msg}"),
            Error::ConfigInvalid(msg) => write!(f, "invalid configuration: {msg}"),
            Error::NoLegalAction => write!(f, "no legal placement exists for this object"),
            Error::NoLegalCandidates => write!(f, "no legal candidate actions"),
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::NonFiniteLoss { step } => write!(f, "non-finite loss at step {step}"),
            Error::SingularKernel => write!(f, "kernel matrix is singular after jitter escalation"),
            Error::Format(msg) => write!(f, "malformed artifact: {msg}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Json(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}

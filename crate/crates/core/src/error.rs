use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("Riccati iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    Solver { iterations: usize, residual: f64 },

    #[error("closed loop A - B K is not stable (spectral radius {0})")]
    Unstable(f64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("enumeration of {count} trajectories exceeds the limit of {limit}")]
    SizeGuard { count: u128, limit: u128 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

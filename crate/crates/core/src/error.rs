use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{op}: dimension mismatch, expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        op: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("matrix data contains a non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("SVD did not converge after {sweeps} sweeps on a {rows}x{cols} matrix")]
    NoConvergence {
        rows: usize,
        cols: usize,
        sweeps: usize,
    },

    #[error("matrix is not symmetric: |a[{row},{col}] - a[{col},{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },

    #[error("matrix is not positive definite: pivot {pivot} is {value:e}")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("{op}: matrix is rank deficient (numerical rank {rank}, need {required})")]
    RankDeficient {
        op: &'static str,
        rank: usize,
        required: usize,
    },

    #[error("value {value} lies outside the quantization interval [-{clip}, {clip}]")]
    OutOfRange { value: f64, clip: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("gradient descent diverged after {steps} steps (loss {loss:e})")]
    Divergence { steps: usize, loss: f64 },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("bad magic bytes {found:?}, expected \"EQC1\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported format version {found} (this build reads version {supported})")]
    VersionMismatch { found: u16, supported: u16 },

    #[error("CRC mismatch: stored {stored:08x}, computed {computed:08x}")]
    Crc { stored: u32, computed: u32 },

    #[error("truncated input at byte {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },

    #[error("malformed compressed file at byte {offset}: {msg}")]
    Malformed { offset: usize, msg: String },

    #[error("{0}")]
    InputMismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) => ErrorKind::Usage,
            Error::NoConvergence { .. }
            | Error::NotPositiveDefinite { .. }
            | Error::RankDeficient { .. }
            | Error::Divergence { .. }
            | Error::Degenerate(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

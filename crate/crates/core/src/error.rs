use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the segmentation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    MagicMismatch { expected: [u8; 4], found: [u8; 4] },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("payload length {payload} does not match header dims {dims:?}")]
    PayloadMismatch { dims: Vec<usize>, payload: usize },

    #[error("probability vector at voxel {voxel} sums to {sum}")]
    NotNormalized { voxel: usize, sum: f64 },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("class {0} has zero total probability")]
    EmptyClass(usize),

    #[error("class count mismatch: expected {expected}, found {found}")]
    ClassCount { expected: usize, found: usize },

    #[error("label {label} at voxel {voxel} is out of range for {classes} classes")]
    LabelRange {
        voxel: usize,
        label: usize,
        classes: usize,
    },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("both volumes are empty")]
    ZeroVolume,

    #[error("invalid value: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

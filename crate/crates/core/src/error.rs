use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = OocsError> = std::result::Result<T, E>;

/// Every fallible operation in the crate reports one of these.
#[derive(Debug, Error)]
pub enum OocsError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("kernel size must be odd and at least 3, got {0}")]
    EvenKernelSize(usize),

    #[error("degenerate kernel: size {size}, gamma {gamma} leaves the {class} class empty")]
    DegenerateKernel {
        size: usize,
        gamma: f64,
        class: &'static str,
    },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("shape mismatch at node `{node}`: {detail}")]
    Shape { node: String, detail: String },

    #[error("network spec error: {0}")]
    Spec(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("layer `{node}` has an odd filter count ({filters}) and cannot be split in half")]
    OddFilters { node: String, filters: usize },

    #[error("split range is not a plain chain: {0}")]
    NotAChain(String),

    #[error("stale cache: {0}")]
    StaleCache(String),

    #[error("bad magic number in {path}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("truncated file {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("invalid label {label} at index {index} (num_classes = {num_classes})")]
    InvalidLabel {
        index: usize,
        label: u8,
        num_classes: usize,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("checkpoint does not match network spec (checkpoint hash {found:016x}, spec hash {expected:016x})")]
    CheckpointMismatch { expected: u64, found: u64 },

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl OocsError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        OocsError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input data or files rather than bad
    /// parameters.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            OocsError::BadMagic { .. }
                | OocsError::Truncated { .. }
                | OocsError::CountMismatch { .. }
                | OocsError::InvalidLabel { .. }
                | OocsError::Format(_)
                | OocsError::CheckpointMismatch { .. }
                | OocsError::Io { .. }
        )
    }
}

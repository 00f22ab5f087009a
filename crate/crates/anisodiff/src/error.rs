//! Crate-wide error type and result alias.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(thiserror::Error, Debug)]
pub enum Error {
    /// Caller handed in something malformed: bad shapes, non-finite
    /// samples, out-of-range arguments.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Input was well-formed but carries no usable signal (all-zero
    /// waveform, clip too short to frame).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A configuration value violates its documented constraint.
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    /// Two spectrograms that must share a shape do not.
    #[error("shape mismatch: expected {expected_frames}x{expected_bins}, got {found_frames}x{found_bins}")]
    ShapeMismatch {
        expected_frames: usize,
        expected_bins: usize,
        found_frames: usize,
        found_bins: usize,
    },

    /// Operands live in different spectral domains (raw vs compressed).
    #[error("domain mismatch: expected {expected}, got {found}")]
    DomainMismatch { expected: String, found: String },

    /// A step index fell outside the schedule range 1..=T.
    #[error("step index {value} out of range 1..={max}")]
    StepOutOfRange { value: usize, max: usize },

    /// A quantity that must stay inside its invariant escaped it.
    #[error("invariant violated: {0}")]
    Invariant(String),

    /// A component broke its interface contract (wrong output shape,
    /// non-finite network output).
    #[error("contract violated: {0}")]
    Contract(String),

    /// Computation produced non-finite or otherwise unusable numbers.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A manifest row could not be used. Row numbers are 1-based and
    /// count data rows, not the header.
    #[error("manifest {path}, row {row}: {message}")]
    Manifest {
        path: PathBuf,
        row: usize,
        message: String,
    },

    /// Checkpoint file is unreadable as a checkpoint.
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    /// Checkpoint is valid but disagrees with the requested run
    /// configuration.
    #[error("checkpoint/config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("wav error on {path}: {source}")]
    Wav {
        path: PathBuf,
        source: hound::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for usage and input problems,
    /// 3 for runtime and numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_)
            | Error::DegenerateInput(_)
            | Error::Config { .. }
            | Error::ShapeMismatch { .. }
            | Error::DomainMismatch { .. }
            | Error::StepOutOfRange { .. }
            | Error::Manifest { .. }
            | Error::Checkpoint { .. }
            | Error::ConfigMismatch(_)
            | Error::Io { .. }
            | Error::Wav { .. } => 2,
            Error::Invariant(_) | Error::Contract(_) | Error::Numerical(_) => 3,
        }
    }
}

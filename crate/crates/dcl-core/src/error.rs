use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Vector norm below the representable threshold; direction undefined.
    #[error("cannot normalize a (near-)zero vector: norm {norm:.3e} < 1e-30")]
    ZeroVector { norm: f64 },

    /// Input contains NaN or infinite components.
    #[error("non-finite component at index {index}")]
    NonFinite { index: usize },

    /// Operation needs at least two samples (the negative set would be empty).
    #[error("degenerate batch: {op} requires at least 2 samples, got {n_samples}")]
    DegenerateBatch { op: &'static str, n_samples: usize },

    /// A loss operation was called with a spec configured for a different kind.
    #[error("loss spec kind mismatch: expected {expected}, got {got}")]
    KindMismatch { expected: &'static str, got: String },

    /// Per-term gradients are only defined for per-anchor losses.
    #[error("per-term gradients are not defined for loss kind {kind}")]
    UnsupportedKind { kind: String },

    /// Finite-difference step size outside the supported range.
    #[error("finite-difference step {h:.3e} outside [1e-7, 1e-2]")]
    InvalidStep { h: f64 },

    #[error("empty input: {what}")]
    EmptyInput { what: &'static str },

    /// A coupling multiplier fell outside [0, 1]; upstream values are corrupt.
    #[error("q value {value} at position {index} outside [0, 1]")]
    QOutOfRange { index: usize, value: f64 },

    #[error("invalid layer dims: {reason}")]
    InvalidDims { reason: String },

    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid config: {reason}")]
    InvalidConfig { reason: String },

    /// Training loss became NaN/infinite; carries the position for diagnosis.
    #[error("non-finite loss {value} at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize, value: f64 },

    #[error("empty split: {which}")]
    EmptySplit { which: &'static str },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// Malformed binary payload (bad magic, truncated body, ...).
    #[error("malformed {format} data: {reason}")]
    Format { format: &'static str, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

use alloc::string::String;

/// Errors raised by the algorithmic core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("point has non-positive depth {0} in camera frame")]
    NonPositiveDepth(f64),
    #[error("kinematic tree contains a cycle through camera {0}")]
    CycleDetected(usize),
    #[error("camera {0} is missing from the kinematic tree")]
    MissingNode(usize),
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid count {got}: must be within [{min}, {max}]")]
    BadCount { got: usize, min: usize, max: usize },
    #[error("graph is disconnected")]
    Disconnected,
    #[error("no pointmap estimates supplied")]
    EmptyEstimates,
    #[error("pointmap shapes do not match")]
    ShapeMismatch,
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("missing pair prediction for edge ({0}, {1})")]
    MissingPrediction(usize, usize),
    #[error("too few matches on edge ({0}, {1})")]
    TooFewMatches(usize, usize),
    #[error("loss became non-finite at stage {stage} iteration {iter}")]
    NonFiniteLoss { stage: u8, iter: usize },
    #[error("views {0} and {1} share no visible surface")]
    NoOverlap(usize, usize),
    #[error("invalid value: {0}")]
    Invalid(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

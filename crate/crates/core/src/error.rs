use thiserror::Error;

/// Errors raised across the simulation, learning and evaluation stack.
#[derive(Debug, Error)]
pub enum MascError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidShape { op: &'static str, msg: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("extent {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("line {0} is already acquired")]
    LineAlreadyAcquired(usize),
    #[error("line {line} is out of range for {n_pe} phase-encode lines")]
    LineOutOfRange { line: usize, n_pe: usize },
    #[error("acquisition budget exhausted")]
    BudgetExhausted,
    #[error("no unacquired line remains")]
    NoLinesLeft,
    #[error("reference image has zero energy")]
    ZeroReference,
    #[error("statistics need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("implant placement failed after {0} attempts")]
    PlacementFailed(usize),
    #[error("non-finite loss encountered during {0}")]
    NonFinite(&'static str),
    #[error("empty dataset split: {0}")]
    EmptySplit(&'static str),
    #[error("missing parameter tensor `{0}`")]
    MissingParam(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = MascError> = std::result::Result<T, E>;

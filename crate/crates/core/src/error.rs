use thiserror::Error;

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: String,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("matrix is not positive definite: pivot {pivot:e} at index {index} (threshold {threshold:e})")]
    NotSpd {
        index: usize,
        pivot: f64,
        threshold: f64,
    },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("model file format version {found} is not supported (expected {expected})")]
    FormatVersionMismatch { found: u32, expected: u32 },
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
    #[error("outcome {0} outside [0, 1]")]
    YOutOfRange(f64),
    #[error("outcome {0} must be 0 or 1")]
    NotBinary(f64),
    #[error("more than one choice indicator is set")]
    MultipleChoicesSet,
    #[error("scale parameter must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("censored outcome must be non-negative, got {0}")]
    NegativeY(f64),
    #[error("unsupported primitive `{0}`")]
    UnsupportedPrimitive(String),
    #[error("expression error: {0}")]
    Expression(String),
    #[error("index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("target requires link `{expected}` but loss provides `{found}`")]
    LinkMismatch { expected: String, found: String },
    #[error("intercept parameter too close to zero ({0:e})")]
    DivideByZeroIntercept(f64),
    #[error("sign condition violated: {0}")]
    SignConditionViolated(String),
    #[error("no sign change of the fixed-point residual on (0, {r_max}]")]
    NoBracket { r_max: f64 },
    #[error("loss hessian depends on the outcome; randomized projection is not available")]
    FlagViolation,
    #[error("fold {fold} has {size} observations, too few for estimation")]
    FoldTooSmall { fold: usize, size: usize },
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("unknown formula key `{0}`")]
    UnknownFormulaKey(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("non-numeric cell `{value}` in column `{column}` (row {row})")]
    NonNumericCell {
        column: String,
        row: usize,
        value: String,
    },
    #[error("no rows left after dropping incomplete records")]
    EmptyAfterDrop,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn dim(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::DimMismatch {
            context: context.into(),
            expected,
            got,
        }
    }

    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            Config(_) | UnknownKey(_) | UnknownFormulaKey(_) | UnsupportedPrimitive(_)
            | Expression(_) | IndexOutOfRange { .. } | LinkMismatch { .. } | Json(_) => {
                ErrorClass::Config
            }
            MissingColumn(_) | NonNumericCell { .. } | EmptyAfterDrop | Csv(_) | Io(_)
            | CorruptFile(_) | FormatVersionMismatch { .. } | YOutOfRange(_) | NotBinary(_)
            | NegativeY(_) | MultipleChoicesSet | FoldTooSmall { .. } => ErrorClass::Data,
            NotSpd { .. } | NotSymmetric(_) | NonFiniteLoss { .. } | NonFinite(_)
            | NonPositiveScale(_) | DivideByZeroIntercept(_) | SignConditionViolated(_)
            | NoBracket { .. } | DegenerateDesign(_) => ErrorClass::Numeric,
            DimMismatch { .. } | FlagViolation => ErrorClass::Internal,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use thiserror::Error;

/// Errors raised by the layer, backward strategies, access model and CLI.
#[derive(Debug, Error)]
pub enum GrkanError {
    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("accumulation overflow: {0}")]
    AccumulationOverflow(String),

    #[error("grid geometry invalid: {0}")]
    GridGeometryInvalid(String),

    #[error("partial coverage violation: {0}")]
    PartialCoverage(String),

    #[error("tail not covered by closed form: {0}")]
    TailNotCovered(String),

    #[error("count overflow in {0}")]
    CountOverflow(&'static str),

    #[error("fit failure: {reason} (condition number {condition:.3e})")]
    FitFailure { reason: String, condition: f64 },

    #[error("degenerate alpha: {0}")]
    DegenerateAlpha(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("resource error: {0}")]
    Resource(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = GrkanError> = std::result::Result<T, E>;

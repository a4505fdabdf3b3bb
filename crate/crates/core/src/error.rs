use thiserror::Error;

/// Errors raised across the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The grid minimizer sits on the edge of the search range, so the
    /// true minimizer (or the infimum of the minimizer set) lies outside it.
    #[error("minimizer hits the {} end of the search range [{lo}, {hi}]", if *.at_lower { "lower" } else { "upper" })]
    RangeTooSmall { lo: f64, hi: f64, at_lower: bool },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Divergence { epoch: usize, reason: String },

    #[error("certification failed: {0}")]
    Certification(String),

    /// Every noise-exponent grid point had zero mass: the task has a hard margin.
    #[error("degenerate noise fit: Prob(|eta - 1/2| <= t) = 0 on the whole grid (hard margin, theta = inf)")]
    HardMargin,

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("model file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("undefined shell coordinates")]
    UndefinedShellCoordinates,

    #[error("source does not average out to zero (time average {0:.3e})")]
    SourceNotCentered(f64),

    #[error("corrector unbounded in this regime (k = {0}, need k > 3/2)")]
    CorrectorUnbounded(f64),

    #[error("blow-up at t = {t:.6}; reduce h")]
    BlowUp { t: f64 },

    #[error("observable not differentiable here")]
    NotDifferentiable,

    #[error("no breather regime")]
    NoBreatherRegime,

    #[error("proposal mismatch (acceptance {0:.3}%)")]
    ProposalMismatch(f64),

    #[error("outside model regime (k = {0}, need k > 1)")]
    OutsideModelRegime(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

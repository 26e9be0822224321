use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the sampling, training and estimation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("activation cache does not belong to the current network parameters")]
    StaleCache,

    #[error("non-finite gradient entry in {tensor}")]
    NonFiniteGradient { tensor: String },

    #[error("non-finite input to {0}")]
    NonFiniteInput(&'static str),

    #[error("non-finite log-posterior gradient at walker {walker}")]
    NonFiniteLangevinGradient { walker: usize },

    #[error("non-finite flow log-density at walker {walker}")]
    NonFiniteFlowDensity { walker: usize },

    #[error("walker {walker} starts outside the target support")]
    OutOfSupport { walker: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("sample count must be at least 1")]
    NoSamples,

    #[error("flow support misses target: every importance weight is zero")]
    NoFiniteWeights,

    #[error("no finite-weight sample falls inside mode {0}")]
    EmptyMode(String),

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("matrix is not symmetric (max deviation {0:e})")]
    Asymmetric(f64),

    #[error("sample covariance is identically zero")]
    DegenerateCovariance,

    #[error("no candidate accepted out of {draws} prior draws; increase the number of draws")]
    NoJokerAcceptance { draws: usize },

    #[error("non-finite training loss at iteration {}", .0.iter)]
    NonFiniteLoss(Box<LossDiagnostics>),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Snapshot captured when training aborts on a non-finite loss.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LossDiagnostics {
    pub iter: usize,
    pub loss: f64,
    pub positions: Vec<Vec<f64>>,
    pub log_posteriors: Vec<f64>,
    pub recent_losses: Vec<f64>,
}

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("window [{s0}, {end}] contains no point of the time scale")]
    EmptyWindow { s0: f64, end: f64 },
    #[error("bad parameters: {0}")]
    BadParams(String),
    #[error("{0} is not a point of the time scale")]
    NotInTimeScale(f64),
    #[error("{0} is not a grid node")]
    NotANode(f64),
    #[error("time scale has no translation period")]
    NotTranslationInvariant,
    #[error("window too short: {0}")]
    WindowTooShort(String),
    #[error("non-regressive: 1 + mu*p = {value} at mu = {mu}")]
    NonRegressive { mu: f64, value: f64 },
    #[error("delta derivative is undefined at the right edge {0}")]
    AtRightEdge(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix exponential overflow for dt = {dt}")]
    Overflow { dt: f64 },
    #[error("generator is not exponentially stable (spectral abscissa {abscissa})")]
    NotStable { abscissa: f64 },
    #[error(transparent)]
    Expr(#[from] crate::expr::ExprError),
    #[error("expression error at (t = {t}, tau = {tau:?}): {source}")]
    ExprAt {
        t: f64,
        tau: Option<f64>,
        source: crate::expr::ExprError,
    },
    #[error("no convergence after {} iterations (last step {:?})", step_norms.len(), step_norms.last())]
    NoConvergence { step_norms: Vec<f64> },
    #[error("premise violated at nodes {0:?}")]
    PremiseViolated(Vec<f64>),
    #[error("function is not nondecreasing at node {0}")]
    NotNondecreasing(f64),
    #[error("grid functions live on different grids")]
    GridMismatch,
}

pub type Result<T> = std::result::Result<T, Error>;

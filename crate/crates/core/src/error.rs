use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum Error {
    #[error("invalid mass system: {0}")]
    InvalidSystem(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("bodies {i} and {j} are {dist:e} apart, below the collision floor")]
    CollisionConfiguration { i: usize, j: usize, dist: f64 },
    #[error("endpoint is not centered (|sum m q| = {residual:e})")]
    EndpointNotCentered { residual: f64 },
    #[error("time {t} outside [{t1}, {t2}]")]
    OutOfDomain { t: f64, t1: f64, t2: f64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("string collapsed: endpoints of the mountain pass coincide")]
    StringCollapse,
    #[error("singular Hessian")]
    SingularHessian,
    #[error("Newton iteration diverged (residual {residual:e})")]
    Diverged { residual: f64 },
    #[error("residual {residual:e} above the local-convergence threshold {threshold:e}")]
    NotLocal { residual: f64, threshold: f64 },
    #[error("continuation broke at step {step}: {reason}")]
    ContinuationBroke { step: usize, reason: String },
    #[error("action {action} at step {step} exceeds the bound {bound}")]
    BoundViolated { step: usize, action: f64, bound: f64 },
    #[error("eigen solve failed: {0}")]
    EigenSolveFailure(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("window [{ta}, {tb}] not inside the open time interval")]
    WindowOutOfDomain { ta: f64, tb: f64 },
    #[error("direction window is empty: [{lo:e}, {hi:e}]")]
    WindowEmpty { lo: f64, hi: f64 },
    #[error("blow-up case mismatch: {0}")]
    CaseMismatch(String),
    #[error("support of the test profile ({support}) exceeds the blow-up range ({range})")]
    SupportTooWide { support: f64, range: f64 },
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("integration failed: {0}")]
    IntegrationFailure(String),
    #[error("orbit does not reach radius {radius}")]
    RadiusNotReached { radius: f64 },
    #[error("count still changing after truncation doubling: {counts:?}")]
    TruncationTooSmall { counts: Vec<usize> },
    #[error("window not covered by the orbit samples")]
    WindowNotCovered,
}

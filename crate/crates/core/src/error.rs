use thiserror::Error;

use crate::tree::NodeId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("invalid stopping rule: {0}")]
    InvalidRule(String),

    #[error("process length {found} does not match tree with {expected} nodes")]
    LengthMismatch { expected: usize, found: usize },

    /// Sufficient monotonicity condition fails on the edge into `child`.
    #[error("CONDITION_VIOLATED at node {node} (child {child}): margin {margin:.6e}")]
    ConditionViolated {
        node: NodeId,
        child: NodeId,
        margin: f64,
    },

    #[error("CONDITION_VIOLATED: {0}")]
    InvalidDriver(String),

    #[error("operator is not time-consistent (tower property required)")]
    NonTowerOperator,

    #[error("y-fixed point did not converge at node {node} after {iterations} iterations")]
    FixedPointDiverged { node: NodeId, iterations: usize },

    #[error("root bracket expansion at node {node} passed |x| = 1e300")]
    BracketOverflow { node: NodeId },

    #[error("stopping rule is not in T_sigma for node {node}: {reason}")]
    NotAfterSigma { node: NodeId, reason: String },

    #[error("enumeration guard exceeded: {0}")]
    EnumerationGuard(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("document error: {0}")]
    Document(String),
}

pub type Result<T> = std::result::Result<T, Error>;

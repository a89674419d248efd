use thiserror::Error;

use crate::model::VarId;

#[derive(Debug, Error)]
pub enum DeriskError {
    #[error("variable {0:?} is not covered by the decision vector")]
    MissingVariable(VarId),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid instance: {0}")]
    Instance(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("point outside the function domain: {0}")]
    Domain(String),

    #[error("nominal solution carries no risk (phi* = 0)")]
    RiskFree,

    #[error("lp solver: {0}")]
    Lp(#[from] LpError),

    #[error("master problem is {0}; the cut generator produced an invalid cut")]
    MasterNotOptimal(&'static str),

    #[error("tangent refinement did not converge after {rounds} rounds (worst residual {residual:.3e} on {var:?})")]
    RefineStalled { rounds: usize, residual: f64, var: VarId },

    #[error("boosting kernel failed: {0}")]
    Kernel(String),

    #[error("every red-solver start failed: {}", .0.join("; "))]
    AllRunsFailed(Vec<String>),

    #[error("schema error at {pointer}: {message}")]
    Schema { pointer: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("simplex exceeded {0} pivots")]
    IterationLimit(usize),

    #[error("primal residual {0:.3e} exceeds tolerance after refinement")]
    Residual(f64),

    #[error("malformed problem: {0}")]
    Malformed(String),
}

pub type Result<T, E = DeriskError> = std::result::Result<T, E>;

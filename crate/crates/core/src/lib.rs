//! Softmax-adversarial cutting planes for de-risking optimization solutions.
//!
//! Given a nominal LP and a risk-feature model, [`engine::run`] either returns a
//! solution with certified lower risk at a bounded cost increase, or a
//! certificate that no such solution exists.

pub mod adapters;
pub mod config;
pub mod engine;
pub mod error;
pub mod features;
pub mod io;
pub mod kernels;
pub mod lp;
pub mod model;
pub mod record;
pub mod red;

pub use config::{AlphaPolicy, BoostingKernel, RunConfig, SeparationKernel, ThetaPolicy, ToleranceMode};
pub use engine::{
    check_termination, choose_alpha_grid, choose_alpha_theory, choose_theta, classify_outcome, monitor, run, run_with,
    RunParams, RunResult, Termination,
};
pub use error::{DeriskError, LpError, Result};
pub use features::{FeatureModel, PhiWitness, UncertaintySet};
pub use lp::{add_cut, refine_convex, solve_lp, AddCutOutcome, LpSolution, LpSolver, LpStatus};
pub use model::{
    evaluate_cost, validate_master, Cut, CutProvenance, FeatureEval, LinearExpr, MasterProblem, NominalProblem,
    ScenarioVector, Sense, VarId,
};
pub use record::{IterationRecord, MonitorReport, MonitorRow, Outcome, OutcomeKind, TerminationReason};
pub use red::RedConfig;

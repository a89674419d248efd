//! Master-problem solving: a self-contained LP engine plus Kelley-style
//! outer approximation of convex terms registered through epigraph proxies.

mod simplex;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use simplex::{BoundedSimplex, SimplexOptions};

use crate::error::{DeriskError, LpError, Result};
use crate::model::{Constraint, Cut, LinearExpr, MasterProblem, Sense, VarId};

/// Default cap on tangent rounds per refined solve.
pub const DEFAULT_TANGENT_ROUNDS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: LpStatus,
}

impl LpSolution {
    pub fn infeasible(n: usize) -> Self {
        Self { x: vec![0.0; n], objective: f64::INFINITY, status: LpStatus::Infeasible }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpRow {
    pub coefs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// `min cost.x + constant` over box bounds and linear rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LpProblem {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub cost: Vec<f64>,
    pub cost_constant: f64,
    pub rows: Vec<LpRow>,
}

impl LpProblem {
    pub fn new(n: usize) -> Self {
        Self {
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
            cost: vec![0.0; n],
            cost_constant: 0.0,
            rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.lower.len()
    }

    pub fn add_row(&mut self, coefs: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        self.rows.push(LpRow { coefs, sense, rhs });
    }

    pub fn from_master(p: &MasterProblem) -> Self {
        let n = p.num_vars();
        let mut lp = Self::new(n);
        for v in &p.variables {
            lp.lower[v.id.index()] = v.lower;
            lp.upper[v.id.index()] = v.upper;
        }
        for (v, a) in p.cost.terms() {
            lp.cost[v.index()] += a;
        }
        lp.cost[p.phi_l.index()] += p.theta;
        lp.cost_constant = p.cost.constant;
        for c in &p.constraints {
            let coefs = c.expr.terms().map(|(v, a)| (v.index(), a)).collect();
            lp.add_row(coefs, c.sense, c.rhs - c.expr.constant);
        }
        for cut in &p.cuts {
            let mut coefs: Vec<(usize, f64)> =
                cut.x_coeffs.terms().map(|(v, a)| (v.index(), a)).collect();
            coefs.push((p.phi_l.index(), 1.0));
            lp.add_row(coefs, Sense::Ge, cut.rhs - cut.x_coeffs.constant);
        }
        lp
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.cost_constant + self.cost.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0_f64;
        for j in 0..self.num_vars() {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        for row in &self.rows {
            let lhs: f64 = row.coefs.iter().map(|&(j, a)| a * x[j]).sum();
            let v = match row.sense {
                Sense::Le => lhs - row.rhs,
                Sense::Ge => row.rhs - lhs,
                Sense::Eq => (lhs - row.rhs).abs(),
            };
            worst = worst.max(v);
        }
        worst
    }

    fn check(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        if self.upper.len() != n || self.cost.len() != n {
            return Err(LpError::Malformed("bound/cost vectors differ in length".into()));
        }
        for j in 0..n {
            if self.lower[j].is_nan() || self.upper[j].is_nan() || self.lower[j] > self.upper[j] {
                return Err(LpError::Malformed(format!("column {j} has inconsistent bounds")));
            }
            if !self.cost[j].is_finite() {
                return Err(LpError::Malformed(format!("column {j} has non-finite cost")));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() || row.coefs.iter().any(|&(j, a)| j >= n || !a.is_finite()) {
                return Err(LpError::Malformed(format!("row {i} is not finite or out of range")));
            }
        }
        Ok(())
    }
}

/// Seam for swapping in an external LP engine.
pub trait LpSolver: Send + Sync {
    fn solve(&self, problem: &LpProblem) -> Result<LpSolution, LpError>;
}

/// Solves the master LP with the reference simplex.
pub fn solve_lp(p: &MasterProblem) -> Result<LpSolution, LpError> {
    BoundedSimplex::default().solve(&LpProblem::from_master(p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AddCutOutcome {
    Added,
    RejectedDuplicate,
}

/// Appends `cut` unless an identical one (coefficients within 1e-12) is present.
pub fn add_cut(p: &mut MasterProblem, cut: Cut) -> AddCutOutcome {
    if p.cuts.iter().any(|c| c.same_coefficients(&cut, 1e-12)) {
        return AddCutOutcome::RejectedDuplicate;
    }
    p.cuts.push(cut);
    AddCutOutcome::Added
}

/// A convex function of the decision vector with analytic gradient.
pub trait ConvexFunction: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<(VarId, f64)>;
    /// True where `value` is finite.
    fn in_domain(&self, _x: &[f64]) -> bool {
        true
    }
}

/// Affine minorant `f(a) + grad f(a).(x - a)`.
pub fn tangent_at(f: &dyn ConvexFunction, at: &[f64]) -> LinearExpr {
    let mut e = LinearExpr::constant(f.value(at));
    for (v, g) in f.gradient(at) {
        e.add_term(v, g);
        e.constant -= g * at[v.index()];
    }
    e
}

/// Epigraph proxy `aux >= f(x)` kept in the master as tangent cuts.
#[derive(Clone)]
pub struct ConvexTerm {
    pub aux_var: VarId,
    pub func: Arc<dyn ConvexFunction>,
}

impl fmt::Debug for ConvexTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConvexTerm").field("aux_var", &self.aux_var).finish_non_exhaustive()
    }
}

impl ConvexTerm {
    pub fn new(aux_var: VarId, func: Arc<dyn ConvexFunction>) -> Self {
        Self { aux_var, func }
    }

    /// Tangent row `aux - grad.x >= f(a) - grad.a`.
    pub fn tangent_constraint(&self, at: &[f64]) -> Constraint {
        let t = tangent_at(self.func.as_ref(), at);
        let mut expr = t.scaled(-1.0);
        let rhs = -expr.constant;
        expr.constant = 0.0;
        expr.add_term(self.aux_var, 1.0);
        Constraint::new(expr, Sense::Ge, rhs)
    }

    /// `f(x) - aux`; positive when the proxy under-states the function.
    pub fn residual(&self, x: &[f64]) -> f64 {
        self.func.value(x) - x[self.aux_var.index()]
    }
}

#[derive(Debug, Clone)]
pub struct RefineOptions {
    pub tol: f64,
    pub max_rounds: usize,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_rounds: DEFAULT_TANGENT_ROUNDS }
    }
}

/// Solves `p`, adding tangent rows to `p.constraints` until every registered
/// proxy satisfies `aux >= f(x) - tol` at the returned point.
pub fn refine_convex(
    p: &mut MasterProblem,
    terms: &[ConvexTerm],
    opts: &RefineOptions,
    solver: &dyn LpSolver,
) -> Result<LpSolution> {
    if opts.tol <= 0.0 {
        return Err(DeriskError::Config("refinement tolerance must be positive".into()));
    }
    if let Some(t) = terms.iter().find(|t| t.aux_var.index() >= p.num_vars()) {
        return Err(DeriskError::Config(format!("convex term proxy {} is not declared", t.aux_var)));
    }
    let mut anchor: Option<Vec<f64>> = None;
    let mut worst = (0.0, VarId(0));
    for _round in 0..opts.max_rounds {
        let sol = solve_master_with(solver, p)?;
        if !sol.is_optimal() || terms.is_empty() {
            return Ok(sol);
        }
        let mut added = 0;
        worst = (0.0, terms[0].aux_var);
        for term in terms {
            let point = if term.func.in_domain(&sol.x) {
                sol.x.clone()
            } else {
                match anchor.as_deref().and_then(|a| backoff(term, a, &sol.x)) {
                    Some(pt) => pt,
                    None => {
                        return Err(DeriskError::Domain(format!(
                            "proxy {} left its domain with no feasible anchor",
                            term.aux_var
                        )))
                    }
                }
            };
            let residual = term.func.value(&point) - sol.x[term.aux_var.index()];
            if !term.func.in_domain(&sol.x) || residual > opts.tol {
                if residual > worst.0 || !term.func.in_domain(&sol.x) {
                    worst = (residual.max(worst.0), term.aux_var);
                }
                p.constraints.push(term.tangent_constraint(&point));
                added += 1;
            }
        }
        if added == 0 {
            return Ok(sol);
        }
        if terms.iter().all(|t| t.func.in_domain(&sol.x)) {
            anchor = Some(sol.x.clone());
        }
    }
    Err(DeriskError::RefineStalled { rounds: opts.max_rounds, residual: worst.0, var: worst.1 })
}

fn backoff(term: &ConvexTerm, anchor: &[f64], x: &[f64]) -> Option<Vec<f64>> {
    let mut s = 0.5;
    for _ in 0..60 {
        let pt: Vec<f64> = anchor.iter().zip(x).map(|(a, b)| a + s * (b - a)).collect();
        if term.func.in_domain(&pt) {
            return Some(pt);
        }
        s *= 0.5;
    }
    None
}

pub fn solve_master_with(solver: &dyn LpSolver, p: &MasterProblem) -> Result<LpSolution> {
    Ok(solver.solve(&LpProblem::from_master(p))?)
}

//! Shared data model: decision variables, linear expressions, the master
//! problem, cuts, scenarios and feature evaluations.
//!
//! Everything here is plain data. The algorithms live in [`crate::lp`],
//! [`crate::kernels`] and [`crate::engine`].

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{DeriskError, Result};

/// Tolerance for invariants that hold exactly in real arithmetic.
pub const EXACT_TOL: f64 = 1e-9;
/// Tolerance for quantities coming out of a solver.
pub const SOLVER_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VarId(pub usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// Sparse affine expression `sum_j a_j x_j + constant`.
///
/// Zero coefficients are never stored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearExpr {
    pub coefficients: BTreeMap<VarId, f64>,
    #[serde(default)]
    pub constant: f64,
}

impl LinearExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(value: f64) -> Self {
        Self { coefficients: BTreeMap::new(), constant: value }
    }

    pub fn from_terms<I: IntoIterator<Item = (VarId, f64)>>(terms: I) -> Self {
        let mut e = Self::new();
        for (v, a) in terms {
            e.add_term(v, a);
        }
        e
    }

    pub fn with(mut self, var: VarId, coef: f64) -> Self {
        self.add_term(var, coef);
        self
    }

    /// Accumulates `coef * var`, dropping the entry if it cancels to zero.
    pub fn add_term(&mut self, var: VarId, coef: f64) {
        if coef == 0.0 {
            return;
        }
        let slot = self.coefficients.entry(var).or_insert(0.0);
        *slot += coef;
        if *slot == 0.0 {
            self.coefficients.remove(&var);
        }
    }

    pub fn coef(&self, var: VarId) -> f64 {
        self.coefficients.get(&var).copied().unwrap_or(0.0)
    }

    pub fn vars(&self) -> impl Iterator<Item = VarId> + '_ {
        self.coefficients.keys().copied()
    }

    pub fn terms(&self) -> impl Iterator<Item = (VarId, f64)> + '_ {
        self.coefficients.iter().map(|(v, a)| (*v, *a))
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let mut acc = self.constant;
        for (v, a) in self.terms() {
            let xv = x.get(v.index()).ok_or(DeriskError::MissingVariable(v))?;
            acc += a * xv;
        }
        Ok(acc)
    }

    /// Evaluation for callers that already validated dimensions.
    pub fn eval_unchecked(&self, x: &[f64]) -> f64 {
        self.constant + self.terms().map(|(v, a)| a * x[v.index()]).sum::<f64>()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut e = Self::constant(self.constant * factor);
        for (v, a) in self.terms() {
            e.add_term(v, a * factor);
        }
        e
    }

    pub fn add_expr(&mut self, other: &LinearExpr, factor: f64) {
        self.constant += factor * other.constant;
        for (v, a) in other.terms() {
            self.add_term(v, factor * a);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub id: VarId,
    #[serde(default)]
    pub name: String,
    #[serde(with = "lower_bound", default = "neg_inf")]
    pub lower: f64,
    #[serde(with = "upper_bound", default = "pos_inf")]
    pub upper: f64,
}

fn neg_inf() -> f64 {
    f64::NEG_INFINITY
}

fn pos_inf() -> f64 {
    f64::INFINITY
}

// JSON has no infinities: an absent bound is written as `null`.
mod lower_bound {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

mod upper_bound {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        super::lower_bound::serialize(v, s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = ">=")]
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub expr: LinearExpr,
    pub sense: Sense,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(expr: LinearExpr, sense: Sense, rhs: f64) -> Self {
        Self { expr, sense, rhs }
    }

    /// Signed violation: positive when the constraint fails at `x`.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let lhs = self.expr.eval_unchecked(x);
        match self.sense {
            Sense::Le => lhs - self.rhs,
            Sense::Ge => self.rhs - lhs,
            Sense::Eq => (lhs - self.rhs).abs(),
        }
    }
}

/// Adversarial scenario `z`, keyed by feature-domain entity (arc, branch, activity).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioVector {
    pub entries: BTreeMap<String, f64>,
}

impl ScenarioVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.entries.get(key).copied()
    }

    pub fn insert(&mut self, key: impl Into<String>, value: f64) {
        self.entries.insert(key.into(), value);
    }

    pub fn l2_norm(&self) -> f64 {
        self.entries.values().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CutProvenance {
    pub iteration: usize,
    pub pi: Vec<f64>,
    #[serde(default)]
    pub z: Option<ScenarioVector>,
}

/// Encodes `phiL + xCoeffs(x) >= rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Cut {
    pub x_coeffs: LinearExpr,
    pub rhs: f64,
    pub provenance: CutProvenance,
}

impl Cut {
    /// Cut `phiL >= lower(x)` for an affine under-estimator `lower`.
    pub fn from_lower_bound(lower: &LinearExpr, provenance: CutProvenance) -> Self {
        let mut x_coeffs = lower.scaled(-1.0);
        let rhs = -x_coeffs.constant;
        x_coeffs.constant = 0.0;
        Self { x_coeffs, rhs, provenance }
    }

    /// The bound the cut places on `phiL` at `x`.
    pub fn implied_phi(&self, x: &[f64]) -> f64 {
        self.rhs - self.x_coeffs.eval_unchecked(x)
    }

    /// Amount by which `(x, phi_l)` violates the cut (negative when satisfied).
    pub fn violation(&self, x: &[f64], phi_l: f64) -> f64 {
        self.implied_phi(x) - phi_l
    }

    pub fn same_coefficients(&self, other: &Cut, tol: f64) -> bool {
        if (self.rhs - other.rhs).abs() > tol
            || (self.x_coeffs.constant - other.x_coeffs.constant).abs() > tol
        {
            return false;
        }
        let keys: std::collections::BTreeSet<VarId> =
            self.x_coeffs.vars().chain(other.x_coeffs.vars()).collect();
        keys.into_iter()
            .all(|v| (self.x_coeffs.coef(v) - other.x_coeffs.coef(v)).abs() <= tol)
    }
}

/// Nominal problem `min c(x) s.t. x in P`, before the epigraph variable is added.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NominalProblem {
    pub variables: Vec<Variable>,
    pub cost: LinearExpr,
    pub constraints: Vec<Constraint>,
}

impl NominalProblem {
    pub fn add_variable(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        let id = VarId(self.variables.len());
        self.variables.push(Variable { id, name: name.into(), lower, upper });
        id
    }

    pub fn add_constraint(&mut self, expr: LinearExpr, sense: Sense, rhs: f64) {
        self.constraints.push(Constraint::new(expr, sense, rhs));
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }
}

/// The evolving LP relaxation:
/// `min c(x) + theta * phiL` over `x in P`, `phiL >= 0` and the cuts so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MasterProblem {
    pub variables: Vec<Variable>,
    pub cost: LinearExpr,
    pub theta: f64,
    #[serde(rename = "phiL")]
    pub phi_l: VarId,
    pub constraints: Vec<Constraint>,
    #[serde(default)]
    pub cuts: Vec<Cut>,
}

impl MasterProblem {
    pub fn from_nominal(nominal: &NominalProblem, theta: f64) -> Self {
        let mut variables = nominal.variables.clone();
        let phi_l = VarId(variables.len());
        variables.push(Variable { id: phi_l, name: "phiL".into(), lower: 0.0, upper: f64::INFINITY });
        Self {
            variables,
            cost: nominal.cost.clone(),
            theta,
            phi_l,
            constraints: nominal.constraints.clone(),
            cuts: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    /// Master objective `c(x) + theta * phiL`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.cost.eval_unchecked(x) + self.theta * x[self.phi_l.index()]
    }

    /// Largest violation of bounds, constraints and cuts at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0_f64;
        for v in &self.variables {
            let xv = x[v.id.index()];
            worst = worst.max(v.lower - xv).max(xv - v.upper);
        }
        for c in &self.constraints {
            worst = worst.max(c.violation(x));
        }
        let phi = x[self.phi_l.index()];
        for cut in &self.cuts {
            worst = worst.max(cut.violation(x, phi));
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

fn check_expr(expr: &LinearExpr, n: usize, field: &str, out: &mut Vec<Violation>) {
    for (v, a) in expr.terms() {
        if v.index() >= n {
            out.push(Violation::new(field, format!("references undeclared variable {v}")));
        }
        if a == 0.0 {
            out.push(Violation::new(field, format!("stores an explicit zero coefficient on {v}")));
        }
        if !a.is_finite() {
            out.push(Violation::new(field, format!("non-finite coefficient on {v}")));
        }
    }
    if !expr.constant.is_finite() {
        out.push(Violation::new(field, "non-finite constant"));
    }
}

/// Lists every broken invariant of `p`; empty means the problem is well formed.
pub fn validate_master(p: &MasterProblem) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = p.variables.len();

    if !(p.theta > 0.0 && p.theta.is_finite()) {
        out.push(Violation::new("theta", format!("must be a positive finite real, got {}", p.theta)));
    }
    for (i, v) in p.variables.iter().enumerate() {
        if v.id.index() != i {
            out.push(Violation::new(format!("variables[{i}].id"), "ids must be dense and ordered"));
        }
        if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper {
            out.push(Violation::new(format!("variables[{i}]"), "inconsistent bounds"));
        }
    }
    match p.variables.get(p.phi_l.index()) {
        None => out.push(Violation::new("phiL", "epigraph variable is not declared")),
        Some(v) if v.lower != 0.0 => {
            out.push(Violation::new("phiL", "epigraph variable must have lower bound 0"))
        }
        _ => {}
    }
    check_expr(&p.cost, n, "cost", &mut out);
    for (i, c) in p.constraints.iter().enumerate() {
        check_expr(&c.expr, n, &format!("constraints[{i}].expr"), &mut out);
        if !c.rhs.is_finite() {
            out.push(Violation::new(format!("constraints[{i}].rhs"), "non-finite"));
        }
    }
    for (i, cut) in p.cuts.iter().enumerate() {
        check_expr(&cut.x_coeffs, n, &format!("cuts[{i}].xCoeffs"), &mut out);
        if cut.x_coeffs.coef(p.phi_l) != 0.0 {
            out.push(Violation::new(
                format!("cuts[{i}].xCoeffs"),
                "phiL enters every cut with coefficient exactly 1 and must not appear in xCoeffs",
            ));
        }
        if !cut.rhs.is_finite() {
            out.push(Violation::new(format!("cuts[{i}].rhs"), "non-finite"));
        }
        let pi = &cut.provenance.pi;
        let sum: f64 = pi.iter().sum();
        if pi.iter().any(|w| *w < 0.0 || !w.is_finite()) || (sum - 1.0).abs() > EXACT_TOL {
            out.push(Violation::new(
                format!("cuts[{i}].provenance.pi"),
                format!("weights must be nonnegative and sum to 1 (sum = {sum})"),
            ));
        }
    }
    out
}

/// `c(x)` for the master's cost expression.
pub fn evaluate_cost(p: &MasterProblem, x: &[f64]) -> Result<f64> {
    p.cost.eval(x)
}

/// Feature values `phi_i(x|z)` together with their maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FeatureEval {
    pub values: Vec<f64>,
    pub argmax_id: usize,
    pub phi_max: f64,
}

impl FeatureEval {
    /// Ties resolve to the lowest feature index.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let (argmax_id, phi_max) = argmax(&values).ok_or(DeriskError::Empty("feature values"))?;
        Ok(Self { values, argmax_id, phi_max })
    }
}

/// First index attaining the maximum.
pub fn argmax(values: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_master() -> MasterProblem {
        let mut nominal = NominalProblem::default();
        let x = nominal.add_variable("x", 0.0, 10.0);
        nominal.cost = LinearExpr::new().with(x, 2.0);
        nominal.add_constraint(LinearExpr::new().with(x, 1.0), Sense::Ge, 3.0);
        MasterProblem::from_nominal(&nominal, 1.5)
    }

    #[test]
    fn fresh_master_is_valid() {
        assert!(validate_master(&tiny_master()).is_empty());
    }

    #[test]
    fn pi_not_summing_to_one_is_reported() {
        let mut p = tiny_master();
        p.cuts.push(Cut {
            x_coeffs: LinearExpr::new().with(VarId(0), -1.0),
            rhs: 0.0,
            provenance: CutProvenance { iteration: 0, pi: vec![0.5, 0.3], z: None },
        });
        let v = validate_master(&p);
        assert_eq!(v.len(), 1);
        assert!(v[0].field.contains("pi"));
    }

    #[test]
    fn zero_theta_is_reported() {
        let mut p = tiny_master();
        p.theta = 0.0;
        let v = validate_master(&p);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "theta");
    }

    #[test]
    fn phi_l_needs_zero_lower_bound() {
        let mut p = tiny_master();
        let id = p.phi_l.index();
        p.variables[id].lower = -1.0;
        assert_eq!(validate_master(&p)[0].field, "phiL");
    }

    #[test]
    fn cost_of_zero_vector() {
        let p = tiny_master();
        assert_eq!(evaluate_cost(&p, &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn cost_reports_missing_variable() {
        let p = tiny_master();
        match evaluate_cost(&p, &[]) {
            Err(DeriskError::MissingVariable(v)) => assert_eq!(v, VarId(0)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn add_term_drops_cancellations() {
        let mut e = LinearExpr::new().with(VarId(1), 2.0);
        e.add_term(VarId(1), -2.0);
        assert!(e.is_empty());
    }

    #[test]
    fn lower_bound_cut_round_trips_the_bound() {
        let lower = LinearExpr::constant(45.0).with(VarId(2), -1.0);
        let cut = Cut::from_lower_bound(&lower, CutProvenance::default());
        assert_eq!(cut.rhs, 45.0);
        assert_eq!(cut.x_coeffs.coef(VarId(2)), 1.0);
        assert_eq!(cut.implied_phi(&[0.0, 0.0, 5.0]), 40.0);
    }

    #[test]
    fn infinite_bounds_serialize_as_null() {
        let v = Variable { id: VarId(0), name: "f".into(), lower: f64::NEG_INFINITY, upper: 4.0 };
        let s = serde_json::to_string(&v).unwrap();
        assert!(s.contains("\"lower\":null"));
        let back: Variable = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), Some((1, 3.0)));
        assert_eq!(argmax(&[]), None);
    }
}

//! Dense bounded-variable primal simplex.
//!
//! Two phases over a standardized problem in which every column lives in
//! `[0, u]` (`u` possibly infinite). Pricing is Dantzig's rule until a run of
//! degenerate pivots exceeds [`SimplexOptions::stall_threshold`], after which
//! Bland's rule takes over for the rest of the phase.

use nalgebra::{DMatrix, DVector};

use super::{LpProblem, LpSolution, LpSolver, LpStatus};
use crate::error::LpError;
use crate::model::Sense;

#[derive(Debug, Clone)]
pub struct SimplexOptions {
    pub stall_threshold: usize,
    pub max_pivots: Option<usize>,
    pub pivot_tol: f64,
    pub optimality_tol: f64,
    pub feasibility_tol: f64,
    pub residual_tol: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            stall_threshold: 1000,
            max_pivots: None,
            pivot_tol: 1e-9,
            optimality_tol: 1e-9,
            feasibility_tol: 1e-9,
            residual_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct BoundedSimplex {
    pub options: SimplexOptions,
}

impl BoundedSimplex {
    pub fn new(options: SimplexOptions) -> Self {
        Self { options }
    }
}

impl LpSolver for BoundedSimplex {
    fn solve(&self, problem: &LpProblem) -> Result<LpSolution, LpError> {
        problem.check()?;
        let std = Standardized::build(problem);
        let mut tab = Tableau::new(&std, &self.options);
        tab.run(problem, &std)
    }
}

/// How an original variable maps onto standardized columns.
#[derive(Debug, Clone, Copy)]
enum ColumnMap {
    /// `x = offset + y`
    Shifted { col: usize, offset: f64 },
    /// `x = offset - y`
    Mirrored { col: usize, offset: f64 },
    /// `x = y_plus - y_minus`
    Split { plus: usize, minus: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ColKind {
    Structural,
    Slack,
    Artificial,
}

struct Standardized {
    /// Row-major dense constraint matrix, `m x n`.
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    kind: Vec<ColKind>,
    maps: Vec<ColumnMap>,
    /// Initial basic column per row.
    basis: Vec<usize>,
}

impl Standardized {
    fn build(p: &LpProblem) -> Self {
        let n_orig = p.lower.len();
        let mut maps = Vec::with_capacity(n_orig);
        let mut upper = Vec::new();
        let mut cost = Vec::new();
        let mut kind = Vec::new();
        for j in 0..n_orig {
            let (l, u) = (p.lower[j], p.upper[j]);
            if l.is_finite() {
                maps.push(ColumnMap::Shifted { col: upper.len(), offset: l });
                upper.push(u - l);
                cost.push(p.cost[j]);
                kind.push(ColKind::Structural);
            } else if u.is_finite() {
                maps.push(ColumnMap::Mirrored { col: upper.len(), offset: u });
                upper.push(f64::INFINITY);
                cost.push(-p.cost[j]);
                kind.push(ColKind::Structural);
            } else {
                let plus = upper.len();
                maps.push(ColumnMap::Split { plus, minus: plus + 1 });
                upper.extend([f64::INFINITY, f64::INFINITY]);
                cost.extend([p.cost[j], -p.cost[j]]);
                kind.extend([ColKind::Structural, ColKind::Structural]);
            }
        }
        let n_struct = upper.len();
        let m = p.rows.len();

        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut b = Vec::with_capacity(m);
        for row in &p.rows {
            let mut dense = vec![0.0; n_struct];
            let mut rhs = row.rhs;
            for &(j, a) in &row.coefs {
                match maps[j] {
                    ColumnMap::Shifted { col, offset } => {
                        dense[col] += a;
                        rhs -= a * offset;
                    }
                    ColumnMap::Mirrored { col, offset } => {
                        dense[col] -= a;
                        rhs -= a * offset;
                    }
                    ColumnMap::Split { plus, minus } => {
                        dense[plus] += a;
                        dense[minus] -= a;
                    }
                }
            }
            rows.push(dense);
            b.push(rhs);
        }

        // Slacks: `<=` gets +s, `>=` gets -s. Rows are then sign-normalized to b >= 0,
        // and a slack whose coefficient ends up +1 can start in the basis.
        let mut slack_of_row = vec![None; m];
        for (i, row) in p.rows.iter().enumerate() {
            let sign = match row.sense {
                Sense::Le => 1.0,
                Sense::Ge => -1.0,
                Sense::Eq => continue,
            };
            let col = upper.len();
            upper.push(f64::INFINITY);
            cost.push(0.0);
            kind.push(ColKind::Slack);
            for (k, r) in rows.iter_mut().enumerate() {
                r.push(if k == i { sign } else { 0.0 });
            }
            slack_of_row[i] = Some(col);
        }
        for i in 0..m {
            if b[i] < 0.0 {
                b[i] = -b[i];
                for v in rows[i].iter_mut() {
                    *v = -*v;
                }
            }
        }
        let mut basis = vec![usize::MAX; m];
        for i in 0..m {
            if let Some(col) = slack_of_row[i] {
                if rows[i][col] > 0.0 {
                    basis[i] = col;
                }
            }
        }
        for i in 0..m {
            if basis[i] != usize::MAX {
                continue;
            }
            let col = upper.len();
            upper.push(f64::INFINITY);
            cost.push(0.0);
            kind.push(ColKind::Artificial);
            for (k, r) in rows.iter_mut().enumerate() {
                r.push(if k == i { 1.0 } else { 0.0 });
            }
            basis[i] = col;
        }
        Self { a: rows, b, upper, cost, kind, maps, basis }
    }

    fn n(&self) -> usize {
        self.upper.len()
    }

    fn m(&self) -> usize {
        self.b.len()
    }
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

struct Tableau<'a> {
    t: Vec<Vec<f64>>,
    beta: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    at_upper: Vec<bool>,
    upper: Vec<f64>,
    opts: &'a SimplexOptions,
    pivots: usize,
    max_pivots: usize,
}

impl<'a> Tableau<'a> {
    fn new(std: &Standardized, opts: &'a SimplexOptions) -> Self {
        let (m, n) = (std.m(), std.n());
        let mut is_basic = vec![false; n];
        for &j in &std.basis {
            is_basic[j] = true;
        }
        Self {
            t: std.a.clone(),
            beta: std.b.clone(),
            basis: std.basis.clone(),
            is_basic,
            at_upper: vec![false; n],
            upper: std.upper.clone(),
            opts,
            pivots: 0,
            max_pivots: opts.max_pivots.unwrap_or(100_000 + 50 * (m + n)),
        }
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        if self.at_upper[j] {
            self.upper[j]
        } else {
            0.0
        }
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for (i, row) in self.t.iter().enumerate() {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                for (dj, a) in d.iter_mut().zip(row) {
                    *dj -= cb * a;
                }
            }
        }
        d
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let piv = self.t[r][q];
        for v in self.t[r].iter_mut() {
            *v /= piv;
        }
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[q];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
                row[q] = 0.0;
            }
        }
        let leaving = self.basis[r];
        self.is_basic[leaving] = false;
        self.is_basic[q] = true;
        self.basis[r] = q;
    }

    fn iterate(&mut self, cost: &[f64], allowed: &[bool]) -> Result<PhaseEnd, LpError> {
        let n = cost.len();
        let mut bland = false;
        let mut degenerate_run = 0usize;
        loop {
            if self.pivots >= self.max_pivots {
                return Err(LpError::IterationLimit(self.max_pivots));
            }
            let d = self.reduced_costs(cost);
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..n {
                if self.is_basic[j] || !allowed[j] || self.upper[j] <= 0.0 {
                    continue;
                }
                let eligible = if self.at_upper[j] {
                    d[j] > self.opts.optimality_tol
                } else {
                    d[j] < -self.opts.optimality_tol
                };
                if !eligible {
                    continue;
                }
                if bland {
                    entering = Some((j, d[j]));
                    break;
                }
                if entering.is_none_or(|(_, best)| d[j].abs() > best.abs()) {
                    entering = Some((j, d[j]));
                }
            }
            let Some((q, _)) = entering else {
                return Ok(PhaseEnd::Optimal);
            };
            let dir = if self.at_upper[q] { -1.0 } else { 1.0 };

            // Ratio test: (step, row, leaves_at_upper); row None means bound flip.
            let mut step = self.upper[q];
            let mut leave: Option<(usize, bool)> = None;
            let mut best_alpha = 0.0;
            for i in 0..self.t.len() {
                let alpha = dir * self.t[i][q];
                if alpha.abs() <= self.opts.pivot_tol {
                    continue;
                }
                let bj = self.basis[i];
                let (limit, to_upper) = if alpha > 0.0 {
                    (self.beta[i].max(0.0) / alpha, false)
                } else if self.upper[bj].is_finite() {
                    ((self.upper[bj] - self.beta[i]).max(0.0) / -alpha, true)
                } else {
                    continue;
                };
                // On ties a bound flip wins over a pivot; among rows Bland takes the
                // lowest basic index, Dantzig the largest pivot element.
                let better = if limit < step - 1e-12 {
                    true
                } else if limit <= step + 1e-12 {
                    match leave {
                        None => false,
                        Some((r, _)) if bland => bj < self.basis[r],
                        Some(_) => alpha.abs() > best_alpha,
                    }
                } else {
                    false
                };
                if better {
                    step = limit.min(step);
                    leave = Some((i, to_upper));
                    best_alpha = alpha.abs();
                }
            }
            if step.is_infinite() {
                return Ok(PhaseEnd::Unbounded);
            }

            let delta = dir * step;
            for i in 0..self.t.len() {
                self.beta[i] -= delta * self.t[i][q];
            }
            match leave {
                None => {
                    self.at_upper[q] = !self.at_upper[q];
                }
                Some((r, to_upper)) => {
                    let leaving = self.basis[r];
                    let entering_value = self.nonbasic_value(q) + delta;
                    self.pivot(r, q);
                    self.beta[r] = entering_value;
                    self.at_upper[leaving] = to_upper;
                    self.at_upper[q] = false;
                }
            }
            self.pivots += 1;

            if step <= 1e-12 {
                degenerate_run += 1;
                if degenerate_run > self.opts.stall_threshold {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
            }
        }
    }

    fn drive_out_artificials(&mut self, std: &Standardized) {
        for r in 0..self.basis.len() {
            if std.kind[self.basis[r]] != ColKind::Artificial {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for j in 0..std.n() {
                if self.is_basic[j] || std.kind[j] == ColKind::Artificial {
                    continue;
                }
                let a = self.t[r][j].abs();
                if a > 1e-7 && best.is_none_or(|(_, b)| a > b) {
                    best = Some((j, a));
                }
            }
            if let Some((q, _)) = best {
                let leaving = self.basis[r];
                let value = self.nonbasic_value(q);
                let delta = self.beta[r] / self.t[r][q];
                for i in 0..self.t.len() {
                    self.beta[i] -= delta * self.t[i][q];
                }
                self.pivot(r, q);
                self.beta[r] = value + delta;
                self.at_upper[leaving] = false;
                self.at_upper[q] = false;
            }
        }
    }

    fn primal_values(&self) -> Vec<f64> {
        let mut y: Vec<f64> = (0..self.upper.len()).map(|j| self.nonbasic_value(j)).collect();
        for (i, &j) in self.basis.iter().enumerate() {
            y[j] = self.beta[i];
        }
        y
    }

    /// Recomputes basic values from the original matrix to shed accumulated drift.
    fn refine(&self, std: &Standardized, y: &mut [f64]) {
        let m = std.m();
        if m == 0 {
            return;
        }
        let bmat = DMatrix::from_fn(m, m, |i, k| std.a[i][self.basis[k]]);
        let mut rhs = DVector::from_vec(std.b.clone());
        for j in 0..std.n() {
            if !self.is_basic[j] && y[j] != 0.0 {
                for i in 0..m {
                    rhs[i] -= std.a[i][j] * y[j];
                }
            }
        }
        let Some(sol) = bmat.lu().solve(&rhs) else {
            return;
        };
        let tol = 1e-7;
        let consistent = self.basis.iter().enumerate().all(|(k, &j)| {
            sol[k].is_finite() && sol[k] >= -tol && sol[k] <= self.upper[j] + tol
        });
        if consistent {
            for (k, &j) in self.basis.iter().enumerate() {
                y[j] = sol[k].clamp(0.0, self.upper[j]);
            }
        }
    }

    fn run(&mut self, p: &LpProblem, std: &Standardized) -> Result<LpSolution, LpError> {
        let n = std.n();
        let has_artificial = std.kind.contains(&ColKind::Artificial);
        if has_artificial {
            let phase1: Vec<f64> = std
                .kind
                .iter()
                .map(|k| if *k == ColKind::Artificial { 1.0 } else { 0.0 })
                .collect();
            let all = vec![true; n];
            self.iterate(&phase1, &all)?;
            let infeas: f64 = self
                .basis
                .iter()
                .enumerate()
                .filter(|(_, &j)| std.kind[j] == ColKind::Artificial)
                .map(|(i, _)| self.beta[i].max(0.0))
                .sum();
            let scale = 1.0 + std.b.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            if infeas > self.opts.feasibility_tol * scale * 100.0 {
                return Ok(LpSolution::infeasible(p.lower.len()));
            }
            self.drive_out_artificials(std);
            for j in 0..n {
                if std.kind[j] == ColKind::Artificial {
                    self.upper[j] = 0.0;
                    self.at_upper[j] = false;
                }
            }
        }
        let allowed: Vec<bool> = std.kind.iter().map(|k| *k != ColKind::Artificial).collect();
        if let PhaseEnd::Unbounded = self.iterate(&std.cost, &allowed)? {
            return Ok(LpSolution {
                x: vec![0.0; p.lower.len()],
                objective: f64::NEG_INFINITY,
                status: LpStatus::Unbounded,
            });
        }
        let mut y = self.primal_values();
        self.refine(std, &mut y);

        let x: Vec<f64> = std
            .maps
            .iter()
            .map(|m| match *m {
                ColumnMap::Shifted { col, offset } => offset + y[col],
                ColumnMap::Mirrored { col, offset } => offset - y[col],
                ColumnMap::Split { plus, minus } => y[plus] - y[minus],
            })
            .collect();
        let residual = p.max_violation(&x);
        let scale = 1.0 + x.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if residual > self.opts.residual_tol * scale {
            return Err(LpError::Residual(residual));
        }
        let objective = p.objective(&x);
        Ok(LpSolution { x, objective, status: LpStatus::Optimal })
    }
}

//! The SOFTMAX-ADVERSARIAL cutting-plane loop.

use std::time::Instant;

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{AlphaPolicy, BoostingKernel, RunConfig, SeparationKernel, ThetaPolicy, ToleranceMode};
use crate::error::{DeriskError, Result};
use crate::features::{FeatureModel, UncertaintySet};
use crate::kernels::{self, BoostResult, SeparationResult, PI_DROP};
use crate::lp::{add_cut, refine_convex, AddCutOutcome, BoundedSimplex, ConvexTerm, LpProblem, LpSolver, LpStatus, RefineOptions};
use crate::model::{argmax, Cut, MasterProblem, EXACT_TOL};
use crate::record::{
    CertificateStatement, DeRiskBounds, IterationRecord, MonitorReport, MonitorRow, Outcome, OutcomeKind,
    TerminationReason,
};
use crate::red;

const MONITOR_TOL: f64 = 1e-6;
const COR_TOL: f64 = 1e-9;
const MIN_ALPHA: f64 = 1e-8;
/// A cut must be violated by more than this to enter the master.
const ADD_TOL: f64 = 1e-9;

/// `theta = c* xi / (Phi* (lambdaHi - lambdaLo))`.
pub fn choose_theta(c_star: f64, phi_star: f64, lambda_lo: f64, lambda_hi: f64, xi: f64) -> Result<f64> {
    if phi_star <= 0.0 {
        return Err(DeriskError::RiskFree);
    }
    if !(0.0 < lambda_lo && lambda_lo < lambda_hi && lambda_hi < 1.0) || !(xi > 0.0) {
        return Err(DeriskError::Config(format!(
            "need 0 < lambdaLo < lambdaHi < 1 and xi > 0, got {lambda_lo}, {lambda_hi}, {xi}"
        )));
    }
    if !(c_star > 0.0) {
        return Err(DeriskError::Config(format!("formal theta needs a positive nominal cost, got {c_star}")));
    }
    Ok(c_star * xi / (phi_star * (lambda_hi - lambda_lo)))
}

/// `(ln n + [ln(2 phiU0 / Delta)]^+) / Delta`, floored at `1e-8`.
pub fn choose_alpha_theory(n_features: usize, phi_u0: f64, delta: f64) -> f64 {
    let ln_n = (n_features.max(1) as f64).ln();
    let spread = if phi_u0 > 0.0 { (2.0 * phi_u0 / delta).ln().max(0.0) } else { 0.0 };
    ((ln_n + spread) / delta).max(MIN_ALPHA)
}

/// `min(50, ln n / (0.25 Phi*))`, floored at `1e-8`.
pub fn choose_alpha_grid(n_branches: usize, phi_star: f64) -> f64 {
    let ln_n = (n_branches.max(1) as f64).ln();
    if phi_star <= 0.0 {
        return if ln_n > 0.0 { 50.0 } else { MIN_ALPHA };
    }
    (ln_n / (0.25 * phi_star)).min(50.0).max(MIN_ALPHA)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Absolute,
    Relative,
    Continue,
}

pub fn check_termination(phi_max: f64, phi_l: f64, delta: f64, small_delta: f64) -> Termination {
    if phi_max <= phi_l + delta {
        Termination::Absolute
    } else if phi_max - phi_l <= small_delta * phi_max {
        Termination::Relative
    } else {
        Termination::Continue
    }
}

/// Compares `(cHat, phiHat)` with the theta threshold.
#[allow(clippy::too_many_arguments)]
pub fn classify_outcome(
    c_hat: f64,
    phi_hat: f64,
    c_star: f64,
    phi_star: f64,
    theta: f64,
    lambda_lo: f64,
    lambda_hi: f64,
    xi: f64,
) -> Outcome {
    let weighted_value = c_hat + theta * phi_hat;
    let threshold = c_star + theta * lambda_hi * phi_star;
    if weighted_value <= threshold {
        Outcome {
            kind: OutcomeKind::DeRisked,
            solution: Vec::new(),
            bounds: Some(DeRiskBounds {
                risk_ratio: lambda_hi,
                cost_ratio: 1.0 + lambda_hi * xi / (lambda_hi - lambda_lo),
            }),
            certificate_statement: None,
            weighted_value,
            threshold,
        }
    } else {
        Outcome {
            kind: OutcomeKind::Certificate,
            solution: Vec::new(),
            bounds: None,
            certificate_statement: Some(CertificateStatement { lambda_lo, xi }),
            weighted_value,
            threshold,
        }
    }
}

/// Parameters fixed after the nominal solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunParams {
    pub theta: f64,
    pub alpha: f64,
    pub delta: f64,
    pub delta_prime: f64,
    pub c_star: f64,
    pub phi_star: f64,
    pub phi_star_exact: bool,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    /// `xi` as configured, or implied by an explicit theta.
    pub xi: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub outcome: Outcome,
    pub reason: TerminationReason,
    pub history: Vec<IterationRecord>,
    pub monitors: MonitorReport,
    pub params: RunParams,
    pub master: MasterProblem,
}

/// Which monitor families apply to a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorContext {
    /// `phiU0` when it came from an exact oracle.
    pub phi_u0: Option<f64>,
    pub delta: f64,
    /// Theory alpha with exact boosting at every iteration.
    pub exactness: bool,
    /// Additionally plain softmax separation without clipping or flattening.
    pub cor_applicable: bool,
}

/// Evaluates the per-iteration invariants on a run history.
pub fn monitor(history: &[IterationRecord], ctx: &MonitorContext) -> MonitorReport {
    let mut worst = f64::INFINITY;
    let mut rows = Vec::with_capacity(history.len());
    for r in history {
        let mut check = |slack: f64, tol: f64| {
            worst = worst.min(slack);
            slack >= -tol
        };
        let lemma1_ok = r.exact_phi.map(|p| check(p - r.phi_l, MONITOR_TOL));
        let lemma_upper_ok = ctx.phi_u0.map(|u| check(u - r.phi_l, MONITOR_TOL));
        let lemma2_ok = if ctx.exactness {
            r.exact_phi.map(|p| check(r.phi_max + 2.0 * ctx.delta - p, MONITOR_TOL))
        } else {
            None
        };
        let cor_violation_ok = if ctx.cor_applicable {
            r.cut_violation.map(|v| check(v - 0.25 * ctx.delta, COR_TOL))
        } else {
            None
        };
        rows.push(MonitorRow { t: r.t, lemma1_ok, lemma_upper_ok, lemma2_ok, cor_violation_ok });
    }
    MonitorReport {
        rows,
        worst_slack: if worst.is_finite() { worst } else { 0.0 },
        exactness_checks_applicable: ctx.exactness,
    }
}

pub fn run(model: &dyn FeatureModel, cfg: &RunConfig) -> Result<RunResult> {
    run_with(model, cfg, &BoundedSimplex::default())
}

fn structural(x: &[f64], n: usize) -> Vec<f64> {
    x[..n].to_vec()
}

fn solve_master(
    master: &mut MasterProblem,
    terms: &[ConvexTerm],
    opts: &RefineOptions,
    solver: &dyn LpSolver,
) -> Result<Vec<f64>> {
    let sol = refine_convex(master, terms, opts, solver)?;
    match sol.status {
        LpStatus::Optimal => Ok(sol.x),
        LpStatus::Infeasible => Err(DeriskError::MasterNotOptimal("infeasible")),
        LpStatus::Unbounded => Err(DeriskError::MasterNotOptimal("unbounded")),
    }
}

fn boost(model: &dyn FeatureModel, cfg: &RunConfig, x: &[f64], alpha: f64) -> Result<BoostResult> {
    match cfg.boosting_kernel {
        BoostingKernel::Exact => kernels::exact_boost(model, x, alpha),
        BoostingKernel::Greedy => kernels::greedy_boost(model, x, alpha),
        BoostingKernel::BudgetTopN => match model.uncertainty() {
            UncertaintySet::Budget { n } => {
                let mut b = kernels::budget_top_n_boost(model, x, *n, alpha)?;
                b.exact = model.separable_scenarios();
                Ok(b)
            }
            other => Err(DeriskError::Config(format!("budget-topN boosting needs a budget set, model has {other:?}"))),
        },
        BoostingKernel::Ball => match model.uncertainty() {
            UncertaintySet::Ball => kernels::ball_boost(model, x, model.tuple_size(), alpha),
            other => Err(DeriskError::Config(format!("ball boosting needs a ball set, model has {other:?}"))),
        },
        BoostingKernel::Synthetic => {
            let raw = model.evaluate(x, None)?;
            let input = if cfg.flatten { flatten_values(cfg, &raw)? } else { raw.clone() };
            let labels: Vec<String> = (0..raw.len()).map(|i| model.feature_label(i)).collect();
            let red_cfg = red::RedConfig { seed: cfg.red.seed ^ cfg.seed, ..cfg.red.clone() };
            let mut b = red::multistart_boost(&input, &labels, alpha, &red_cfg)?;
            b.values = raw;
            Ok(b)
        }
    }
}

fn flatten_values(cfg: &RunConfig, v: &[f64]) -> Result<Vec<f64>> {
    let floor = cfg.flatten_floor.unwrap_or_else(|| kernels::default_flatten_floor(v));
    kernels::flatten(v, floor)
}

fn separate(cfg: &RunConfig, boost: &BoostResult, alpha: f64) -> Result<SeparationResult> {
    let mut input =
        if cfg.boosting_kernel == BoostingKernel::Synthetic { boost.weights.clone() } else { boost.values.clone() };
    if cfg.flatten && cfg.boosting_kernel != BoostingKernel::Synthetic {
        input = flatten_values(cfg, &input)?;
    }
    let pi = match cfg.separation_kernel {
        SeparationKernel::Greedy => {
            let (i, _) = argmax(&input).ok_or(DeriskError::Empty("feature values"))?;
            SeparationResult::indicator(input.len(), i)
        }
        SeparationKernel::Softmax => kernels::softmax(alpha, &input)?,
        SeparationKernel::SoftmaxClip => {
            let k = cfg.clip_k.ok_or_else(|| DeriskError::Config("softmax-clip needs clipK".into()))?;
            kernels::clip(&kernels::softmax(alpha, &input)?, k)?
        }
    };
    Ok(kernels::drop_small(&pi, PI_DROP))
}

struct Classifier {
    params: RunParams,
}

impl Classifier {
    fn outcome(&self, c_hat: f64, phi_hat: f64, solution: Vec<f64>) -> Outcome {
        let p = &self.params;
        let mut o =
            classify_outcome(c_hat, phi_hat, p.c_star, p.phi_star, p.theta, p.lambda_lo, p.lambda_hi, p.xi);
        o.solution = solution;
        o
    }

    fn limit(&self, c_hat: f64, phi_hat: f64, solution: Vec<f64>) -> Outcome {
        let mut o = self.outcome(c_hat, phi_hat, solution);
        o.kind = OutcomeKind::IterationLimit;
        o.bounds = None;
        o.certificate_statement = None;
        o
    }
}

fn phi_hat(record: &IterationRecord) -> f64 {
    record.exact_phi.unwrap_or(record.phi_max)
}

/// Runs the loop with a caller-supplied LP engine.
pub fn run_with(model: &dyn FeatureModel, cfg: &RunConfig, solver: &dyn LpSolver) -> Result<RunResult> {
    cfg.validate()?;
    let nominal = model.nominal();
    let n = nominal.num_vars();
    let terms = model.convex_terms();
    let mut master = MasterProblem::from_nominal(nominal, 1.0);
    let mut refine = RefineOptions::default();

    let started = Instant::now();
    let x0 = solve_master(&mut master, &terms, &refine, solver)
        .map_err(|e| DeriskError::Instance(format!("nominal problem does not solve: {e}")))?;
    let xs0 = structural(&x0, n);
    let c_star = nominal.cost.eval(&xs0)?;
    let exact0 = model.exact_phi(&xs0)?;
    let (phi_star, phi_star_exact) = match &exact0 {
        Some(w) => (w.value, true),
        None => (model.greedy_argmax(&xs0)?.1.phi_max, false),
    };
    let (lambda_lo, lambda_hi) = cfg.theta_policy.lambdas();
    let risk_free = phi_star <= EXACT_TOL;
    let (theta, xi) = match cfg.theta_policy {
        _ if risk_free => (1.0, 0.0),
        ThetaPolicy::Formal { lambda_lo, lambda_hi, xi } => (choose_theta(c_star, phi_star, lambda_lo, lambda_hi, xi)?, xi),
        ThetaPolicy::Explicit { theta, lambda_lo, lambda_hi } => {
            let xi = if c_star > 0.0 { theta * phi_star * (lambda_hi - lambda_lo) / c_star } else { f64::INFINITY };
            (theta, xi)
        }
    };
    master.theta = theta;
    let delta = match cfg.tolerance_mode {
        ToleranceMode::Absolute => cfg.big_delta,
        ToleranceMode::Relative if phi_star > 0.0 => cfg.big_delta * phi_star,
        ToleranceMode::Relative => cfg.big_delta,
    };
    let alpha = match cfg.alpha_policy {
        AlphaPolicy::Explicit { alpha } => alpha,
        AlphaPolicy::Theory => choose_alpha_theory(model.num_features(), phi_star, delta),
        AlphaPolicy::Grid => choose_alpha_grid(model.alpha_grid_count(), phi_star),
    };
    let delta_prime = cfg.delta_prime.unwrap_or(alpha * delta);
    refine.tol = refine.tol.min(delta / 10.0);
    let params = RunParams {
        theta,
        alpha,
        delta,
        delta_prime,
        c_star,
        phi_star,
        phi_star_exact,
        lambda_lo,
        lambda_hi,
        xi,
    };
    info!("nominal cost {c_star}, phi* {phi_star}, theta {theta}, alpha {alpha}, delta {delta}");
    let classifier = Classifier { params: params.clone() };

    let mut history: Vec<IterationRecord> = Vec::new();
    let mut all_exact = true;
    let mut x = x0;
    let mut t = 0;
    let (outcome, reason) = loop {
        let iter_start = if t == 0 { started } else { Instant::now() };
        if t > 0 {
            x = solve_master(&mut master, &terms, &refine, solver)?;
        }
        let xs = structural(&x, n);
        let phi_l = x[master.phi_l.index()];
        let b = if risk_free { None } else { Some(boost(model, cfg, &xs, alpha)?) };
        let phi_max = match &b {
            Some(b) => argmax(&b.values).ok_or(DeriskError::Empty("feature values"))?.1,
            None => phi_star,
        };
        all_exact &= b.as_ref().is_none_or(|b| b.exact);
        let exact_phi = if t == 0 { exact0.as_ref().map(|w| w.value) } else { model.exact_phi(&xs)?.map(|w| w.value) };
        let mut record = IterationRecord {
            t,
            x: xs.clone(),
            cost: nominal.cost.eval(&xs)?,
            phi_l,
            phi_max,
            exact_phi,
            cuts_added: 0,
            wall_millis: 0.0,
            master_objective: master.objective(&x),
            cut_violation: None,
        };
        debug!("t={t} cost={} phiL={phi_l} phiMax={phi_max} exact={exact_phi:?}", record.cost);
        let finish = |record: &mut IterationRecord| {
            if cfg.record_timing {
                record.wall_millis = iter_start.elapsed().as_secs_f64() * 1e3;
            }
        };

        match check_termination(phi_max, phi_l, delta, cfg.small_delta) {
            Termination::Continue => {}
            stop => {
                finish(&mut record);
                let out = classifier.outcome(record.cost, phi_hat(&record), xs);
                history.push(record);
                let reason =
                    if stop == Termination::Absolute { TerminationReason::Absolute } else { TerminationReason::Relative };
                break (out, reason);
            }
        }
        if cfg.early_exit && t > 0 && phi_l <= 0.5 * phi_star {
            finish(&mut record);
            let out = classifier.outcome(record.cost, phi_hat(&record), xs);
            let out = if out.kind == OutcomeKind::DeRisked { out } else { classifier.limit(record.cost, phi_hat(&record), out.solution) };
            history.push(record);
            break (out, TerminationReason::EarlyExit);
        }
        if t >= cfg.t_max {
            finish(&mut record);
            let out = classifier.limit(record.cost, phi_hat(&record), xs);
            history.push(record);
            break (out, TerminationReason::IterationCap);
        }

        let b = b.expect("risk-free runs stop at the first termination test");
        let pi = separate(cfg, &b, alpha)?;
        let target: f64 = pi.pi.iter().zip(&b.values).map(|(p, v)| p * v).sum();
        record.cut_violation = Some(target - phi_l);
        let cuts = model.separation_cuts(&xs, b.z.as_ref(), &pi.pi, t)?;
        for cut in cuts {
            if cut.violation(&x, phi_l) > ADD_TOL && add_cut(&mut master, cut) == AddCutOutcome::Added {
                record.cuts_added += 1;
            }
        }
        finish(&mut record);
        let stalled = record.cuts_added == 0;
        let cost = record.cost;
        let ph = phi_hat(&record);
        history.push(record);
        if stalled {
            break (classifier.limit(cost, ph, xs), TerminationReason::NoProgress);
        }
        t += 1;
    };
    info!("stopped after {} records: {:?} ({:?})", history.len(), outcome.kind, reason);

    let theory = matches!(cfg.alpha_policy, AlphaPolicy::Theory);
    let exactness = theory && all_exact && !risk_free;
    let ctx = MonitorContext {
        phi_u0: phi_star_exact.then_some(phi_star),
        delta,
        exactness,
        cor_applicable: exactness
            && cfg.separation_kernel == SeparationKernel::Softmax
            && !cfg.flatten,
    };
    let monitors = monitor(&history, &ctx);
    Ok(RunResult { outcome, reason, history, monitors, params, master })
}

/// Random feasible points: vertices of random-objective LPs and convex combinations of them.
pub fn sample_feasible_points(model: &dyn FeatureModel, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let nominal = model.nominal();
    let n = nominal.num_vars();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = MasterProblem::from_nominal(nominal, 1.0);
    let mut lp = LpProblem::from_master(&base);
    let solver = BoundedSimplex::default();
    let vertex_target = (count / 2).clamp(1, 40);
    let mut vertices: Vec<Vec<f64>> = Vec::new();
    let mut attempts = 0;
    while vertices.len() < vertex_target && attempts < 4 * vertex_target + 10 {
        attempts += 1;
        for j in 0..lp.cost.len() {
            let (lo, hi) = (lp.lower[j], lp.upper[j]);
            lp.cost[j] = match (lo.is_finite(), hi.is_finite()) {
                (true, true) => rng.gen_range(-1.0..1.0),
                (true, false) => rng.gen_range(0.0..1.0),
                (false, true) => rng.gen_range(-1.0..0.0),
                (false, false) => 0.0,
            };
        }
        let sol = solver.solve(&lp)?;
        if sol.is_optimal() {
            let mut v = structural(&sol.x, n);
            model.complete_point(&mut v);
            vertices.push(v);
        }
    }
    if vertices.is_empty() {
        return Err(DeriskError::Instance("could not sample a feasible point".into()));
    }
    let mut points = vertices.clone();
    while points.len() < count {
        let k = rng.gen_range(2..=vertices.len().clamp(2, 4));
        let mut w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..1.0_f64) + 1e-3).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        let mut p = vec![0.0; n];
        for wi in &w {
            let v = &vertices[rng.gen_range(0..vertices.len())];
            for j in 0..n {
                p[j] += wi * v[j];
            }
        }
        model.complete_point(&mut p);
        points.push(p);
    }
    points.truncate(count);
    Ok(points)
}

/// Smallest `Phi(x) - (rhs - xCoeffs(x))` over all cuts and points; negative means an invalid cut.
pub fn cut_validity_slack(model: &dyn FeatureModel, cuts: &[Cut], points: &[Vec<f64>]) -> Result<f64> {
    let mut worst = f64::INFINITY;
    for p in points {
        let phi = model
            .exact_phi(p)?
            .ok_or_else(|| DeriskError::Kernel("cut validation needs an exact oracle".into()))?
            .value;
        for c in cuts {
            worst = worst.min(phi - c.implied_phi(p));
        }
    }
    Ok(worst)
}

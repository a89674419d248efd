//! Boosting and separation kernels.
//!
//! Boosting picks the scenario `z^t` a cut should target; separation turns
//! feature values into convex-combination weights `pi^t`. Ties resolve to the
//! lowest feature index throughout.

use std::cmp::Ordering;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{DeriskError, Result};
use crate::features::{FeatureModel, UncertaintySet};
use crate::model::{argmax, ScenarioVector};

/// Weights below this are dropped before a cut is built.
pub const PI_DROP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BoostResult {
    pub z: Option<ScenarioVector>,
    /// Raw `phi_i(x|z)` at the chosen scenario.
    pub values: Vec<f64>,
    /// Boosting weights handed to the separation kernel.
    pub weights: Vec<f64>,
    /// Log-sum-exp of `alpha * weights`.
    pub lse_value: f64,
    /// The scenario maximizes the log-sum-exp exactly.
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SeparationResult {
    pub pi: Vec<f64>,
    pub support_size: usize,
}

impl SeparationResult {
    fn from_pi(pi: Vec<f64>) -> Self {
        let support_size = pi.iter().filter(|w| **w > 0.0).count();
        Self { pi, support_size }
    }

    pub fn indicator(n: usize, i: usize) -> Self {
        let mut pi = vec![0.0; n];
        pi[i] = 1.0;
        Self { pi, support_size: 1 }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(DeriskError::Kernel(format!("alpha must be positive, got {alpha}")))
    }
}

/// `ln sum_i exp(alpha y_i)`, shifted by the maximum.
pub fn log_sum_exp(alpha: f64, y: &[f64]) -> Result<f64> {
    check_alpha(alpha)?;
    let (_, m) = argmax(y).ok_or(DeriskError::Empty("log-sum-exp input"))?;
    let s: f64 = y.iter().map(|v| (alpha * (v - m)).exp()).sum();
    Ok(alpha * m + s.ln())
}

/// `exp(alpha y_i) / sum_j exp(alpha y_j)`.
pub fn softmax(alpha: f64, y: &[f64]) -> Result<SeparationResult> {
    check_alpha(alpha)?;
    let (_, m) = argmax(y).ok_or(DeriskError::Empty("softmax input"))?;
    let e: Vec<f64> = y.iter().map(|v| (alpha * (v - m)).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(SeparationResult::from_pi(e.into_iter().map(|v| v / s).collect()))
}

/// Zeroes weights below `threshold` and renormalizes the rest.
pub fn drop_small(pi: &SeparationResult, threshold: f64) -> SeparationResult {
    let kept: Vec<f64> = pi.pi.iter().map(|&w| if w < threshold { 0.0 } else { w }).collect();
    let s: f64 = kept.iter().sum();
    if s <= 0.0 {
        let (i, _) = argmax(&pi.pi).unwrap_or((0, 0.0));
        return SeparationResult::indicator(pi.pi.len(), i);
    }
    SeparationResult::from_pi(kept.into_iter().map(|w| w / s).collect())
}

/// Indices of the `k` largest values, descending, ties to the lowest index.
pub fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Keeps the `k` largest weights and rescales them to sum to one.
pub fn clip(pi: &SeparationResult, k: usize) -> Result<SeparationResult> {
    if k == 0 {
        return Err(DeriskError::Kernel("clip needs K >= 1".into()));
    }
    if k >= pi.pi.len() {
        return Ok(pi.clone());
    }
    let keep = top_k_indices(&pi.pi, k);
    let s: f64 = keep.iter().map(|&i| pi.pi[i]).sum();
    let mut out = vec![0.0; pi.pi.len()];
    if s <= 0.0 {
        out[keep[0]] = 1.0;
    } else {
        for &i in &keep {
            out[i] = pi.pi[i] / s;
        }
    }
    Ok(SeparationResult::from_pi(out))
}

/// Default floor: `1e-6` times the largest value.
pub fn default_flatten_floor(values: &[f64]) -> f64 {
    let m = values.iter().fold(0.0_f64, |a, v| a.max(*v));
    if m > 0.0 {
        1e-6 * m
    } else {
        1.0
    }
}

/// `phi -> ln(max(phi, floor)) - ln(floor)`.
pub fn flatten(values: &[f64], floor: f64) -> Result<Vec<f64>> {
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(DeriskError::Kernel(format!("flatten floor must be positive, got {floor}")));
    }
    let lf = floor.ln();
    Ok(values.iter().map(|v| v.max(floor).ln() - lf).collect())
}

fn boost_from_values(z: Option<ScenarioVector>, values: Vec<f64>, alpha: f64, exact: bool) -> Result<BoostResult> {
    let lse_value = log_sum_exp(alpha, &values)?;
    Ok(BoostResult { z, weights: values.clone(), values, lse_value, exact })
}

/// `argmax_{z, i} phi_i(x|z)` with indicator weights.
pub fn greedy_boost(model: &dyn FeatureModel, x: &[f64], alpha: f64) -> Result<BoostResult> {
    let (z, eval) = model.greedy_argmax(x)?;
    let lse_value = log_sum_exp(alpha, &eval.values)?;
    let n = eval.values.len();
    let mut weights = vec![0.0; n];
    weights[eval.argmax_id] = 1.0;
    let exact = matches!(model.uncertainty(), UncertaintySet::None);
    Ok(BoostResult { z, values: eval.values, weights, lse_value, exact })
}

/// Exact maximizer of the log-sum-exp over `Z`.
pub fn exact_boost(model: &dyn FeatureModel, x: &[f64], alpha: f64) -> Result<BoostResult> {
    match model.uncertainty() {
        UncertaintySet::None => boost_from_values(None, model.evaluate(x, None)?, alpha, true),
        UncertaintySet::Finite { scenarios } => {
            let mut best: Option<BoostResult> = None;
            for z in scenarios {
                let b = boost_from_values(Some(z.clone()), model.evaluate(x, Some(z))?, alpha, true)?;
                if best.as_ref().is_none_or(|cur| b.lse_value > cur.lse_value) {
                    best = Some(b);
                }
            }
            best.ok_or(DeriskError::Empty("uncertainty set"))
        }
        UncertaintySet::Budget { n } if model.separable_scenarios() => {
            let mut b = budget_top_n_boost(model, x, *n, alpha)?;
            b.exact = true;
            Ok(b)
        }
        other => Err(DeriskError::Kernel(format!(
            "no exact log-sum-exp maximizer for uncertainty set {other:?}"
        ))),
    }
}

/// `z = 1` on the `n` largest entries of `t`; the flag reports clamping of `n`.
pub fn budget_top_n(t: &[f64], n: usize) -> (Vec<f64>, bool) {
    let clamped = n > t.len();
    let mut z = vec![0.0; t.len()];
    for i in top_k_indices(t, n.min(t.len())) {
        z[i] = 1.0;
    }
    (z, clamped)
}

pub fn budget_top_n_boost(model: &dyn FeatureModel, x: &[f64], n: usize, alpha: f64) -> Result<BoostResult> {
    if n == 0 {
        return Err(DeriskError::Kernel("budget N must be at least 1".into()));
    }
    let base = model.scenario_base(x)?;
    let t: Vec<f64> = base.iter().map(|(_, v)| *v).collect();
    let (zv, clamped) = budget_top_n(&t, n);
    if clamped {
        warn!("budget N = {n} exceeds {} scenario entries; clamped", t.len());
    }
    let mut z = ScenarioVector::new();
    for ((key, _), v) in base.iter().zip(zv) {
        z.insert(key.clone(), v);
    }
    let values = model.evaluate(x, Some(&z))?;
    boost_from_values(Some(z), values, alpha, false)
}

/// `z = T / ||T_s*||` on the top-`k` entries; the flag reports an all-zero top tuple.
pub fn ball_direction(t: &[f64], k: usize) -> Result<(Vec<f64>, bool)> {
    if k == 0 || k > t.len() {
        return Err(DeriskError::Kernel(format!("tuple size {k} invalid for {} entries", t.len())));
    }
    let top = top_k_indices(t, k);
    let norm = top.iter().map(|&i| t[i] * t[i]).sum::<f64>().sqrt();
    let mut z = vec![0.0; t.len()];
    if norm == 0.0 {
        return Ok((z, true));
    }
    for &i in &top {
        z[i] = t[i] / norm;
    }
    Ok((z, false))
}

pub fn ball_boost(model: &dyn FeatureModel, x: &[f64], tuple_size: usize, alpha: f64) -> Result<BoostResult> {
    let base = model.scenario_base(x)?;
    let t: Vec<f64> = base.iter().map(|(_, v)| *v).collect();
    let (zv, all_zero) = ball_direction(&t, tuple_size)?;
    if all_zero {
        warn!("ball boosting: top tuple carries no load, z = 0");
    }
    let mut z = ScenarioVector::new();
    for ((key, _), v) in base.iter().zip(zv) {
        z.insert(key.clone(), v);
    }
    let values = model.evaluate(x, Some(&z))?;
    boost_from_values(Some(z), values, alpha, false)
}

/// Smooth objective over `zeta` for first-order ascent. `None` outside the domain.
pub trait SmoothObjective: Sync {
    fn dim(&self) -> usize;
    fn value(&self, z: &[f64]) -> Option<f64>;
    fn gradient(&self, z: &[f64]) -> Option<Vec<f64>>;
}

/// `sum_i e^{alpha (zeta_i + phi_i)} + eps ln(Gamma - sum zeta) + sum_i eps_i ln(1 - zeta_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticObjective {
    pub phi: Vec<f64>,
    pub alpha: f64,
    pub gamma: f64,
    pub eps: f64,
    pub eps_i: Vec<f64>,
}

pub fn build_synthetic_objective(
    phi: &[f64],
    alpha: f64,
    gamma: f64,
    eps: f64,
    eps_i: &[f64],
) -> Result<SyntheticObjective> {
    check_alpha(alpha)?;
    if !(gamma > 0.0) || !(eps > 0.0) || eps_i.iter().any(|e| !(*e > 0.0)) {
        return Err(DeriskError::Kernel("synthetic objective needs Gamma, eps, eps_i > 0".into()));
    }
    if eps_i.len() != phi.len() {
        return Err(DeriskError::Kernel("eps_i must have one entry per feature".into()));
    }
    Ok(SyntheticObjective { phi: phi.to_vec(), alpha, gamma, eps, eps_i: eps_i.to_vec() })
}

impl SyntheticObjective {
    pub fn in_domain(&self, z: &[f64]) -> bool {
        let s: f64 = z.iter().sum();
        s < self.gamma && z.iter().all(|v| *v < 1.0 && v.is_finite())
    }
}

impl SmoothObjective for SyntheticObjective {
    fn dim(&self) -> usize {
        self.phi.len()
    }

    fn value(&self, z: &[f64]) -> Option<f64> {
        if !self.in_domain(z) {
            return None;
        }
        let s: f64 = z.iter().sum();
        let mut v = self.eps * (self.gamma - s).ln();
        for i in 0..z.len() {
            v += (self.alpha * (z[i] + self.phi[i])).exp() + self.eps_i[i] * (1.0 - z[i]).ln();
        }
        v.is_finite().then_some(v)
    }

    fn gradient(&self, z: &[f64]) -> Option<Vec<f64>> {
        if !self.in_domain(z) {
            return None;
        }
        let slack = self.gamma - z.iter().sum::<f64>();
        let g: Vec<f64> = (0..z.len())
            .map(|i| {
                self.alpha * (self.alpha * (z[i] + self.phi[i])).exp()
                    - self.eps / slack
                    - self.eps_i[i] / (1.0 - z[i])
            })
            .collect();
        g.iter().all(|v| v.is_finite()).then_some(g)
    }
}

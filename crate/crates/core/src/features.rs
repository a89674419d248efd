//! The pluggable risk-feature interface every problem family implements.

use serde::{Deserialize, Serialize};

use crate::error::{DeriskError, Result};
use crate::lp::ConvexTerm;
use crate::model::{Cut, FeatureEval, NominalProblem, ScenarioVector};

/// The uncertainty set `Z` a model declares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum UncertaintySet {
    /// No adversary; `phi_i(x|z) = phi_i(x)`.
    None,
    /// Explicitly enumerated scenarios.
    Finite { scenarios: Vec<ScenarioVector> },
    /// `{0 <= z <= 1, sum z <= n}` over the model's scenario keys.
    Budget { n: usize },
    /// Euclidean unit ball over the model's scenario keys.
    Ball,
}

impl UncertaintySet {
    pub fn is_finite_or_empty(&self) -> bool {
        matches!(self, Self::None | Self::Finite { .. })
    }
}

/// Exact value of `Phi(x)` and where it is attained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PhiWitness {
    pub value: f64,
    pub z: Option<ScenarioVector>,
    pub feature: usize,
    pub feature_label: String,
}

pub trait FeatureModel: Send + Sync {
    fn nominal(&self) -> &NominalProblem;

    fn num_features(&self) -> usize;

    fn feature_label(&self, i: usize) -> String {
        format!("f{i}")
    }

    fn uncertainty(&self) -> &UncertaintySet;

    /// `phi_i(x|z)` for every feature; `z = None` is the unperturbed scenario.
    fn evaluate(&self, x: &[f64], z: Option<&ScenarioVector>) -> Result<Vec<f64>>;

    /// Keyed per-entity values a budget or ball scenario scales (branch loads, ...).
    fn scenario_base(&self, _x: &[f64]) -> Result<Vec<(String, f64)>> {
        Err(DeriskError::Kernel("model exposes no scenario base values".into()))
    }

    /// Exact `Phi(x) = max_z max_i phi_i(x|z)`, when the model can compute it.
    fn exact_phi(&self, x: &[f64]) -> Result<Option<PhiWitness>>;

    /// `argmax_{z, i} phi_i(x|z)`. The default enumerates a finite `Z`.
    fn greedy_argmax(&self, x: &[f64]) -> Result<(Option<ScenarioVector>, FeatureEval)> {
        match self.uncertainty() {
            UncertaintySet::None => Ok((None, FeatureEval::from_values(self.evaluate(x, None)?)?)),
            UncertaintySet::Finite { scenarios } => {
                let mut best: Option<(ScenarioVector, FeatureEval)> = None;
                for z in scenarios {
                    let eval = FeatureEval::from_values(self.evaluate(x, Some(z))?)?;
                    if best.as_ref().is_none_or(|(_, b)| eval.phi_max > b.phi_max) {
                        best = Some((z.clone(), eval));
                    }
                }
                let (z, eval) = best.ok_or(DeriskError::Empty("uncertainty set"))?;
                Ok((Some(z), eval))
            }
            _ => Err(DeriskError::Kernel("greedy argmax needs a finite uncertainty set".into())),
        }
    }

    /// Valid cuts `phiL >= sum_i pi_i phi_i(x|z)` (or an under-estimator tight at `x`).
    fn separation_cuts(
        &self,
        x: &[f64],
        z: Option<&ScenarioVector>,
        pi: &[f64],
        iteration: usize,
    ) -> Result<Vec<Cut>>;

    /// Convex proxies the master must refine by tangents.
    fn convex_terms(&self) -> Vec<ConvexTerm> {
        Vec::new()
    }

    /// `max_z phi_i(x|z)` decouples per feature, so a top-N pick over scenario keys is exact.
    fn separable_scenarios(&self) -> bool {
        false
    }

    /// Number of entities averaged by each feature (tuple features); 1 otherwise.
    fn tuple_size(&self) -> usize {
        1
    }

    /// Sets auxiliary variables to the tightest values the structural variables allow.
    fn complete_point(&self, _x: &mut [f64]) {}

    /// Entity count used by the grid alpha heuristic.
    fn alpha_grid_count(&self) -> usize {
        self.num_features()
    }

    /// Largest violation of the nominal constraints and bounds at `x`.
    fn feasibility_residual(&self, x: &[f64]) -> Result<f64> {
        let nominal = self.nominal();
        if x.len() < nominal.num_vars() {
            return Err(DeriskError::Instance(format!(
                "solution has {} entries, instance needs {}",
                x.len(),
                nominal.num_vars()
            )));
        }
        let mut worst = 0.0_f64;
        for v in &nominal.variables {
            let xv = x[v.id.index()];
            worst = worst.max(v.lower - xv).max(xv - v.upper);
        }
        for c in &nominal.constraints {
            worst = worst.max(c.violation(x));
        }
        Ok(worst)
    }
}

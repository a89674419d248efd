//! Single-commodity routing over parallel arcs with M/M/1 delay risk.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{DeriskError, Result};
use crate::features::{FeatureModel, PhiWitness, UncertaintySet};
use crate::lp::{ConvexFunction, ConvexTerm};
use crate::model::{argmax, Cut, CutProvenance, LinearExpr, NominalProblem, ScenarioVector, Sense, VarId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct QueueArc {
    pub capacity: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct QueueingInstance {
    pub arcs: Vec<QueueArc>,
    pub demand: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    0.7
}

/// `u / (u + eps - x)`; infinite at or beyond the pole.
pub fn mu(u: f64, eps: f64, x: f64) -> f64 {
    let d = u + eps - x;
    if d > 0.0 {
        u / d
    } else {
        f64::INFINITY
    }
}

struct Delay {
    var: VarId,
    u: f64,
    eps: f64,
}

impl ConvexFunction for Delay {
    fn value(&self, x: &[f64]) -> f64 {
        mu(self.u, self.eps, x[self.var.index()])
    }

    fn gradient(&self, x: &[f64]) -> Vec<(VarId, f64)> {
        let d = self.u + self.eps - x[self.var.index()];
        vec![(self.var, self.u / (d * d))]
    }

    fn in_domain(&self, x: &[f64]) -> bool {
        x[self.var.index()] < self.u + self.eps
    }
}

#[derive(Debug, Clone)]
pub struct QueueingModel {
    pub instance: QueueingInstance,
    nominal: NominalProblem,
    flows: Vec<VarId>,
    proxies: Vec<VarId>,
    z: UncertaintySet,
}

impl QueueingModel {
    pub fn new(instance: QueueingInstance) -> Result<Self> {
        let bad = |m: String| Err(DeriskError::Instance(m));
        if instance.arcs.is_empty() {
            return bad("queueing instance has no arcs".into());
        }
        if !(instance.demand > 0.0) || !(instance.epsilon > 0.0) {
            return bad("demand and epsilon must be positive".into());
        }
        if instance.arcs.iter().any(|a| !(a.capacity > 0.0) || !(a.cost >= 0.0)) {
            return bad("arc capacities must be positive and costs nonnegative".into());
        }
        let total: f64 = instance.arcs.iter().map(|a| a.capacity).sum();
        if total < instance.demand {
            return bad(format!("total capacity {total} cannot carry demand {}", instance.demand));
        }
        let mut nominal = NominalProblem::default();
        let flows: Vec<VarId> = instance
            .arcs
            .iter()
            .enumerate()
            .map(|(i, a)| nominal.add_variable(format!("x{}", i + 1), 0.0, a.capacity))
            .collect();
        let proxies: Vec<VarId> =
            (0..instance.arcs.len()).map(|i| nominal.add_variable(format!("q{}", i + 1), 0.0, f64::INFINITY)).collect();
        nominal.cost = LinearExpr::from_terms(flows.iter().zip(&instance.arcs).map(|(v, a)| (*v, a.cost)));
        nominal.add_constraint(LinearExpr::from_terms(flows.iter().map(|v| (*v, 1.0))), Sense::Eq, instance.demand);
        Ok(Self { instance, nominal, flows, proxies, z: UncertaintySet::None })
    }

    pub fn flows(&self) -> &[VarId] {
        &self.flows
    }

    pub fn proxies(&self) -> &[VarId] {
        &self.proxies
    }
}

impl FeatureModel for QueueingModel {
    fn nominal(&self) -> &NominalProblem {
        &self.nominal
    }

    fn num_features(&self) -> usize {
        self.instance.arcs.len()
    }

    fn feature_label(&self, i: usize) -> String {
        format!("arc{}", i + 1)
    }

    fn uncertainty(&self) -> &UncertaintySet {
        &self.z
    }

    fn evaluate(&self, x: &[f64], _z: Option<&ScenarioVector>) -> Result<Vec<f64>> {
        let eps = self.instance.epsilon;
        self.flows
            .iter()
            .zip(&self.instance.arcs)
            .enumerate()
            .map(|(i, (v, a))| {
                let xi = *x.get(v.index()).ok_or(DeriskError::MissingVariable(*v))?;
                let m = mu(a.capacity, eps, xi);
                if m.is_finite() {
                    Ok(m)
                } else {
                    Err(DeriskError::Domain(format!("arc {} carries {xi}, delay is infinite", i + 1)))
                }
            })
            .collect()
    }

    fn exact_phi(&self, x: &[f64]) -> Result<Option<PhiWitness>> {
        let v = self.evaluate(x, None)?;
        let (i, value) = argmax(&v).ok_or(DeriskError::Empty("arcs"))?;
        Ok(Some(PhiWitness { value, z: None, feature: i, feature_label: self.feature_label(i) }))
    }

    fn separation_cuts(&self, _x: &[f64], z: Option<&ScenarioVector>, pi: &[f64], iteration: usize) -> Result<Vec<Cut>> {
        let lower = LinearExpr::from_terms(self.proxies.iter().zip(pi).map(|(q, p)| (*q, *p)));
        let prov = CutProvenance { iteration, pi: pi.to_vec(), z: z.cloned() };
        Ok(vec![Cut::from_lower_bound(&lower, prov)])
    }

    fn convex_terms(&self) -> Vec<ConvexTerm> {
        self.flows
            .iter()
            .zip(&self.proxies)
            .zip(&self.instance.arcs)
            .map(|((x, q), a)| {
                ConvexTerm::new(*q, Arc::new(Delay { var: *x, u: a.capacity, eps: self.instance.epsilon }))
            })
            .collect()
    }

    fn complete_point(&self, x: &mut [f64]) {
        for ((xv, q), a) in self.flows.iter().zip(&self.proxies).zip(&self.instance.arcs) {
            x[q.index()] = mu(a.capacity, self.instance.epsilon, x[xv.index()]);
        }
    }
}

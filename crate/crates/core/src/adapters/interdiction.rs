//! Min-cost flow under adversarial capacity reduction.
//!
//! There is one feature per `s-t` cut `S`: `phi_S(x|z) = max(M - sum_{delta+(S)} min(x, z), 0)`.
//! A scenario halves (or otherwise reduces) the capacity of at most `k` arcs.

use std::collections::{BTreeMap, VecDeque};

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{DeriskError, Result};
use crate::features::{FeatureModel, PhiWitness, UncertaintySet};
use crate::model::{Cut, CutProvenance, FeatureEval, LinearExpr, NominalProblem, ScenarioVector, Sense, VarId};

/// Node sets are enumerated explicitly, so inner node counts stay small.
const MAX_INNER_NODES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FlowArc {
    pub tail: String,
    pub head: String,
    pub capacity: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Adversary {
    pub max_arcs: usize,
    /// Fraction of an arc's capacity the adversary removes.
    pub reduction_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InterdictionInstance {
    pub nodes: Vec<String>,
    pub arcs: Vec<FlowArc>,
    pub source: String,
    pub sink: String,
    pub demand: f64,
    pub adversary: Adversary,
}

/// Shortest-augmenting-path max flow. Returns the flow value and the source side of a min cut.
pub fn maxflow(n_nodes: usize, arcs: &[(usize, usize, f64)], s: usize, t: usize) -> (f64, Vec<bool>) {
    // Residual graph with paired forward/backward edges.
    let mut head = Vec::with_capacity(2 * arcs.len());
    let mut cap = Vec::with_capacity(2 * arcs.len());
    let mut adj = vec![Vec::new(); n_nodes];
    for &(u, v, c) in arcs {
        adj[u].push(head.len());
        head.push(v);
        cap.push(c.max(0.0));
        adj[v].push(head.len());
        head.push(u);
        cap.push(0.0);
    }
    let eps = 1e-12;
    let mut total = 0.0;
    loop {
        let mut pred: Vec<Option<usize>> = vec![None; n_nodes];
        let mut seen = vec![false; n_nodes];
        seen[s] = true;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &e in &adj[u] {
                let v = head[e];
                if !seen[v] && cap[e] > eps {
                    seen[v] = true;
                    pred[v] = Some(e);
                    queue.push_back(v);
                }
            }
        }
        if !seen[t] {
            return (total, seen);
        }
        let mut bottleneck = f64::INFINITY;
        let mut v = t;
        while let Some(e) = pred[v] {
            bottleneck = bottleneck.min(cap[e]);
            v = head[e ^ 1];
        }
        let mut v = t;
        while let Some(e) = pred[v] {
            cap[e] -= bottleneck;
            cap[e ^ 1] += bottleneck;
            v = head[e ^ 1];
        }
        total += bottleneck;
    }
}

#[derive(Debug, Clone)]
pub struct InterdictionModel {
    pub instance: InterdictionInstance,
    nominal: NominalProblem,
    tails: Vec<usize>,
    heads: Vec<usize>,
    source: usize,
    sink: usize,
    /// Node index to bit position in the feature mask.
    inner_bit: Vec<Option<usize>>,
    inner: Vec<usize>,
    z: UncertaintySet,
}

impl InterdictionModel {
    pub fn new(instance: InterdictionInstance) -> Result<Self> {
        let bad = |m: String| Err(DeriskError::Instance(m));
        let index: BTreeMap<&str, usize> = instance.nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        if index.len() != instance.nodes.len() {
            return bad("duplicate node names".into());
        }
        let lookup = |n: &str| index.get(n).copied().ok_or_else(|| DeriskError::Instance(format!("unknown node {n}")));
        let source = lookup(&instance.source)?;
        let sink = lookup(&instance.sink)?;
        if source == sink {
            return bad("source and sink coincide".into());
        }
        let mut tails = Vec::new();
        let mut heads = Vec::new();
        for a in &instance.arcs {
            tails.push(lookup(&a.tail)?);
            heads.push(lookup(&a.head)?);
            if !(a.capacity >= 0.0) || !a.cost.is_finite() {
                return bad(format!("arc {}->{} has invalid data", a.tail, a.head));
            }
        }
        let rho = instance.adversary.reduction_fraction;
        if !(rho > 0.0 && rho < 1.0) {
            return bad(format!("reductionFraction must lie in (0, 1), got {rho}"));
        }
        if !(instance.demand > 0.0) {
            return bad("demand must be positive".into());
        }
        let inner: Vec<usize> = (0..instance.nodes.len()).filter(|&i| i != source && i != sink).collect();
        if inner.len() > MAX_INNER_NODES {
            return bad(format!("{} inner nodes exceed the enumeration limit {MAX_INNER_NODES}", inner.len()));
        }
        let mut inner_bit = vec![None; instance.nodes.len()];
        for (b, &i) in inner.iter().enumerate() {
            inner_bit[i] = Some(b);
        }

        let mut nominal = NominalProblem::default();
        let vars: Vec<VarId> = instance
            .arcs
            .iter()
            .map(|a| nominal.add_variable(format!("x({},{})", a.tail, a.head), 0.0, a.capacity))
            .collect();
        nominal.cost = LinearExpr::from_terms(vars.iter().zip(&instance.arcs).map(|(v, a)| (*v, a.cost)));
        for node in 0..instance.nodes.len() {
            if node == sink {
                continue;
            }
            let mut e = LinearExpr::new();
            for (k, v) in vars.iter().enumerate() {
                if tails[k] == node {
                    e.add_term(*v, 1.0);
                }
                if heads[k] == node {
                    e.add_term(*v, -1.0);
                }
            }
            let rhs = if node == source { instance.demand } else { 0.0 };
            nominal.add_constraint(e, Sense::Eq, rhs);
        }

        let mut model = Self { instance, nominal, tails, heads, source, sink, inner_bit, inner, z: UncertaintySet::None };
        let arcs: Vec<(usize, usize, f64)> =
            (0..model.instance.arcs.len()).map(|k| (model.tails[k], model.heads[k], model.instance.arcs[k].capacity)).collect();
        let (flow, _) = maxflow(model.instance.nodes.len(), &arcs, source, sink);
        if flow < model.instance.demand - 1e-9 {
            return bad(format!("max flow {flow} is below demand {}", model.instance.demand));
        }
        model.z = UncertaintySet::Finite { scenarios: model.scenarios() };
        Ok(model)
    }

    pub fn arc_label(&self, k: usize) -> String {
        let a = &self.instance.arcs[k];
        format!("({},{})", a.tail, a.head)
    }

    /// Reduced capacity of arc `k` under `z`; arcs absent from `z` keep their capacity.
    pub fn scenario_capacity(&self, z: Option<&ScenarioVector>, k: usize) -> f64 {
        z.and_then(|z| z.get(&self.arc_label(k))).unwrap_or(self.instance.arcs[k].capacity)
    }

    /// Every arc subset of size at most `k`, in lexicographic order of sorted index lists.
    pub fn scenarios(&self) -> Vec<ScenarioVector> {
        let m = self.instance.arcs.len();
        let keep = 1.0 - self.instance.adversary.reduction_fraction;
        let mut subsets: Vec<Vec<usize>> =
            (0..=self.instance.adversary.max_arcs.min(m)).flat_map(|r| (0..m).combinations(r)).collect();
        subsets.sort();
        subsets
            .into_iter()
            .map(|s| {
                let mut z = ScenarioVector::new();
                for k in s {
                    z.insert(self.arc_label(k), keep * self.instance.arcs[k].capacity);
                }
                z
            })
            .collect()
    }

    fn in_set(&self, mask: usize, node: usize) -> bool {
        node == self.source || self.inner_bit[node].is_some_and(|b| mask >> b & 1 == 1)
    }

    /// Arcs leaving `S = {s} + mask`.
    pub fn out_arcs(&self, mask: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.instance.arcs.len()).filter(move |&k| self.in_set(mask, self.tails[k]) && !self.in_set(mask, self.heads[k]))
    }

    pub fn mask_of(&self, source_side: &[bool]) -> usize {
        self.inner.iter().enumerate().filter(|(_, &i)| source_side[i]).map(|(b, _)| 1 << b).sum()
    }

    fn effective(&self, x: &[f64], z: Option<&ScenarioVector>, k: usize) -> f64 {
        x[k].min(self.scenario_capacity(z, k))
    }

    /// `M - maxflow` under effective capacities, with the source side of a min cut.
    pub fn interdiction_phi(&self, x: &[f64], z: Option<&ScenarioVector>) -> (f64, usize) {
        let arcs: Vec<(usize, usize, f64)> =
            (0..self.instance.arcs.len()).map(|k| (self.tails[k], self.heads[k], self.effective(x, z, k))).collect();
        let (flow, side) = maxflow(self.instance.nodes.len(), &arcs, self.source, self.sink);
        ((self.instance.demand - flow).max(0.0), self.mask_of(&side))
    }

    /// Affine under-estimator of `phi_S(.|z)` that is tight at `x`.
    pub fn linearize(&self, x: &[f64], z: Option<&ScenarioVector>, mask: usize) -> LinearExpr {
        let mut e = LinearExpr::constant(self.instance.demand);
        for k in self.out_arcs(mask) {
            let zc = self.scenario_capacity(z, k);
            if x[k] >= zc {
                e.constant -= zc;
            } else {
                e.add_term(VarId(k), -1.0);
            }
        }
        if e.eval_unchecked(x) < 0.0 {
            LinearExpr::new()
        } else {
            e
        }
    }
}

impl FeatureModel for InterdictionModel {
    fn nominal(&self) -> &NominalProblem {
        &self.nominal
    }

    fn num_features(&self) -> usize {
        1 << self.inner.len()
    }

    fn feature_label(&self, i: usize) -> String {
        let names: Vec<&str> = (0..self.instance.nodes.len())
            .filter(|&n| self.in_set(i, n))
            .map(|n| self.instance.nodes[n].as_str())
            .collect();
        format!("{{{}}}", names.join(","))
    }

    fn uncertainty(&self) -> &UncertaintySet {
        &self.z
    }

    fn evaluate(&self, x: &[f64], z: Option<&ScenarioVector>) -> Result<Vec<f64>> {
        let m = self.instance.arcs.len();
        if x.len() < m {
            return Err(DeriskError::MissingVariable(VarId(x.len())));
        }
        let eff: Vec<f64> = (0..m).map(|k| self.effective(x, z, k)).collect();
        Ok((0..self.num_features())
            .map(|mask| {
                let cap: f64 = self.out_arcs(mask).map(|k| eff[k]).sum();
                (self.instance.demand - cap).max(0.0)
            })
            .collect())
    }

    fn exact_phi(&self, x: &[f64]) -> Result<Option<PhiWitness>> {
        let (z, eval): (Option<ScenarioVector>, FeatureEval) = self.greedy_argmax(x)?;
        Ok(Some(PhiWitness {
            value: eval.phi_max,
            z,
            feature: eval.argmax_id,
            feature_label: self.feature_label(eval.argmax_id),
        }))
    }

    fn separation_cuts(&self, x: &[f64], z: Option<&ScenarioVector>, pi: &[f64], iteration: usize) -> Result<Vec<Cut>> {
        let mut lower = LinearExpr::new();
        for (mask, &p) in pi.iter().enumerate() {
            if p > 0.0 {
                lower.add_expr(&self.linearize(x, z, mask), p);
            }
        }
        let prov = CutProvenance { iteration, pi: pi.to_vec(), z: z.cloned() };
        Ok(vec![Cut::from_lower_bound(&lower, prov)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diamond() -> InterdictionModel {
        let arc = |t: &str, h: &str, c: f64| FlowArc { tail: t.into(), head: h.into(), capacity: c, cost: 1.0 };
        InterdictionModel::new(InterdictionInstance {
            nodes: ["s", "a", "b", "t"].map(String::from).to_vec(),
            arcs: vec![arc("s", "a", 10.0), arc("s", "b", 10.0), arc("a", "t", 10.0), arc("b", "t", 10.0)],
            source: "s".into(),
            sink: "t".into(),
            demand: 15.0,
            adversary: Adversary { max_arcs: 1, reduction_fraction: 0.5 },
        })
        .unwrap()
    }

    #[test]
    fn maxflow_on_diamond() {
        let (f, side) = maxflow(4, &[(0, 1, 3.0), (0, 2, 2.0), (1, 3, 2.0), (2, 3, 5.0), (1, 2, 1.0)], 0, 3);
        assert!((f - 5.0).abs() < 1e-12);
        assert!(side[0] && !side[3]);
    }

    #[test]
    fn unreduced_flow_has_no_risk() {
        let m = diamond();
        let x = [7.5, 7.5, 7.5, 7.5];
        assert_eq!(m.interdiction_phi(&x, None).0, 0.0);
        assert!(m.evaluate(&x, None).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn one_halved_arc_loses_flow() {
        let m = diamond();
        let x = [7.5, 7.5, 7.5, 7.5];
        let w = m.exact_phi(&x).unwrap().unwrap();
        assert!((w.value - 2.5).abs() < 1e-12);
        assert_eq!(m.scenarios().len(), 5);
    }

    #[test]
    fn disconnected_network_loses_everything() {
        let m = diamond();
        let (phi, mask) = m.interdiction_phi(&[0.0; 4], None);
        assert_eq!(phi, 15.0);
        assert_eq!(mask, 0);
    }

    #[test]
    fn linearization_is_tight_and_below() {
        let m = diamond();
        let x = [7.5, 7.5, 7.5, 7.5];
        let mut z = ScenarioVector::new();
        z.insert("(s,a)", 5.0);
        let values = m.evaluate(&x, Some(&z)).unwrap();
        for mask in 0..4 {
            let lin = m.linearize(&x, Some(&z), mask);
            assert!((lin.eval_unchecked(&x) - values[mask]).abs() < 1e-12);
            let y = [10.0, 5.0, 10.0, 5.0];
            let vy = m.evaluate(&y, Some(&z)).unwrap();
            assert!(lin.eval_unchecked(&y) <= vy[mask] + 1e-12);
        }
    }
}

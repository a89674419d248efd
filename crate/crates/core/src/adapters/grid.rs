//! DC optimal power flow with thermal branch risk `T = r P^2`.

use std::collections::BTreeMap;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{DeriskError, Result};
use crate::features::{FeatureModel, PhiWitness, UncertaintySet};
use crate::kernels::{ball_direction, budget_top_n, top_k_indices};
use crate::model::{argmax, Cut, CutProvenance, LinearExpr, NominalProblem, ScenarioVector, Sense, VarId};

/// Tuple features are enumerated explicitly up to this many.
const MAX_TUPLES: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Bus {
    pub name: String,
    #[serde(default)]
    pub demand: f64,
    #[serde(default)]
    pub gen_min: f64,
    #[serde(default)]
    pub gen_max: f64,
    /// Linear generation cost per unit.
    #[serde(default)]
    pub gen_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Branch {
    pub from: String,
    pub to: String,
    pub reactance: f64,
    pub resistance: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum GridRisk {
    /// `max_b T_b`.
    Max,
    /// `max_z max_b (1 + z_b) T_b` over `{0 <= z <= 1, sum z <= n}`.
    Budget { n: usize },
    /// Average of the `k` largest `T_b`.
    #[serde(rename_all = "camelCase")]
    TopK { k: usize, pool_top: usize, n_cuts: usize },
    /// Average of the `k` largest `(1 + z_b) T_b` over the unit ball.
    #[serde(rename_all = "camelCase")]
    Ball { k: usize, pool_top: usize, n_cuts: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GridInstance {
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub slack: String,
    pub risk: GridRisk,
}

/// `(1/k) sum` of the `k` largest values and the attaining tuple (descending).
pub fn ordered_topk_features(t: &[f64], k: usize) -> Result<(f64, Vec<usize>)> {
    if k == 0 || k > t.len() {
        return Err(DeriskError::Instance(format!("need 1 <= k <= {}, got {k}", t.len())));
    }
    let tuple = top_k_indices(t, k);
    let value = tuple.iter().map(|&i| t[i]).sum::<f64>() / k as f64;
    Ok((value, tuple))
}

#[derive(Debug, Clone)]
pub struct GridModel {
    pub instance: GridInstance,
    nominal: NominalProblem,
    flows: Vec<VarId>,
    generators: Vec<(usize, VarId)>,
    tuples: Vec<Vec<usize>>,
    z: UncertaintySet,
}

impl GridModel {
    pub fn new(instance: GridInstance) -> Result<Self> {
        let bad = |m: String| Err(DeriskError::Instance(m));
        let index: BTreeMap<&str, usize> = instance.buses.iter().enumerate().map(|(i, b)| (b.name.as_str(), i)).collect();
        if index.len() != instance.buses.len() || instance.buses.is_empty() {
            return bad("bus names must be unique and nonempty".into());
        }
        let lookup = |n: &str| index.get(n).copied().ok_or_else(|| DeriskError::Instance(format!("unknown bus {n}")));
        let slack = lookup(&instance.slack)?;
        let mut ends = Vec::new();
        for br in &instance.branches {
            let (f, t) = (lookup(&br.from)?, lookup(&br.to)?);
            if f == t || !(br.reactance > 0.0) || !(br.resistance > 0.0) || !(br.limit > 0.0) {
                return bad(format!("branch {}-{} has invalid data", br.from, br.to));
            }
            ends.push((f, t));
        }
        if instance.branches.is_empty() {
            return bad("grid has no branches".into());
        }
        let demand: f64 = instance.buses.iter().map(|b| b.demand).sum();
        let supply: f64 = instance.buses.iter().map(|b| b.gen_max).sum();
        if demand > supply {
            return bad(format!("demand {demand} exceeds generation capacity {supply}"));
        }
        if instance.buses.iter().any(|b| b.gen_min > b.gen_max) {
            return bad("genMin exceeds genMax".into());
        }
        // Connectivity by union-find.
        let mut parent: Vec<usize> = (0..instance.buses.len()).collect();
        fn find(p: &mut [usize], i: usize) -> usize {
            if p[i] != i {
                let r = find(p, p[i]);
                p[i] = r;
            }
            p[i]
        }
        for &(f, t) in &ends {
            let (a, b) = (find(&mut parent, f), find(&mut parent, t));
            parent[a] = b;
        }
        let root = find(&mut parent, 0);
        if (0..instance.buses.len()).any(|i| find(&mut parent, i) != root) {
            return bad("grid is not connected".into());
        }

        let mut nominal = NominalProblem::default();
        let mut generators = Vec::new();
        for (i, b) in instance.buses.iter().enumerate() {
            if b.gen_max > 0.0 {
                generators.push((i, nominal.add_variable(format!("p[{}]", b.name), b.gen_min, b.gen_max)));
            }
        }
        let angles: Vec<VarId> = instance
            .buses
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let (lo, hi) = if i == slack { (0.0, 0.0) } else { (f64::NEG_INFINITY, f64::INFINITY) };
                nominal.add_variable(format!("theta[{}]", b.name), lo, hi)
            })
            .collect();
        let flows: Vec<VarId> = instance
            .branches
            .iter()
            .map(|br| nominal.add_variable(format!("P[{}-{}]", br.from, br.to), -br.limit, br.limit))
            .collect();
        nominal.cost = LinearExpr::from_terms(generators.iter().map(|&(i, v)| (v, instance.buses[i].gen_cost)));
        for (k, br) in instance.branches.iter().enumerate() {
            let (f, t) = ends[k];
            let e = LinearExpr::new()
                .with(flows[k], 1.0)
                .with(angles[f], -1.0 / br.reactance)
                .with(angles[t], 1.0 / br.reactance);
            nominal.add_constraint(e, Sense::Eq, 0.0);
        }
        for (i, b) in instance.buses.iter().enumerate() {
            let mut e = LinearExpr::new();
            for &(g, v) in &generators {
                if g == i {
                    e.add_term(v, 1.0);
                }
            }
            for (k, &(f, t)) in ends.iter().enumerate() {
                if f == i {
                    e.add_term(flows[k], -1.0);
                }
                if t == i {
                    e.add_term(flows[k], 1.0);
                }
            }
            nominal.add_constraint(e, Sense::Eq, b.demand);
        }

        let nb = instance.branches.len();
        let (z, tuples) = match instance.risk {
            GridRisk::Max => (UncertaintySet::None, Vec::new()),
            GridRisk::Budget { n } => {
                if n == 0 {
                    return bad("budget n must be at least 1".into());
                }
                (UncertaintySet::Budget { n }, Vec::new())
            }
            GridRisk::TopK { k, pool_top, n_cuts } | GridRisk::Ball { k, pool_top, n_cuts } => {
                if k == 0 || k > nb || pool_top < k || n_cuts == 0 {
                    return bad(format!("tuple risk needs 1 <= k <= poolTop and k <= {nb}, nCuts >= 1"));
                }
                let count = binomial(nb, k);
                if count > MAX_TUPLES {
                    return bad(format!("{count} tuples exceed the enumeration limit {MAX_TUPLES}"));
                }
                let z = if matches!(instance.risk, GridRisk::Ball { .. }) { UncertaintySet::Ball } else { UncertaintySet::None };
                (z, (0..nb).combinations(k).collect())
            }
        };
        Ok(Self { instance, nominal, flows, generators, tuples, z })
    }

    pub fn flows(&self) -> &[VarId] {
        &self.flows
    }

    pub fn generators(&self) -> &[(usize, VarId)] {
        &self.generators
    }

    pub fn branch_label(&self, k: usize) -> String {
        let b = &self.instance.branches[k];
        format!("{}-{}", b.from, b.to)
    }

    /// Thermal metric `r P^2` per branch.
    pub fn thermal(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.flows
            .iter()
            .zip(&self.instance.branches)
            .map(|(v, b)| {
                let p = *x.get(v.index()).ok_or(DeriskError::MissingVariable(*v))?;
                Ok(b.resistance * p * p)
            })
            .collect()
    }

    fn multipliers(&self, z: Option<&ScenarioVector>) -> Vec<f64> {
        (0..self.instance.branches.len())
            .map(|k| 1.0 + z.and_then(|z| z.get(&self.branch_label(k))).unwrap_or(0.0))
            .collect()
    }

    fn scenario(&self, zv: &[f64]) -> ScenarioVector {
        let mut z = ScenarioVector::new();
        for (k, v) in zv.iter().enumerate() {
            z.insert(self.branch_label(k), *v);
        }
        z
    }

    fn tuple_size_or_one(&self) -> usize {
        match self.instance.risk {
            GridRisk::TopK { k, .. } | GridRisk::Ball { k, .. } => k,
            _ => 1,
        }
    }

    /// Tangent of `(1 + z_b) r P_b^2` at the current flow.
    fn tangent(&self, x: &[f64], k: usize, mult: f64) -> LinearExpr {
        let v = self.flows[k];
        let r = self.instance.branches[k].resistance;
        let p = x[v.index()];
        LinearExpr::constant(-mult * r * p * p).with(v, 2.0 * mult * r * p)
    }

    /// Cuts for `nCuts` tuples drawn from the `poolTop` heaviest branches, the argmax tuple first.
    pub fn grid_tuple_separation(
        &self,
        x: &[f64],
        z: Option<&ScenarioVector>,
        k: usize,
        pool_top: usize,
        n_cuts: usize,
        iteration: usize,
    ) -> Result<Vec<Cut>> {
        let mult = self.multipliers(z);
        let weighted: Vec<f64> = self.thermal(x)?.iter().zip(&mult).map(|(t, m)| t * m).collect();
        let pool = top_k_indices(&weighted, pool_top.min(weighted.len()));
        let mut cuts = Vec::new();
        for positions in (0..pool.len()).combinations(k).take(n_cuts) {
            let tuple: Vec<usize> = positions.iter().map(|&p| pool[p]).collect();
            let mut lower = LinearExpr::new();
            for &b in &tuple {
                lower.add_expr(&self.tangent(x, b, mult[b]), 1.0 / k as f64);
            }
            let mut sorted = tuple.clone();
            sorted.sort_unstable();
            let mut pi = vec![0.0; self.tuples.len().max(1)];
            if let Ok(pos) = self.tuples.binary_search(&sorted) {
                pi[pos] = 1.0;
            }
            cuts.push(Cut::from_lower_bound(&lower, CutProvenance { iteration, pi, z: z.cloned() }));
        }
        Ok(cuts)
    }
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > usize::MAX as u128 {
            return usize::MAX;
        }
    }
    acc as usize
}

impl FeatureModel for GridModel {
    fn nominal(&self) -> &NominalProblem {
        &self.nominal
    }

    fn num_features(&self) -> usize {
        if self.tuples.is_empty() {
            self.instance.branches.len()
        } else {
            self.tuples.len()
        }
    }

    fn feature_label(&self, i: usize) -> String {
        if self.tuples.is_empty() {
            self.branch_label(i)
        } else {
            self.tuples[i].iter().map(|&b| self.branch_label(b)).join("+")
        }
    }

    fn uncertainty(&self) -> &UncertaintySet {
        &self.z
    }

    fn evaluate(&self, x: &[f64], z: Option<&ScenarioVector>) -> Result<Vec<f64>> {
        let weighted: Vec<f64> = self.thermal(x)?.iter().zip(self.multipliers(z)).map(|(t, m)| t * m).collect();
        if self.tuples.is_empty() {
            return Ok(weighted);
        }
        let k = self.tuple_size_or_one() as f64;
        Ok(self.tuples.iter().map(|s| s.iter().map(|&b| weighted[b]).sum::<f64>() / k).collect())
    }

    fn scenario_base(&self, x: &[f64]) -> Result<Vec<(String, f64)>> {
        Ok(self.thermal(x)?.into_iter().enumerate().map(|(k, t)| (self.branch_label(k), t)).collect())
    }

    fn exact_phi(&self, x: &[f64]) -> Result<Option<PhiWitness>> {
        let t = self.thermal(x)?;
        let (z, value, feature) = match self.instance.risk {
            GridRisk::Max => {
                let (i, v) = argmax(&t).ok_or(DeriskError::Empty("branches"))?;
                (None, v, i)
            }
            GridRisk::Budget { n } => {
                let (zv, _) = budget_top_n(&t, n);
                let (i, v) = argmax(&t).ok_or(DeriskError::Empty("branches"))?;
                (Some(self.scenario(&zv)), 2.0 * v, i)
            }
            GridRisk::TopK { k, .. } => {
                let (v, mut tuple) = ordered_topk_features(&t, k)?;
                tuple.sort_unstable();
                (None, v, self.tuples.binary_search(&tuple).unwrap_or(0))
            }
            GridRisk::Ball { k, .. } => {
                let (zv, _) = ball_direction(&t, k)?;
                let mut tuple = top_k_indices(&t, k);
                let sum: f64 = tuple.iter().map(|&b| t[b]).sum();
                let norm = tuple.iter().map(|&b| t[b] * t[b]).sum::<f64>().sqrt();
                tuple.sort_unstable();
                (Some(self.scenario(&zv)), (sum + norm) / k as f64, self.tuples.binary_search(&tuple).unwrap_or(0))
            }
        };
        Ok(Some(PhiWitness { value, z, feature, feature_label: self.feature_label(feature) }))
    }

    fn greedy_argmax(&self, x: &[f64]) -> Result<(Option<ScenarioVector>, crate::model::FeatureEval)> {
        let w = self.exact_phi(x)?.ok_or(DeriskError::Empty("branches"))?;
        let eval = crate::model::FeatureEval::from_values(self.evaluate(x, w.z.as_ref())?)?;
        Ok((w.z, eval))
    }

    fn separation_cuts(&self, x: &[f64], z: Option<&ScenarioVector>, pi: &[f64], iteration: usize) -> Result<Vec<Cut>> {
        match self.instance.risk {
            GridRisk::TopK { k, pool_top, n_cuts } | GridRisk::Ball { k, pool_top, n_cuts } => {
                self.grid_tuple_separation(x, z, k, pool_top, n_cuts, iteration)
            }
            GridRisk::Max | GridRisk::Budget { .. } => {
                let mult = self.multipliers(z);
                let mut lower = LinearExpr::new();
                for (b, &p) in pi.iter().enumerate() {
                    if p > 0.0 {
                        lower.add_expr(&self.tangent(x, b, mult[b]), p);
                    }
                }
                Ok(vec![Cut::from_lower_bound(&lower, CutProvenance { iteration, pi: pi.to_vec(), z: z.cloned() })])
            }
        }
    }

    fn separable_scenarios(&self) -> bool {
        matches!(self.instance.risk, GridRisk::Budget { .. })
    }

    fn tuple_size(&self) -> usize {
        self.tuple_size_or_one()
    }

    fn alpha_grid_count(&self) -> usize {
        self.instance.branches.len()
    }
}

//! Synthetic multi-commodity shipping plan with concentration risk per activity.
//!
//! An activity is a (link, period) pair. Its feature is the priority-weighted
//! amount shipped on it, so every feature is linear in the plan.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DeriskError, Result};
use crate::features::{FeatureModel, PhiWitness, UncertaintySet};
use crate::lp::solve_lp;
use crate::model::{argmax, Cut, CutProvenance, LinearExpr, MasterProblem, NominalProblem, ScenarioVector, Sense, VarId};

const MAX_RETRIES: u64 = 100;
const TOP_SHARE: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Activity {
    pub link: usize,
    pub period: usize,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Commodity {
    pub priority: f64,
    /// Weight that must be shipped.
    pub demand: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Shipment {
    pub commodity: usize,
    pub activity: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConcentrationInstance {
    pub activities: Vec<Activity>,
    pub commodities: Vec<Commodity>,
    pub shipments: Vec<Shipment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GeneratorConfig {
    pub seed: u64,
    pub links: usize,
    pub periods: usize,
    pub commodities: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { seed: 7, links: 8, periods: 5, commodities: 12 }
    }
}

/// Share of total feature weight carried by the top `ceil(10%)` activities.
pub fn top_decile_share(phi: &[f64]) -> f64 {
    let total: f64 = phi.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let mut sorted = phi.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = (phi.len() as f64 * 0.1).ceil() as usize;
    sorted[..k.max(1)].iter().sum::<f64>() / total
}

/// Cumulative weight of the top-`K` activities for `K = 1..n`.
pub fn top_k_curve(phi: &[f64]) -> Vec<f64> {
    let mut sorted = phi.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

fn draw(cfg: &GeneratorConfig, seed: u64) -> ConcentrationInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_act = cfg.links * cfg.periods;
    let commodities: Vec<Commodity> = (0..cfg.commodities)
        .map(|_| Commodity { priority: rng.gen_range(1..=5) as f64, demand: rng.gen_range(5..=20) as f64 })
        .collect();
    let total: f64 = commodities.iter().map(|c| c.demand).sum();
    let n_hubs = ((n_act as f64) * 0.1).ceil() as usize;
    let mut order: Vec<usize> = (0..n_act).collect();
    order.shuffle(&mut rng);
    let hubs = &order[..n_hubs];
    let activities: Vec<Activity> = (0..n_act)
        .map(|a| Activity {
            link: a / cfg.periods,
            period: a % cfg.periods,
            capacity: if hubs.contains(&a) { total } else { (total / 4.0).round() },
        })
        .collect();
    let mut shipments = Vec::new();
    for c in 0..cfg.commodities {
        let hub = hubs[rng.gen_range(0..hubs.len())];
        shipments.push(Shipment { commodity: c, activity: hub, cost: rng.gen_range(10..=14) as f64 });
        for a in 0..n_act {
            if a != hub && rng.gen_bool(0.3) {
                let cost = if hubs.contains(&a) { rng.gen_range(10..=14) } else { rng.gen_range(12..=20) };
                shipments.push(Shipment { commodity: c, activity: a, cost: cost as f64 });
            }
        }
    }
    shipments.sort_by_key(|s| (s.commodity, s.activity));
    ConcentrationInstance { activities, commodities, shipments }
}

/// Deterministic instance whose nominal plan puts at least 40% of the weight on the top 10% of activities.
pub fn generate(cfg: &GeneratorConfig) -> Result<ConcentrationInstance> {
    if cfg.links * cfg.periods > 50 || cfg.commodities > 20 || cfg.links * cfg.periods == 0 || cfg.commodities == 0 {
        return Err(DeriskError::Config("generator sizes must be 1..=50 activities and 1..=20 commodities".into()));
    }
    for attempt in 0..MAX_RETRIES {
        let inst = draw(cfg, cfg.seed.wrapping_add(attempt));
        let model = ConcentrationModel::new(inst.clone())?;
        let sol = solve_lp(&MasterProblem::from_nominal(model.nominal(), 1.0))?;
        if !sol.is_optimal() {
            continue;
        }
        let phi = model.evaluate(&sol.x, None)?;
        if top_decile_share(&phi) >= TOP_SHARE {
            return Ok(inst);
        }
    }
    Err(DeriskError::Instance(format!("no concentrated instance within {MAX_RETRIES} retries")))
}

#[derive(Debug, Clone)]
pub struct ConcentrationModel {
    pub instance: ConcentrationInstance,
    nominal: NominalProblem,
    z: UncertaintySet,
}

impl ConcentrationModel {
    pub fn new(instance: ConcentrationInstance) -> Result<Self> {
        let (na, nc) = (instance.activities.len(), instance.commodities.len());
        if na == 0 || nc == 0 {
            return Err(DeriskError::Instance("need at least one activity and one commodity".into()));
        }
        if instance.shipments.iter().any(|s| s.activity >= na || s.commodity >= nc) {
            return Err(DeriskError::Instance("shipment references an unknown activity or commodity".into()));
        }
        let mut nominal = NominalProblem::default();
        for (k, s) in instance.shipments.iter().enumerate() {
            let v = nominal.add_variable(format!("x[{},{}]", s.commodity, s.activity), 0.0, f64::INFINITY);
            debug_assert_eq!(v.index(), k);
        }
        nominal.cost =
            LinearExpr::from_terms(instance.shipments.iter().enumerate().map(|(k, s)| (VarId(k), s.cost)));
        for (c, com) in instance.commodities.iter().enumerate() {
            let e = LinearExpr::from_terms(
                instance.shipments.iter().enumerate().filter(|(_, s)| s.commodity == c).map(|(k, _)| (VarId(k), 1.0)),
            );
            if e.is_empty() {
                return Err(DeriskError::Instance(format!("commodity {c} has no shipment option")));
            }
            nominal.add_constraint(e, Sense::Eq, com.demand);
        }
        for (a, act) in instance.activities.iter().enumerate() {
            let e = LinearExpr::from_terms(
                instance.shipments.iter().enumerate().filter(|(_, s)| s.activity == a).map(|(k, _)| (VarId(k), 1.0)),
            );
            if !e.is_empty() {
                nominal.add_constraint(e, Sense::Le, act.capacity);
            }
        }
        Ok(Self { instance, nominal, z: UncertaintySet::None })
    }

    /// `phi_a` as a linear expression in the shipments.
    pub fn feature_expr(&self, a: usize) -> LinearExpr {
        LinearExpr::from_terms(
            self.instance
                .shipments
                .iter()
                .enumerate()
                .filter(|(_, s)| s.activity == a)
                .map(|(k, s)| (VarId(k), self.instance.commodities[s.commodity].priority)),
        )
    }
}

impl FeatureModel for ConcentrationModel {
    fn nominal(&self) -> &NominalProblem {
        &self.nominal
    }

    fn num_features(&self) -> usize {
        self.instance.activities.len()
    }

    fn feature_label(&self, i: usize) -> String {
        let a = &self.instance.activities[i];
        format!("L{}@{}", a.link, a.period)
    }

    fn uncertainty(&self) -> &UncertaintySet {
        &self.z
    }

    fn evaluate(&self, x: &[f64], _z: Option<&ScenarioVector>) -> Result<Vec<f64>> {
        if x.len() < self.instance.shipments.len() {
            return Err(DeriskError::MissingVariable(VarId(x.len())));
        }
        let mut phi = vec![0.0; self.instance.activities.len()];
        for (k, s) in self.instance.shipments.iter().enumerate() {
            phi[s.activity] += self.instance.commodities[s.commodity].priority * x[k];
        }
        Ok(phi)
    }

    fn exact_phi(&self, x: &[f64]) -> Result<Option<PhiWitness>> {
        let v = self.evaluate(x, None)?;
        let (i, value) = argmax(&v).ok_or(DeriskError::Empty("activities"))?;
        Ok(Some(PhiWitness { value, z: None, feature: i, feature_label: self.feature_label(i) }))
    }

    fn separation_cuts(&self, _x: &[f64], z: Option<&ScenarioVector>, pi: &[f64], iteration: usize) -> Result<Vec<Cut>> {
        let mut lower = LinearExpr::new();
        for (a, &p) in pi.iter().enumerate() {
            if p > 0.0 {
                lower.add_expr(&self.feature_expr(a), p);
            }
        }
        Ok(vec![Cut::from_lower_bound(&lower, CutProvenance { iteration, pi: pi.to_vec(), z: z.cloned() })])
    }
}

use std::path::PathBuf;
use std::sync::Arc;

use derisk_core::adapters::concentration::{self, top_decile_share, top_k_curve};
use derisk_core::adapters::interdiction::{Adversary, FlowArc};
use derisk_core::adapters::{GridInstance, GridModel, InterdictionInstance, InterdictionModel, QueueingModel};
use derisk_core::engine::{cut_validity_slack, sample_feasible_points};
use derisk_core::io::{self, Problem};
use derisk_core::kernels::greedy_boost;
use derisk_core::lp::{refine_convex, BoundedSimplex, ConvexFunction, ConvexTerm, RefineOptions};
use derisk_core::{
    evaluate_cost, run, FeatureModel, LinearExpr, MasterProblem, RunConfig, ScenarioVector, Sense, VarId,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn instance_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../instances").join(name)
}

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn bundled_interdiction() -> InterdictionModel {
    match io::load_instance(&instance_path("interdiction.json")).unwrap().problem {
        Problem::Interdiction(i) => InterdictionModel::new(i).unwrap(),
        other => panic!("unexpected family {}", other.family()),
    }
}

fn bundled_queueing() -> QueueingModel {
    match io::load_instance(&instance_path("queueing.json")).unwrap().problem {
        Problem::Queueing(i) => QueueingModel::new(i).unwrap(),
        other => panic!("unexpected family {}", other.family()),
    }
}

fn nominal_x(model: &dyn FeatureModel) -> Vec<f64> {
    let sol = derisk_core::solve_lp(&MasterProblem::from_nominal(model.nominal(), 1.0)).unwrap();
    sol.x[..model.nominal().num_vars()].to_vec()
}

// ---------------------------------------------------------------- queueing

#[test]
fn queueing_cost_and_risk_at_the_nominal_point() {
    let m = bundled_queueing();
    let mut x = vec![70.0, 30.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    m.complete_point(&mut x);
    let master = MasterProblem::from_nominal(m.nominal(), 1.0);
    assert_eq!(evaluate_cost(&master, &x).unwrap(), 220.0);
    let w = m.exact_phi(&x).unwrap().unwrap();
    assert!((w.value - 100.0).abs() < 1e-9);
    assert_eq!(w.feature_label, "arc1");
}

#[test]
fn queueing_features_match_the_delay_formula() {
    let m = bundled_queueing();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let caps = [70.0, 31.0, 50.0, 50.0];
    for _ in 0..100 {
        let x: Vec<f64> = caps.iter().map(|u| rng.gen_range(0.0..*u)).chain([0.0; 4]).collect();
        let v = m.evaluate(&x, None).unwrap();
        for i in 0..4 {
            assert!((v[i] - caps[i] / (caps[i] + 0.7 - x[i])).abs() < 1e-12);
        }
    }
    let zero = m.evaluate(&[0.0; 8], None).unwrap();
    assert!((zero[1] - 31.0 / 31.7).abs() < 1e-15);
}

#[test]
fn queueing_nominal_master_solves_to_the_cheapest_routing() {
    let m = bundled_queueing();
    let x = nominal_x(&m);
    assert!((x[0] - 70.0).abs() < 1e-9 && (x[1] - 30.0).abs() < 1e-9);
    assert!(x[2].abs() < 1e-9 && x[3].abs() < 1e-9);
}

#[test]
fn refined_master_meets_the_delay_terms() {
    let m = bundled_queueing();
    let mut master = MasterProblem::from_nominal(m.nominal(), 0.22);
    // A cut on the proxies makes the delays matter.
    let lower = LinearExpr::from_terms(m.proxies().iter().map(|q| (*q, 0.25)));
    derisk_core::add_cut(&mut master, derisk_core::Cut::from_lower_bound(&lower, Default::default()));
    let opts = RefineOptions { tol: 1e-4, ..RefineOptions::default() };
    let sol = refine_convex(&mut master, &m.convex_terms(), &opts, &BoundedSimplex::default()).unwrap();
    for (x, q) in m.flows().iter().zip(m.proxies()) {
        let u = [70.0, 31.0, 50.0, 50.0][x.index()];
        let mu = u / (u + 0.7 - sol.x[x.index()]);
        assert!(sol.x[q.index()] - mu >= -1e-4, "proxy {} below delay {mu}", sol.x[q.index()]);
    }
}

struct Parabola {
    var: VarId,
    r: f64,
}

impl ConvexFunction for Parabola {
    fn value(&self, x: &[f64]) -> f64 {
        self.r * x[self.var.index()].powi(2)
    }
    fn gradient(&self, x: &[f64]) -> Vec<(VarId, f64)> {
        vec![(self.var, 2.0 * self.r * x[self.var.index()])]
    }
}

struct Delay1;

impl ConvexFunction for Delay1 {
    fn value(&self, x: &[f64]) -> f64 {
        1.0 / (2.0 - x[0])
    }
    fn gradient(&self, x: &[f64]) -> Vec<(VarId, f64)> {
        vec![(VarId(0), 1.0 / (2.0 - x[0]).powi(2))]
    }
}

#[test]
fn tangent_constraints() {
    // q >= 0.5 + 0.25 x for u / (u + eps - x) with u = eps = 1 at x = 0.
    let t = ConvexTerm::new(VarId(1), Arc::new(Delay1)).tangent_constraint(&[0.0, 0.0]);
    assert_eq!(t.sense, Sense::Ge);
    assert!((t.expr.coef(VarId(0)) + 0.25).abs() < 1e-15);
    assert!((t.expr.coef(VarId(1)) - 1.0).abs() < 1e-15);
    assert!((t.rhs - 0.5).abs() < 1e-15);
    // q >= 12 P - 18 for 2 P^2 at P = 3.
    let t = ConvexTerm::new(VarId(1), Arc::new(Parabola { var: VarId(0), r: 2.0 })).tangent_constraint(&[3.0, 0.0]);
    assert!((t.expr.coef(VarId(0)) + 12.0).abs() < 1e-12);
    assert!((t.rhs + 18.0).abs() < 1e-12);
}

// ------------------------------------------------------------ interdiction

fn nominal_adversary() -> ScenarioVector {
    let mut z = ScenarioVector::new();
    z.insert("(s,2)", 35.0);
    z.insert("(s,3)", 20.0);
    z
}

#[test]
fn interdiction_nominal_and_adversary() {
    let m = bundled_interdiction();
    let x = nominal_x(&m);
    let master = MasterProblem::from_nominal(m.nominal(), 1.0);
    assert!((evaluate_cost(&master, &x).unwrap() - 560.0).abs() < 1e-9);
    let (phi, mask) = m.interdiction_phi(&x, Some(&nominal_adversary()));
    assert!((phi - 45.0).abs() < 1e-9);
    assert_eq!(mask, 0);
    let b = greedy_boost(&m, &x, 1.0).unwrap();
    assert_eq!(b.z, Some(nominal_adversary()));
    let best = b.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!((best - 45.0).abs() < 1e-9);
    assert_eq!(m.exact_phi(&x).unwrap().unwrap().feature_label, "{s}");
}

#[test]
fn interdiction_first_cut() {
    let m = bundled_interdiction();
    let x = nominal_x(&m);
    let cut = derisk_core::Cut::from_lower_bound(&m.linearize(&x, Some(&nominal_adversary()), 0), Default::default());
    // phiL + x_{s,4} >= 45
    assert!((cut.rhs - 45.0).abs() < 1e-12);
    assert_eq!(cut.x_coeffs.terms().collect::<Vec<_>>(), vec![(VarId(2), 1.0)]);
}

#[test]
fn interdiction_deep_cut_keeps_unsaturated_arcs_only() {
    let m = bundled_interdiction();
    let x = [60.0, 20.0, 20.0, 10.0, 0.0, 50.0, 30.0, 20.0, 0.0, 30.0, 50.0, 50.0];
    let mut z = ScenarioVector::new();
    z.insert("(2,5)", 25.0);
    z.insert("(3,6)", 20.0);
    // S = {s, 2, 3, 4}: inner nodes 2, 3, 4 are bits 0..3.
    let lin = m.linearize(&x, Some(&z), 0b111);
    let cut = derisk_core::Cut::from_lower_bound(&lin, Default::default());
    assert_eq!(cut.x_coeffs.terms().collect::<Vec<_>>(), vec![(VarId(7), 1.0)]);
    assert!((cut.rhs - 55.0).abs() < 1e-12);
}

#[test]
fn interdiction_budget_monotonicity_and_no_adversary() {
    let base = match io::load_instance(&instance_path("interdiction.json")).unwrap().problem {
        Problem::Interdiction(i) => i,
        _ => unreachable!(),
    };
    let with_k = |k: usize| {
        let mut i = base.clone();
        i.adversary.max_arcs = k;
        InterdictionModel::new(i).unwrap()
    };
    let x = nominal_x(&with_k(2));
    let phi = |k: usize| with_k(k).exact_phi(&x).unwrap().unwrap().value;
    assert_eq!(phi(0), 0.0);
    assert!(phi(2) >= phi(1) && phi(1) >= phi(0));
}

fn brute_force_phi(inst: &InterdictionInstance, x: &[f64], z: &ScenarioVector) -> f64 {
    let inner: Vec<&String> = inst.nodes.iter().filter(|n| **n != inst.source && **n != inst.sink).collect();
    let mut best = f64::NEG_INFINITY;
    for mask in 0..(1usize << inner.len()) {
        let in_s = |n: &String| *n == inst.source || inner.iter().position(|m| *m == n).is_some_and(|b| mask >> b & 1 == 1);
        let cap: f64 = inst
            .arcs
            .iter()
            .enumerate()
            .filter(|(_, a)| in_s(&a.tail) && !in_s(&a.head))
            .map(|(k, a)| x[k].min(z.get(&format!("({},{})", a.tail, a.head)).unwrap_or(a.capacity)))
            .sum();
        best = best.max(inst.demand - cap);
    }
    best.max(0.0)
}

#[test]
fn interdiction_phi_matches_cut_enumeration_on_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut checked = 0;
    while checked < 50 {
        let n = rng.gen_range(3..=8);
        let nodes: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
        let mut arcs = Vec::new();
        for u in 0..n {
            for v in 0..n {
                if u != v && v != 0 && u != n - 1 && rng.gen_bool(0.4) {
                    arcs.push(FlowArc {
                        tail: nodes[u].clone(),
                        head: nodes[v].clone(),
                        capacity: rng.gen_range(1..20) as f64,
                        cost: 1.0,
                    });
                }
            }
        }
        let inst = InterdictionInstance {
            nodes: nodes.clone(),
            arcs,
            source: nodes[0].clone(),
            sink: nodes[n - 1].clone(),
            demand: 1.0,
            adversary: Adversary { max_arcs: 2, reduction_fraction: 0.5 },
        };
        let Ok(model) = InterdictionModel::new(inst.clone()) else { continue };
        let scenarios = model.scenarios();
        for _ in 0..3 {
            let x: Vec<f64> = inst.arcs.iter().map(|a| rng.gen_range(0.0..=a.capacity)).collect();
            let z = &scenarios[rng.gen_range(0..scenarios.len())];
            let (phi, _) = model.interdiction_phi(&x, Some(z));
            let brute = brute_force_phi(&inst, &x, z);
            assert!((phi - brute).abs() < 1e-9, "graph {checked}: maxflow {phi} vs enumeration {brute}");
        }
        checked += 1;
    }
}

// -------------------------------------------------------------------- grid

fn triangle(demand2: f64, demand3: f64, reactance: [f64; 3], slack: &str) -> GridInstance {
    serde_json::from_value(json!({
        "buses": [
            {"name": "1", "genMax": 1000, "genCost": 1},
            {"name": "2", "demand": demand2},
            {"name": "3", "demand": demand3}
        ],
        "branches": [
            {"from": "1", "to": "2", "reactance": reactance[0], "resistance": 0.01, "limit": 1000},
            {"from": "1", "to": "3", "reactance": reactance[1], "resistance": 0.02, "limit": 1000},
            {"from": "2", "to": "3", "reactance": reactance[2], "resistance": 0.03, "limit": 1000}
        ],
        "slack": slack,
        "risk": {"kind": "max"}
    }))
    .unwrap()
}

/// DC flows from the reduced susceptance system with bus 1 as reference.
fn hand_flows(d2: f64, d3: f64, x: [f64; 3]) -> [f64; 3] {
    let (b12, b13, b23) = (1.0 / x[0], 1.0 / x[1], 1.0 / x[2]);
    let b = DMatrix::from_row_slice(2, 2, &[b12 + b23, -b23, -b23, b13 + b23]);
    let th = b.lu().solve(&DVector::from_vec(vec![-d2, -d3])).unwrap();
    let (t2, t3) = (th[0], th[1]);
    [(0.0 - t2) * b12, (0.0 - t3) * b13, (t2 - t3) * b23]
}

#[test]
fn grid_thermal_matches_hand_computation() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let (d2, d3) = (rng.gen_range(0.0..200.0), rng.gen_range(0.0..200.0));
        let x = [rng.gen_range(0.05..0.3), rng.gen_range(0.05..0.3), rng.gen_range(0.05..0.3)];
        let m = GridModel::new(triangle(d2, d3, x, "1")).unwrap();
        let t = m.thermal(&nominal_x(&m)).unwrap();
        let p = hand_flows(d2, d3, x);
        for (k, r) in [0.01, 0.02, 0.03].iter().enumerate() {
            assert!((t[k] - r * p[k] * p[k]).abs() < 1e-6 * (1.0 + t[k]), "branch {k}: {} vs {}", t[k], r * p[k] * p[k]);
        }
    }
    let m = GridModel::new(triangle(0.0, 0.0, [0.1; 3], "1")).unwrap();
    assert!(m.thermal(&nominal_x(&m)).unwrap().iter().all(|t| t.abs() < 1e-12));
}

#[test]
fn grid_thermal_ignores_slack_choice() {
    for slack in ["2", "3"] {
        let a = GridModel::new(triangle(80.0, 40.0, [0.1, 0.2, 0.15], "1")).unwrap();
        let b = GridModel::new(triangle(80.0, 40.0, [0.1, 0.2, 0.15], slack)).unwrap();
        let (ta, tb) = (a.thermal(&nominal_x(&a)).unwrap(), b.thermal(&nominal_x(&b)).unwrap());
        for (u, v) in ta.iter().zip(&tb) {
            assert!((u - v).abs() < 1e-6 * (1.0 + u));
        }
    }
}

#[test]
fn grid_tuple_separation_leads_with_the_argmax_tuple() {
    let inst = match io::load_instance(&instance_path("grid9_top3.json")).unwrap().problem {
        Problem::Grid(i) => i,
        _ => unreachable!(),
    };
    let m = GridModel::new(inst).unwrap();
    let x = nominal_x(&m);
    let cuts = m.grid_tuple_separation(&x, None, 3, 6, 1, 0).unwrap();
    assert_eq!(cuts.len(), 1);
    let w = m.exact_phi(&x).unwrap().unwrap();
    assert!((cuts[0].implied_phi(&x) - w.value).abs() < 1e-9);
    // A zero scenario is the unweighted case.
    let zero: ScenarioVector = {
        let mut z = ScenarioVector::new();
        for k in 0..m.instance.branches.len() {
            z.insert(m.branch_label(k), 0.0);
        }
        z
    };
    let a = m.grid_tuple_separation(&x, None, 3, 6, 10, 0).unwrap();
    let b = m.grid_tuple_separation(&x, Some(&zero), 3, 6, 10, 0).unwrap();
    assert_eq!(a.len(), 10);
    for (c, d) in a.iter().zip(&b) {
        assert!(c.same_coefficients(d, 1e-12));
    }
}

// ----------------------------------------------------------- concentration

#[test]
fn generated_plan_is_concentrated() {
    let g = concentration::GeneratorConfig::default();
    let inst = concentration::generate(&g).unwrap();
    let m = derisk_core::adapters::ConcentrationModel::new(inst).unwrap();
    let phi = m.evaluate(&nominal_x(&m), None).unwrap();
    assert!(top_decile_share(&phi) >= 0.4);
    let curve = top_k_curve(&phi);
    for w in curve.windows(2) {
        assert!(w[1] >= w[0]);
    }
    for w in curve.windows(3) {
        assert!(w[1] - w[0] >= w[2] - w[1] - 1e-12);
    }
}

// -------------------------------------------------------- cut validity

fn sampled_validity(instance: &str, config: &str) {
    let inst = io::load_instance(&instance_path(instance)).unwrap();
    let model = inst.problem.build().unwrap();
    let cfg: RunConfig = io::load_config(&config_path(config)).unwrap();
    let result = run(model.as_ref(), &cfg).unwrap();
    assert!(!result.master.cuts.is_empty());
    let points = sample_feasible_points(model.as_ref(), 100, 1).unwrap();
    for p in &points {
        assert!(model.feasibility_residual(p).unwrap() <= 1e-6);
    }
    let slack = cut_validity_slack(model.as_ref(), &result.master.cuts, &points).unwrap();
    assert!(slack >= -1e-9, "{instance}: cut overestimates risk by {}", -slack);
}

#[test]
fn cuts_are_valid_on_sampled_points() {
    sampled_validity("interdiction.json", "interdiction.json");
    sampled_validity("queueing.json", "queueing.json");
    sampled_validity("grid9_budget.json", "grid_budget.json");
    sampled_validity("grid9_ball.json", "grid_ball.json");
    sampled_validity("grid9_top3.json", "grid_top.json");
    sampled_validity("grid3.json", "grid_max.json");
    sampled_validity("concentration.json", "concentration.json");
}

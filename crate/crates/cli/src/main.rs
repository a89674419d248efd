use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};
use rayon::prelude::*;
use serde::Serialize;

use derisk_core::engine::{self, RunParams, RunResult};
use derisk_core::io::{self, InstanceFile};
use derisk_core::{
    validate_master, FeatureModel, MasterProblem, MonitorReport, Outcome, OutcomeKind, RunConfig, ThetaPolicy,
    TerminationReason,
};

#[derive(Parser)]
#[command(name = "derisk", version, about = "De-risk optimization solutions with softmax-adversarial cutting planes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the cutting-plane loop and write the iteration log, outcome and monitors.
    Solve(SolveArgs),
    /// Sweep a grid of theta values and write the cost/risk frontier.
    Frontier(FrontierArgs),
    /// Print the exact risk of a solution and where it is attained.
    PhiOracle(OracleArgs),
    /// Check an instance (and optionally a config) and report its nominal optimum.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Record wall-clock times in the iteration log.
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FrontierArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    out: PathBuf,
    /// Ascending comma-separated theta values.
    #[arg(long, value_delimiter = ',', required = true)]
    theta_grid: Vec<f64>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    instance: PathBuf,
    /// JSON file with an `x` (or `solution`) array.
    #[arg(long)]
    solution: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct OutcomeFile<'a> {
    schema_version: u32,
    family: &'a str,
    outcome: &'a Outcome,
    reason: TerminationReason,
    params: &'a RunParams,
    iterations: usize,
    final_cost: f64,
    final_phi: f64,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct FrontierRow {
    theta: f64,
    final_cost: Option<f64>,
    final_phi: Option<f64>,
    outcome_kind: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DERISK_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Frontier(a) => frontier(a),
        Command::PhiOracle(a) => phi_oracle(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load(args: &RunArgs) -> Result<(InstanceFile, Box<dyn FeatureModel>, RunConfig)> {
    let inst = io::load_instance(&args.instance).with_context(|| format!("reading {}", args.instance.display()))?;
    let model = inst.problem.build().context("building the instance model")?;
    let mut cfg = match &args.config {
        Some(p) => io::load_config(p).with_context(|| format!("reading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.record_timing |= args.timing;
    Ok((inst, model, cfg))
}

/// Writes through a temporary file so readers never see partial output.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn iterations_csv(result: &RunResult) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "cost", "phiL", "phiMax", "exactPhi", "cutsAdded", "wallMillis"])?;
    for r in &result.history {
        w.write_record([
            r.t.to_string(),
            r.cost.to_string(),
            r.phi_l.to_string(),
            r.phi_max.to_string(),
            opt(r.exact_phi),
            r.cuts_added.to_string(),
            r.wall_millis.to_string(),
        ])?;
    }
    Ok(w.into_inner()?)
}

fn final_phi(result: &RunResult) -> f64 {
    let last = result.history.last().expect("a run records at least the nominal solve");
    last.exact_phi.unwrap_or(last.phi_max)
}

fn exit_code(kind: OutcomeKind) -> u8 {
    match kind {
        OutcomeKind::DeRisked | OutcomeKind::Certificate => 0,
        OutcomeKind::IterationLimit => 2,
    }
}

fn solve(args: SolveArgs) -> Result<u8> {
    let (inst, model, cfg) = load(&args.run)?;
    let result = engine::run(model.as_ref(), &cfg)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_atomic(&args.out.join("iterations.csv"), &iterations_csv(&result)?)?;
    let last = result.history.last().expect("nonempty history");
    let outcome = OutcomeFile {
        schema_version: derisk_core::config::SCHEMA_VERSION,
        family: inst.problem.family(),
        outcome: &result.outcome,
        reason: result.reason,
        params: &result.params,
        iterations: result.history.len(),
        final_cost: last.cost,
        final_phi: final_phi(&result),
    };
    write_atomic(&args.out.join("outcome.json"), &pretty(&outcome)?)?;
    write_atomic(&args.out.join("monitors.json"), &pretty(&result.monitors)?)?;
    report_monitors(&result.monitors);
    info!("{:?} after {} records", result.outcome.kind, result.history.len());
    println!(
        "{:?} ({:?}): cost {} -> {}, phi {} -> {}",
        result.outcome.kind,
        result.reason,
        result.params.c_star,
        last.cost,
        result.params.phi_star,
        final_phi(&result)
    );
    Ok(exit_code(result.outcome.kind))
}

fn pretty<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(v)?;
    s.push(b'\n');
    Ok(s)
}

fn report_monitors(m: &MonitorReport) {
    for row in m.rows.iter().filter(|r| !r.ok()) {
        warn!("monitor failure at t={}: {row:?}", row.t);
    }
}

fn frontier(args: FrontierArgs) -> Result<u8> {
    let grid = args.theta_grid.clone();
    if grid.is_empty() || grid.windows(2).any(|w| !(w[0] < w[1])) || grid.iter().any(|t| !(*t > 0.0)) {
        bail!("--theta-grid must be a nonempty ascending list of positive values");
    }
    let (_, model, cfg) = load(&args.run)?;
    let (lambda_lo, lambda_hi) = cfg.theta_policy.lambdas();
    let rows: Vec<FrontierRow> = grid
        .par_iter()
        .map(|&theta| {
            let point = RunConfig { theta_policy: ThetaPolicy::Explicit { theta, lambda_lo, lambda_hi }, ..cfg.clone() };
            match engine::run(model.as_ref(), &point) {
                Ok(r) => FrontierRow {
                    theta,
                    final_cost: r.history.last().map(|l| l.cost),
                    final_phi: Some(final_phi(&r)),
                    outcome_kind: format!("{:?}", r.outcome.kind),
                },
                Err(e) => {
                    error!("theta {theta}: {e}");
                    FrontierRow { theta, final_cost: None, final_phi: None, outcome_kind: "Error".into() }
                }
            }
        })
        .collect();
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["theta", "finalCost", "finalPhi", "outcomeKind"])?;
    for r in &rows {
        w.write_record([r.theta.to_string(), opt(r.final_cost), opt(r.final_phi), r.outcome_kind.clone()])?;
        println!("theta {}: {} cost {} phi {}", r.theta, r.outcome_kind, opt(r.final_cost), opt(r.final_phi));
    }
    write_atomic(&args.out.join("frontier.csv"), &w.into_inner()?)?;
    Ok(if rows.iter().any(|r| r.outcome_kind == "Error") { 1 } else { 0 })
}

fn phi_oracle(args: OracleArgs) -> Result<u8> {
    let inst = io::load_instance(&args.instance).with_context(|| format!("reading {}", args.instance.display()))?;
    let model = inst.problem.build()?;
    let sol = io::load_solution(&args.solution).with_context(|| format!("reading {}", args.solution.display()))?;
    let n = model.nominal().num_vars();
    if sol.x.len() != n {
        bail!("solution has {} entries, instance has {n} variables", sol.x.len());
    }
    let mut x = sol.x;
    model.complete_point(&mut x);
    let residual = model.feasibility_residual(&x)?;
    if residual > 1e-6 {
        bail!("solution is infeasible: largest constraint or bound violation {residual:.3e}");
    }
    let w = model.exact_phi(&x)?.context("this instance family has no exact risk oracle")?;
    println!("{}", serde_json::to_string_pretty(&w)?);
    Ok(0)
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct Summary<'a> {
    family: &'a str,
    variables: usize,
    constraints: usize,
    features: usize,
    nominal_cost: f64,
    nominal_phi: Option<f64>,
}

fn validate(args: ValidateArgs) -> Result<u8> {
    let inst = io::load_instance(&args.instance).with_context(|| format!("reading {}", args.instance.display()))?;
    let model = inst.problem.build()?;
    if let Some(p) = &args.config {
        io::load_config(p).with_context(|| format!("reading {}", p.display()))?;
    }
    let master = MasterProblem::from_nominal(model.nominal(), 1.0);
    let violations = validate_master(&master);
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("{v:?}");
        }
        bail!("{} model invariant violations", violations.len());
    }
    let sol = derisk_core::solve_lp(&master)?;
    if !sol.is_optimal() {
        bail!("nominal problem is {:?}", sol.status);
    }
    let mut x = sol.x[..model.nominal().num_vars()].to_vec();
    model.complete_point(&mut x);
    let summary = Summary {
        family: inst.problem.family(),
        variables: model.nominal().num_vars(),
        constraints: model.nominal().constraints.len(),
        features: model.num_features(),
        nominal_cost: model.nominal().cost.eval(&x)?,
        nominal_phi: model.exact_phi(&x)?.map(|w| w.value),
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(0)
}

//! Multistart projected AdaDelta ascent for the synthetic boosting problem.

use log::warn;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DeriskError, Result};
use crate::kernels::{build_synthetic_objective, log_sum_exp, top_k_indices, BoostResult, SmoothObjective};
use crate::model::ScenarioVector;

const ADADELTA_EPS: f64 = 1e-6;
const ARMIJO_C: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MIN_STEP: f64 = 1e-14;
/// Margin kept from the open boundary of the barrier domain.
const EDGE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct RedConfig {
    pub n_runs: usize,
    /// Defaults to `max(10, n / nRuns)`.
    pub window_size: Option<usize>,
    pub window_step: usize,
    pub warmstart_size: usize,
    pub warmstart_value: f64,
    pub support_value: f64,
    /// `1 - rho` for the AdaDelta running averages.
    pub decay_rate: f64,
    pub max_steps: usize,
    pub grad_tol: f64,
    pub seed: u64,
    /// Thread count; `None` uses the global pool.
    pub workers: Option<usize>,
    pub gamma: f64,
    pub epsilon: f64,
    pub epsilon_i: f64,
    /// Features are rescaled so the largest equals this value.
    pub target_scale: f64,
}

impl Default for RedConfig {
    fn default() -> Self {
        Self {
            n_runs: 30,
            window_size: None,
            window_step: 1,
            warmstart_size: 10,
            warmstart_value: 0.5,
            support_value: 0.1,
            decay_rate: 0.09,
            max_steps: 500,
            grad_tol: 1e-8,
            seed: 0,
            workers: None,
            gamma: 1.0,
            epsilon: 1.0,
            epsilon_i: 1.0,
            target_scale: 10.0,
        }
    }
}

impl RedConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DeriskError::Config(format!("red: {m}")));
        if self.n_runs == 0 {
            return bad("nRuns must be at least 1");
        }
        if !(self.decay_rate > 0.0 && self.decay_rate < 1.0) {
            return bad("decayRate must lie in (0, 1)");
        }
        if self.window_size == Some(0) || self.window_step == 0 {
            return bad("windowSize and windowStep must be at least 1");
        }
        if !(self.support_value >= 0.0 && self.support_value < 1.0)
            || !(self.warmstart_value >= 0.0 && self.warmstart_value < 1.0)
        {
            return bad("start values must lie in [0, 1)");
        }
        if !(self.gamma > 0.0 && self.epsilon > 0.0 && self.epsilon_i > 0.0 && self.target_scale > 0.0) {
            return bad("gamma, epsilon, epsilonI and targetScale must be positive");
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1");
        }
        Ok(())
    }

    pub fn effective_window(&self, n: usize) -> usize {
        self.window_size.unwrap_or_else(|| (n / self.n_runs).max(10))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunStart {
    pub zeta: Vec<f64>,
    pub free: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RedTermination {
    GradTol,
    MaxSteps,
    DomainStall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RedRun {
    pub start: Vec<f64>,
    pub best_zeta: Vec<f64>,
    pub best_objective: f64,
    pub start_objective: f64,
    pub steps: usize,
    pub termination: RedTermination,
    /// Objective at every accepted iterate, starting with the start point.
    pub trajectory: Vec<f64>,
}

/// One start per run: a window over the features sorted by decreasing value.
///
/// Runs whose offset falls past the end draw a seeded random window instead.
pub fn sliding_window_starts(sorted_ids: &[usize], cfg: &RedConfig) -> Vec<RunStart> {
    let n = sorted_ids.len();
    let w = cfg.effective_window(n).min(n.max(1));
    (0..cfg.n_runs)
        .map(|h| {
            let offset = h * cfg.window_step;
            let window: Vec<usize> = if offset < n {
                sorted_ids[offset..(offset + w).min(n)].to_vec()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (h as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let mut picked: Vec<usize> = sample(&mut rng, n, w.min(n)).into_iter().collect();
                // Keep the sorted-by-value order inside the window.
                picked.sort_unstable();
                picked.into_iter().map(|p| sorted_ids[p]).collect()
            };
            let mut zeta = vec![0.0; n];
            let mut free = vec![false; n];
            for (rank, &i) in window.iter().enumerate() {
                free[i] = true;
                zeta[i] = if rank < cfg.warmstart_size { cfg.warmstart_value } else { cfg.support_value };
            }
            let s: f64 = zeta.iter().sum();
            if s > 0.5 * cfg.gamma {
                let f = 0.5 * cfg.gamma / s;
                zeta.iter_mut().for_each(|v| *v *= f);
            }
            RunStart { zeta, free }
        })
        .collect()
}

fn project(z: &mut [f64]) {
    for v in z.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

fn feasible(z: &[f64], gamma: f64) -> bool {
    z.iter().sum::<f64>() <= gamma - EDGE && z.iter().all(|v| *v >= 0.0 && *v <= 1.0 - EDGE)
}

/// Projected AdaDelta ascent with Armijo backtracking. Frozen coordinates never move.
pub fn adadelta_ascent(
    obj: &dyn SmoothObjective,
    start: &RunStart,
    cfg: &RedConfig,
    gamma: f64,
) -> Result<RedRun> {
    let n = obj.dim();
    if start.zeta.len() != n || start.free.len() != n {
        return Err(DeriskError::Kernel("start has the wrong dimension".into()));
    }
    let mut z = start.zeta.clone();
    let mut f = obj
        .value(&z)
        .ok_or_else(|| DeriskError::Domain("red start is outside the objective domain".into()))?;
    let rho = 1.0 - cfg.decay_rate;
    let mut eg2 = vec![0.0; n];
    let mut edx2 = vec![0.0; n];
    let mut trajectory = vec![f];
    let start_objective = f;
    let mut steps = 0;
    let termination = loop {
        let mut g = obj
            .gradient(&z)
            .ok_or_else(|| DeriskError::Domain("gradient undefined at an accepted iterate".into()))?;
        for i in 0..n {
            // Mask frozen coordinates and those pinned at zero by the projection.
            if !start.free[i] || (z[i] <= 0.0 && g[i] < 0.0) {
                g[i] = 0.0;
            }
        }
        if g.iter().all(|v| v.abs() <= cfg.grad_tol) {
            break RedTermination::GradTol;
        }
        if steps >= cfg.max_steps {
            break RedTermination::MaxSteps;
        }
        let mut dir = vec![0.0; n];
        for i in 0..n {
            eg2[i] = rho * eg2[i] + (1.0 - rho) * g[i] * g[i];
            dir[i] = ((edx2[i] + ADADELTA_EPS).sqrt() / (eg2[i] + ADADELTA_EPS).sqrt()) * g[i];
        }
        let mut s = 1.0;
        let accepted = loop {
            if s < MIN_STEP {
                break None;
            }
            let mut trial: Vec<f64> = z.iter().zip(&dir).map(|(a, d)| a + s * d).collect();
            project(&mut trial);
            if feasible(&trial, gamma) {
                if let Some(ft) = obj.value(&trial) {
                    let gain: f64 = g.iter().zip(trial.iter().zip(&z)).map(|(gi, (t, zi))| gi * (t - zi)).sum();
                    if ft >= f + ARMIJO_C * gain.max(0.0) {
                        break Some((trial, ft));
                    }
                }
            }
            s *= BACKTRACK;
        };
        let Some((next, fnext)) = accepted else {
            break RedTermination::DomainStall;
        };
        for i in 0..n {
            let dx = next[i] - z[i];
            edx2[i] = rho * edx2[i] + (1.0 - rho) * dx * dx;
        }
        z = next;
        f = fnext;
        trajectory.push(f);
        steps += 1;
    };
    Ok(RedRun {
        start: start.zeta.clone(),
        best_zeta: z,
        best_objective: f,
        start_objective,
        steps,
        termination,
        trajectory,
    })
}

/// Runs every start and returns the successful runs with the position of the best one.
///
/// Ties go to the lowest run index. Failed runs are logged and skipped.
pub fn multistart(obj: &dyn SmoothObjective, starts: &[RunStart], cfg: &RedConfig, gamma: f64) -> Result<(usize, Vec<RedRun>)> {
    let solve = || -> Vec<Result<RedRun>> {
        starts.par_iter().map(|s| adadelta_ascent(obj, s, cfg, gamma)).collect()
    };
    let results = match cfg.workers {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| DeriskError::Kernel(format!("thread pool: {e}")))?
            .install(solve),
        None => solve(),
    };
    let mut runs = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for (h, r) in results.into_iter().enumerate() {
        match r {
            Ok(run) => runs.push((h, run)),
            Err(e) => {
                warn!("red run {h} failed: {e}");
                errors.push(format!("run {h}: {e}"));
            }
        }
    }
    if runs.is_empty() {
        return Err(DeriskError::AllRunsFailed(errors));
    }
    let mut best = 0;
    for k in 1..runs.len() {
        if runs[k].1.best_objective > runs[best].1.best_objective {
            best = k;
        }
    }
    Ok((best, runs.into_iter().map(|(_, r)| r).collect()))
}

/// Synthetic boosting: scale features, ascend over `zeta`, report `zeta + phi~` as weights.
pub fn multistart_boost(values: &[f64], labels: &[String], alpha: f64, cfg: &RedConfig) -> Result<BoostResult> {
    cfg.validate()?;
    let n = values.len();
    if n == 0 {
        return Err(DeriskError::Empty("feature values"));
    }
    let m = values.iter().fold(0.0_f64, |a, v| a.max(*v));
    let scaled: Vec<f64> = if m > 0.0 { values.iter().map(|v| v * cfg.target_scale / m).collect() } else { values.to_vec() };
    let obj = build_synthetic_objective(&scaled, alpha, cfg.gamma, cfg.epsilon, &vec![cfg.epsilon_i; n])?;
    let sorted = top_k_indices(&scaled, n);
    let starts = sliding_window_starts(&sorted, cfg);
    let (best, runs) = multistart(&obj, &starts, cfg, cfg.gamma)?;
    let zeta = &runs[best].best_zeta;
    let weights: Vec<f64> = zeta.iter().zip(&scaled).map(|(a, b)| a + b).collect();
    let lse_value = log_sum_exp(alpha, &weights)?;
    let mut z = ScenarioVector::new();
    for (i, v) in zeta.iter().enumerate() {
        if *v > 0.0 {
            z.insert(labels.get(i).cloned().unwrap_or_else(|| format!("f{i}")), *v);
        }
    }
    Ok(BoostResult { z: Some(z), values: values.to_vec(), weights, lse_value, exact: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Toy;

    impl SmoothObjective for Toy {
        fn dim(&self) -> usize {
            1
        }
        fn value(&self, z: &[f64]) -> Option<f64> {
            (z[0] < 1.0).then(|| -(z[0] - 0.3).powi(2))
        }
        fn gradient(&self, z: &[f64]) -> Option<Vec<f64>> {
            (z[0] < 1.0).then(|| vec![-2.0 * (z[0] - 0.3)])
        }
    }

    #[test]
    fn windows_slide() {
        let cfg = RedConfig { n_runs: 3, window_size: Some(2), warmstart_size: 0, ..RedConfig::default() };
        let starts = sliding_window_starts(&[0, 1, 2, 3], &cfg);
        let frees: Vec<Vec<bool>> = starts.iter().map(|s| s.free.clone()).collect();
        assert_eq!(frees[0], vec![true, true, false, false]);
        assert_eq!(frees[1], vec![false, true, true, false]);
        assert_eq!(frees[2], vec![false, false, true, true]);
    }

    #[test]
    fn single_full_window_frees_everything() {
        let cfg = RedConfig { n_runs: 1, window_size: Some(5), ..RedConfig::default() };
        let starts = sliding_window_starts(&[4, 3, 2, 1, 0], &cfg);
        assert!(starts[0].free.iter().all(|f| *f));
    }

    #[test]
    fn concave_toy_converges() {
        let cfg = RedConfig { max_steps: 20_000, grad_tol: 1e-7, ..RedConfig::default() };
        let start = RunStart { zeta: vec![0.9], free: vec![true] };
        let run = adadelta_ascent(&Toy, &start, &cfg, 10.0).unwrap();
        assert!((run.best_zeta[0] - 0.3).abs() < 1e-4, "{:?}", run.best_zeta);
        assert!(run.trajectory.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn stationary_start_stops_immediately() {
        let cfg = RedConfig::default();
        let start = RunStart { zeta: vec![0.3], free: vec![true] };
        let run = adadelta_ascent(&Toy, &start, &cfg, 10.0).unwrap();
        assert_eq!(run.termination, RedTermination::GradTol);
        assert_eq!(run.best_zeta, vec![0.3]);
        assert_eq!(run.steps, 0);
    }

    #[test]
    fn frozen_coordinates_stay_put() {
        let phi = [1.0, 2.0, 3.0];
        let obj = build_synthetic_objective(&phi, 1.0, 1.0, 1.0, &[1.0; 3]).unwrap();
        let start = RunStart { zeta: vec![0.1, 0.0, 0.2], free: vec![false, true, true] };
        let run = adadelta_ascent(&obj, &start, &RedConfig::default(), 1.0).unwrap();
        assert_eq!(run.best_zeta[0], 0.1);
        assert!(run.best_objective >= run.start_objective);
    }
}

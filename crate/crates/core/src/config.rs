//! Run configuration and its JSON form.

use serde::{Deserialize, Serialize};

use crate::error::{DeriskError, Result};
use crate::red::RedConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum ThetaPolicy {
    /// Fixed `theta`. `lambdaLo`/`lambdaHi` are still used to classify the outcome.
    #[serde(rename_all = "camelCase")]
    Explicit {
        theta: f64,
        #[serde(default = "default_lambda_lo")]
        lambda_lo: f64,
        #[serde(default = "default_lambda_hi")]
        lambda_hi: f64,
    },
    /// `theta = c* xi / (Phi* (lambdaHi - lambdaLo))`.
    #[serde(rename_all = "camelCase")]
    Formal { lambda_lo: f64, lambda_hi: f64, xi: f64 },
}

fn default_lambda_lo() -> f64 {
    0.5
}

fn default_lambda_hi() -> f64 {
    0.6
}

impl ThetaPolicy {
    pub fn lambdas(&self) -> (f64, f64) {
        match *self {
            Self::Explicit { lambda_lo, lambda_hi, .. } | Self::Formal { lambda_lo, lambda_hi, .. } => {
                (lambda_lo, lambda_hi)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum AlphaPolicy {
    Explicit { alpha: f64 },
    /// Smallest alpha meeting the convergence analysis.
    Theory,
    /// `min(50, ln|B| / (0.25 Phi*))`.
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ToleranceMode {
    /// `bigDelta` is multiplied by the nominal risk.
    Relative,
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoostingKernel {
    #[serde(rename = "exact")]
    Exact,
    #[serde(rename = "greedy")]
    Greedy,
    #[serde(rename = "budget-topN")]
    BudgetTopN,
    #[serde(rename = "ball")]
    Ball,
    #[serde(rename = "synthetic")]
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeparationKernel {
    #[serde(rename = "softmax")]
    Softmax,
    #[serde(rename = "greedy")]
    Greedy,
    #[serde(rename = "softmax-clip")]
    SoftmaxClip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub t_max: usize,
    pub theta_policy: ThetaPolicy,
    pub alpha_policy: AlphaPolicy,
    /// Absolute stopping tolerance, or a fraction of the nominal risk.
    pub big_delta: f64,
    pub small_delta: f64,
    #[serde(default = "relative")]
    pub tolerance_mode: ToleranceMode,
    /// Boosting slack; defaults to `alpha * bigDelta`.
    #[serde(default)]
    pub delta_prime: Option<f64>,
    pub boosting_kernel: BoostingKernel,
    pub separation_kernel: SeparationKernel,
    #[serde(default)]
    pub clip_k: Option<usize>,
    #[serde(default)]
    pub flatten: bool,
    #[serde(default)]
    pub flatten_floor: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Stop once `phiL <= 0.5 phiU0`.
    #[serde(default)]
    pub early_exit: bool,
    /// Write real wall-clock times into the iteration log.
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default)]
    pub red: RedConfig,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn relative() -> ToleranceMode {
    ToleranceMode::Relative
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            t_max: 100,
            theta_policy: ThetaPolicy::Formal { lambda_lo: 0.5, lambda_hi: 0.6, xi: 0.01 },
            alpha_policy: AlphaPolicy::Theory,
            big_delta: 1e-6,
            small_delta: 1e-6,
            tolerance_mode: ToleranceMode::Relative,
            delta_prime: None,
            boosting_kernel: BoostingKernel::Exact,
            separation_kernel: SeparationKernel::Softmax,
            clip_k: None,
            flatten: false,
            flatten_floor: None,
            seed: 0,
            early_exit: false,
            record_timing: false,
            red: RedConfig::default(),
        }
    }
}

impl RunConfig {
    /// Looser tolerances that let a run stop as soon as risk is materially reduced.
    pub fn derisking() -> Self {
        Self { big_delta: 1e-2, small_delta: 1e-2, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DeriskError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("unsupported schemaVersion {}", self.schema_version));
        }
        for (name, v) in [("bigDelta", self.big_delta), ("smallDelta", self.small_delta)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a positive finite real, got {v}"));
            }
        }
        if let Some(dp) = self.delta_prime {
            if !(dp > 0.0 && dp.is_finite()) {
                return bad(format!("deltaPrime must be positive, got {dp}"));
            }
        }
        if let Some(f) = self.flatten_floor {
            if !(f > 0.0) {
                return bad(format!("flattenFloor must be positive, got {f}"));
            }
        }
        match self.clip_k {
            Some(0) => return bad("clipK must be at least 1".into()),
            None if self.separation_kernel == SeparationKernel::SoftmaxClip => {
                return bad("softmax-clip separation needs clipK".into())
            }
            _ => {}
        }
        match self.theta_policy {
            ThetaPolicy::Explicit { theta, lambda_lo, lambda_hi } => {
                if !(theta > 0.0 && theta.is_finite()) {
                    return bad(format!("theta must be positive, got {theta}"));
                }
                check_lambdas(lambda_lo, lambda_hi)?;
            }
            ThetaPolicy::Formal { lambda_lo, lambda_hi, xi } => {
                check_lambdas(lambda_lo, lambda_hi)?;
                if !(xi > 0.0 && xi.is_finite()) {
                    return bad(format!("xi must be positive, got {xi}"));
                }
            }
        }
        if let AlphaPolicy::Explicit { alpha } = self.alpha_policy {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return bad(format!("alpha must be positive, got {alpha}"));
            }
        }
        self.red.validate()
    }
}

fn check_lambdas(lo: f64, hi: f64) -> Result<()> {
    if 0.0 < lo && lo < hi && hi < 1.0 {
        Ok(())
    } else {
        Err(DeriskError::Config(format!("need 0 < lambdaLo < lambdaHi < 1, got {lo}, {hi}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        RunConfig::derisking().validate().unwrap();
    }

    #[test]
    fn kernel_ids_round_trip() {
        let s = serde_json::to_string(&BoostingKernel::BudgetTopN).unwrap();
        assert_eq!(s, "\"budget-topN\"");
        let k: SeparationKernel = serde_json::from_str("\"softmax-clip\"").unwrap();
        assert_eq!(k, SeparationKernel::SoftmaxClip);
    }

    #[test]
    fn clip_zero_rejected() {
        let cfg = RunConfig { clip_k: Some(0), ..RunConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn nonpositive_tolerance_rejected() {
        let cfg = RunConfig { small_delta: 0.0, ..RunConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = RunConfig {
            theta_policy: ThetaPolicy::Explicit { theta: 2.5, lambda_lo: 0.7, lambda_hi: 0.75 },
            alpha_policy: AlphaPolicy::Explicit { alpha: 0.1 },
            clip_k: Some(3),
            ..RunConfig::default()
        };
        let s = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
    }
}

//! Per-iteration telemetry, run outcomes and monitor reports.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IterationRecord {
    pub t: usize,
    pub x: Vec<f64>,
    pub cost: f64,
    #[serde(rename = "phiL")]
    pub phi_l: f64,
    pub phi_max: f64,
    pub exact_phi: Option<f64>,
    pub cuts_added: usize,
    pub wall_millis: f64,
    pub master_objective: f64,
    /// `sum_i pi_i phi_i(x^t|z^t) - phiL^t` for the cut built at this iteration.
    #[serde(default)]
    pub cut_violation: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeKind {
    DeRisked,
    Certificate,
    IterationLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum TerminationReason {
    /// `phiMax <= phiL + Delta`.
    Absolute,
    /// `phiMax - phiL <= delta phiMax`.
    Relative,
    /// `phiL <= 0.5 phiU0`.
    EarlyExit,
    /// Iteration cap reached.
    IterationCap,
    /// The separation step produced no new violated cut.
    NoProgress,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DeRiskBounds {
    /// `Phi(x) <= riskRatio * Phi(x*)`.
    pub risk_ratio: f64,
    /// `c(x) <= costRatio * c(x*)`.
    pub cost_ratio: f64,
}

/// No `x` with `Phi(x) <= lambdaLo Phi(x*)` and `c(x) <= (1 + xi) c(x*)` exists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CertificateStatement {
    pub lambda_lo: f64,
    pub xi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Outcome {
    pub kind: OutcomeKind,
    pub solution: Vec<f64>,
    pub bounds: Option<DeRiskBounds>,
    pub certificate_statement: Option<CertificateStatement>,
    /// `c(xhat) + theta Phi(xhat)`.
    pub weighted_value: f64,
    /// `c(x*) + theta lambdaHi Phi(x*)`.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MonitorRow {
    pub t: usize,
    pub lemma1_ok: Option<bool>,
    pub lemma_upper_ok: Option<bool>,
    pub lemma2_ok: Option<bool>,
    pub cor_violation_ok: Option<bool>,
}

impl MonitorRow {
    /// Every applicable flag holds.
    pub fn ok(&self) -> bool {
        [self.lemma1_ok, self.lemma_upper_ok, self.lemma2_ok, self.cor_violation_ok]
            .into_iter()
            .all(|f| f != Some(false))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MonitorReport {
    pub rows: Vec<MonitorRow>,
    /// Smallest slack over all applicable checks; negative means a check failed.
    pub worst_slack: f64,
    /// Checks that need theory alpha and exact boosting were evaluated.
    pub exactness_checks_applicable: bool,
}

impl MonitorReport {
    pub fn all_ok(&self) -> bool {
        self.rows.iter().all(MonitorRow::ok)
    }
}

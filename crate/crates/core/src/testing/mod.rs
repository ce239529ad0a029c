//! Antecedent-gated falsification tests, p-values and multiplicity control.
//!
//! `H_lo` is rejected at level `α` when the twin's upper endpoint falls below
//! the lower endpoint of `Q_lo`; `H_up` is handled by negating the outcome
//! and running the same test. The p-value is the smallest rejecting `α`.

mod diagnostics;
mod multiplicity;
mod sensitivity;

pub use diagnostics::{rejection_diagnostics, DiagnosticCase, RejectionDiagnostics};
pub use multiplicity::{adjust, benjamini_yekutieli, holm_bonferroni, Multiplicity, MultiplicityReport};
pub use sensitivity::{
    rescaled_range, sensitivity_sweep, sensitivity_sweep_with, write_sensitivity_csv, SensitivityResult,
    SensitivityRow, SensitivitySkip,
};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bounds::{estimate_bounds, obs_filter, twin_outcomes, BoundEstimate};
use crate::error::{Error, Result};
use crate::intervals::{hoeffding_delta, Backend, BootstrapDistribution, Side, DEFAULT_RESAMPLES};
use crate::regions::{Direction, Hypothesis};
use crate::trajectory::{Dataset, TwinCollection, TwinDataset};

/// Smallest level on the bootstrap p-value grid.
pub const ALPHA_FLOOR: f64 = 1e-6;
pub const ALPHA_GRID_POINTS: usize = 1000;
/// Bootstrap tests need at least this many trajectories on each side.
pub const BOOTSTRAP_MIN_N: usize = 100;

/// `ALPHA_GRID_POINTS` log-spaced levels from `1e-6` to `1`, ascending.
pub fn alpha_grid() -> Vec<f64> {
    let last = (ALPHA_GRID_POINTS - 1) as f64;
    (0..ALPHA_GRID_POINTS).map(|k| 10f64.powf(-6.0 + 6.0 * k as f64 / last)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateReason {
    NoMatchingObservational,
    NoTwinInRegion,
    BootstrapMinSample,
}

impl GateReason {
    pub fn as_str(self) -> &'static str {
        match self {
            GateReason::NoMatchingObservational => "no matching observational trajectory in region",
            GateReason::NoTwinInRegion => "no twin trajectory in region",
            GateReason::BootstrapMinSample => "bootstrap sample below 100",
        }
    }
}

impl std::fmt::Display for GateReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Gating decision from already computed counts.
pub fn gate_estimate(est: &BoundEstimate, backend: Backend) -> Option<GateReason> {
    if est.n_match == 0 {
        Some(GateReason::NoMatchingObservational)
    } else if est.n_hat == 0 {
        Some(GateReason::NoTwinInRegion)
    } else if backend.is_bootstrap() && (est.n < BOOTSTRAP_MIN_N || est.n_hat < BOOTSTRAP_MIN_N) {
        Some(GateReason::BootstrapMinSample)
    } else {
        None
    }
}

/// Checks that the antecedent can be witnessed in both datasets.
pub fn gate(data: &Dataset, twin: &TwinDataset, hyp: &Hypothesis, backend: Backend) -> Result<Option<GateReason>> {
    Ok(gate_estimate(&estimate_bounds(data, twin, hyp)?, backend))
}

fn gated_error(id: u64) -> Error {
    Error::Hypothesis { id, message: "p-value requested for a gated hypothesis".into() }
}

/// Closed-form Hoeffding p-value.
///
/// With `c = (y_up - y_lo) (sqrt(1/2n) + sqrt(1/2n̂))` and gap
/// `g = mu_lo - mu_hat` (or `mu_hat - mu_up` for `H_up`), the test rejects at
/// `α` iff `g > c sqrt(ln(2/α))`, so `p = min(1, 2 exp(-(g/c)^2))` for `g > 0`.
pub fn hoeffding_p_value(est: &BoundEstimate, direction: Direction) -> Result<f64> {
    let (Some(mu_lo), Some(mu_up), Some(mu_hat)) = (est.mu_lo, est.mu_up, est.mu_hat) else {
        return Err(gated_error(u64::MAX));
    };
    let range = est.y_up - est.y_lo;
    let c = range * ((0.5 / est.n as f64).sqrt() + (0.5 / est.n_hat as f64).sqrt());
    let gap = match direction {
        Direction::Lo => mu_lo - mu_hat,
        Direction::Up => mu_hat - mu_up,
    };
    if gap <= 0.0 {
        return Ok(1.0);
    }
    Ok((2.0 * (-(gap / c).powi(2)).exp()).min(1.0))
}

/// Hoeffding endpoints `(bound, twin)` at `alpha`.
pub fn hoeffding_endpoints(est: &BoundEstimate, direction: Direction, alpha: f64) -> Option<(f64, f64)> {
    let range = est.y_up - est.y_lo;
    let d = hoeffding_delta(range, est.n, alpha);
    let d_hat = hoeffding_delta(range, est.n_hat, alpha);
    let mu_hat = est.mu_hat?;
    Some(match direction {
        Direction::Lo => (est.mu_lo? - d, mu_hat + d_hat),
        Direction::Up => (est.mu_up? + d, mu_hat - d_hat),
    })
}

fn rejects(direction: Direction, (bound, twin): (f64, f64)) -> bool {
    match direction {
        Direction::Lo => twin < bound,
        Direction::Up => twin > bound,
    }
}

/// Bootstrap distributions for one hypothesis, in lower-bound form
/// (negated for `H_up`).
#[derive(Debug, Clone)]
pub struct BootstrapPair {
    direction: Direction,
    backend: Backend,
    bound: BootstrapDistribution,
    twin: BootstrapDistribution,
}

impl BootstrapPair {
    pub fn draw(
        bound_values: &[f64],
        twin_values: &[f64],
        direction: Direction,
        backend: Backend,
        resamples: usize,
        seed: u64,
        stream: u64,
    ) -> Result<Self> {
        let (bound_side, twin_side, sign) = match direction {
            Direction::Lo => (Side::LowerForBound, Side::UpperForTwin, 1.0),
            Direction::Up => (Side::UpperForBound, Side::LowerForTwin, -1.0),
        };
        let flip = |v: &[f64]| v.iter().map(|x| sign * x).collect::<Vec<_>>();
        Ok(BootstrapPair {
            direction,
            backend,
            bound: BootstrapDistribution::draw(&flip(bound_values), resamples, seed, stream, bound_side)?,
            twin: BootstrapDistribution::draw(&flip(twin_values), resamples, seed, stream, twin_side)?,
        })
    }

    /// `(bound, twin)` endpoints at `alpha`, in original (un-negated) units.
    pub fn endpoints(&self, alpha: f64) -> (f64, f64) {
        let bound = self.bound.lower(alpha, self.backend);
        let twin = self.twin.upper(alpha, self.backend);
        match self.direction {
            Direction::Lo => (bound, twin),
            Direction::Up => (-bound, -twin),
        }
    }

    pub fn rejects_at(&self, alpha: f64) -> bool {
        rejects(self.direction, self.endpoints(alpha))
    }

    /// Smallest grid level at which the test rejects, or 1.
    pub fn p_value(&self) -> f64 {
        alpha_grid().into_iter().find(|&a| self.rejects_at(a)).unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestConfig {
    pub backend: Backend,
    /// Reference level for the reported endpoints and per-test decision.
    pub alpha: f64,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for TestConfig {
    fn default() -> Self {
        TestConfig { backend: Backend::Hoeffding, alpha: 0.05, resamples: DEFAULT_RESAMPLES, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub id: u64,
    pub outcome_feature: usize,
    pub t: usize,
    pub direction: Direction,
    pub gate: Option<GateReason>,
    pub p_value: f64,
    /// Unadjusted decision at the reference level.
    pub reject_at_alpha: bool,
    pub alpha: f64,
    /// `(bound, twin)` endpoints at the reference level.
    pub endpoints: Option<(f64, f64)>,
    pub estimate: BoundEstimate,
}

/// Runs the gated test for one hypothesis.
pub fn test_hypothesis(data: &Dataset, twin: &TwinDataset, hyp: &Hypothesis, cfg: &TestConfig) -> Result<TestResult> {
    let estimate = estimate_bounds(data, twin, hyp)?;
    let mut result = TestResult {
        id: hyp.id,
        outcome_feature: hyp.outcome.feature,
        t: hyp.t,
        direction: hyp.direction,
        gate: gate_estimate(&estimate, cfg.backend),
        p_value: 1.0,
        reject_at_alpha: false,
        alpha: cfg.alpha,
        endpoints: None,
        estimate,
    };
    if result.gate.is_some() {
        return Ok(result);
    }
    match cfg.backend {
        Backend::Hoeffding => {
            result.p_value = hoeffding_p_value(&estimate, hyp.direction).map_err(|_| gated_error(hyp.id))?;
            result.endpoints = hoeffding_endpoints(&estimate, hyp.direction, cfg.alpha);
        }
        backend => {
            let bound: Vec<f64> = obs_filter(data, hyp)
                .into_iter()
                .map(|c| match hyp.direction {
                    Direction::Lo => c.y_lo_value,
                    Direction::Up => c.y_up_value,
                })
                .collect();
            let twin_values = twin_outcomes(twin, hyp);
            let pair =
                BootstrapPair::draw(&bound, &twin_values, hyp.direction, backend, cfg.resamples, cfg.seed, hyp.id)?;
            result.p_value = pair.p_value();
            result.endpoints = Some(pair.endpoints(cfg.alpha));
        }
    }
    result.reject_at_alpha = result.endpoints.is_some_and(|e| rejects(hyp.direction, e));
    Ok(result)
}

/// Outcome of the experimental two-sided procedure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TwoSidedInference {
    /// The twin provably satisfies the bound.
    Satisfied,
    /// The twin provably violates the bound.
    Violated,
    NoInference,
}

/// Experimental: two-sided Hoeffding intervals, each side at `α/2`.
///
/// For `H_lo`, compares `[mu_lo ± Δ]` with `[mu_hat ± Δ̂]`; disjoint intervals
/// give an inference either way. Not part of the main pipeline.
pub fn two_sided_hoeffding(est: &BoundEstimate, direction: Direction, alpha: f64) -> Option<TwoSidedInference> {
    let range = est.y_up - est.y_lo;
    let d = hoeffding_delta(range, est.n, alpha / 2.0);
    let d_hat = hoeffding_delta(range, est.n_hat, alpha / 2.0);
    let mu_hat = est.mu_hat?;
    let (bound, twin) = match direction {
        Direction::Lo => (est.mu_lo?, mu_hat),
        // Negate so the twin must lie above the bound in both cases.
        Direction::Up => (-est.mu_up?, -mu_hat),
    };
    Some(if bound + d < twin - d_hat {
        TwoSidedInference::Satisfied
    } else if bound - d > twin + d_hat {
        TwoSidedInference::Violated
    } else {
        TwoSidedInference::NoInference
    })
}

/// Per-hypothesis results plus the multiplicity decision.
#[derive(Debug, Clone)]
pub struct FamilyReport {
    pub results: Vec<TestResult>,
    pub multiplicity: MultiplicityReport,
}

impl FamilyReport {
    pub fn from_results(results: Vec<TestResult>, method: Multiplicity, level: f64) -> Self {
        let p: Vec<f64> = results.iter().map(|r| r.p_value).collect();
        FamilyReport { multiplicity: adjust(method, &p, level), results }
    }

    pub fn rejections(&self) -> usize {
        self.multiplicity.decisions.iter().filter(|&&d| d).count()
    }

    pub fn rejected(&self) -> impl Iterator<Item = &TestResult> {
        self.results.iter().zip(&self.multiplicity.decisions).filter(|(_, &d)| d).map(|(r, _)| r)
    }

    /// Per-outcome counts, keyed by outcome feature.
    pub fn summary(&self) -> FamilySummary {
        let mut per: BTreeMap<usize, OutcomeSummary> = BTreeMap::new();
        for (r, &rejected) in self.results.iter().zip(&self.multiplicity.decisions) {
            let e = per
                .entry(r.outcome_feature)
                .or_insert(OutcomeSummary { feature: r.outcome_feature, ..Default::default() });
            e.hypotheses += 1;
            if r.gate.is_some() {
                e.gated += 1;
            }
            if rejected {
                e.rejections += 1;
                match r.direction {
                    Direction::Lo => e.rejections_lo += 1,
                    Direction::Up => e.rejections_up += 1,
                }
            }
        }
        let outcomes: Vec<OutcomeSummary> = per.into_values().collect();
        FamilySummary {
            method: self.multiplicity.method,
            level: self.multiplicity.level,
            total_hypotheses: self.results.len(),
            total_rejections: self.rejections(),
            outcomes,
        }
    }

    pub fn write_results_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let rows = self.results.iter().zip(&self.multiplicity.decisions).map(|(r, &d)| ResultRow::from_result(r, d));
        write_results_rows(path, rows)
    }
}

/// Run the gated tests for a hypothesis family sequentially.
pub fn run_family(
    data: &Dataset,
    twins: &TwinCollection,
    hyps: &[Hypothesis],
    cfg: &TestConfig,
    method: Multiplicity,
    level: f64,
) -> Result<FamilyReport> {
    let results = hyps.iter().map(|h| test_with_collection(data, twins, h, cfg)).collect::<Result<Vec<_>>>()?;
    Ok(FamilyReport::from_results(results, method, level))
}

/// Looks up the twin dataset for `hyp.actions` (empty if absent) and tests.
pub fn test_with_collection(
    data: &Dataset,
    twins: &TwinCollection,
    hyp: &Hypothesis,
    cfg: &TestConfig,
) -> Result<TestResult> {
    match twins.get(&hyp.actions) {
        Some(twin) => test_hypothesis(data, twin, hyp, cfg),
        None => {
            let empty = TwinDataset::empty(data.schema.clone(), hyp.actions.clone());
            test_hypothesis(data, &empty, hyp, cfg)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSummary {
    pub feature: usize,
    pub hypotheses: usize,
    pub rejections: usize,
    pub rejections_lo: usize,
    pub rejections_up: usize,
    pub gated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilySummary {
    pub method: Multiplicity,
    pub level: f64,
    pub total_hypotheses: usize,
    pub total_rejections: usize,
    pub outcomes: Vec<OutcomeSummary>,
}

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub hypothesis_id: u64,
    pub outcome_feature: usize,
    pub t: usize,
    pub direction: Direction,
    pub n: usize,
    pub n_hat: usize,
    pub mu_lo: Option<f64>,
    pub mu_up: Option<f64>,
    pub mu_hat: Option<f64>,
    pub p: f64,
    pub holm_reject: bool,
    pub gate_reason: Option<String>,
}

impl ResultRow {
    pub fn from_result(r: &TestResult, rejected: bool) -> Self {
        ResultRow {
            hypothesis_id: r.id,
            outcome_feature: r.outcome_feature,
            t: r.t,
            direction: r.direction,
            n: r.estimate.n,
            n_hat: r.estimate.n_hat,
            mu_lo: r.estimate.mu_lo,
            mu_up: r.estimate.mu_up,
            mu_hat: r.estimate.mu_hat,
            p: r.p_value,
            holm_reject: rejected,
            gate_reason: r.gate.map(|g| g.as_str().to_string()),
        }
    }
}

pub fn write_results_rows(path: impl AsRef<Path>, rows: impl IntoIterator<Item = ResultRow>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut any = false;
    for r in rows {
        w.serialize(r)?;
        any = true;
    }
    if !any {
        w.write_record([
            "hypothesis_id",
            "outcome_feature",
            "t",
            "direction",
            "n",
            "n_hat",
            "mu_lo",
            "mu_up",
            "mu_hat",
            "p",
            "holm_reject",
            "gate_reason",
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_results_csv(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use super::{test_with_collection, FamilyReport, Multiplicity, TestConfig, TestResult};
use crate::error::{Error, Result};
use crate::regions::Hypothesis;
use crate::trajectory::{Dataset, TwinCollection};

/// `[y_lo (1 - Δ/2), y_up (1 + Δ/2)]`, or `None` when empty or a point.
pub fn rescaled_range(y_lo: f64, y_up: f64, delta: f64) -> Option<(f64, f64)> {
    let lo = y_lo * (1.0 - delta / 2.0);
    let up = y_up * (1.0 + delta / 2.0);
    (lo.is_finite() && up.is_finite() && lo < up).then_some((lo, up))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityRow {
    pub delta: f64,
    pub outcome_feature: usize,
    pub hypotheses: usize,
    pub rejections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivitySkip {
    pub hypothesis_id: u64,
    pub delta: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityResult {
    pub deltas: Vec<f64>,
    /// Sorted by delta position, then outcome feature.
    pub rows: Vec<SensitivityRow>,
    pub skipped: Vec<SensitivitySkip>,
}

impl SensitivityResult {
    pub fn total_rejections(&self, delta_index: usize) -> usize {
        let d = self.deltas[delta_index];
        self.rows.iter().filter(|r| r.delta.to_bits() == d.to_bits()).map(|r| r.rejections).sum()
    }
}

/// Reruns the full test and multiplicity step once per delta, with every
/// outcome interval rescaled. `run` tests one rescaled family; it lets callers
/// parallelise.
pub fn sensitivity_sweep_with(
    hyps: &[Hypothesis],
    deltas: &[f64],
    method: Multiplicity,
    level: f64,
    mut run: impl FnMut(&[Hypothesis]) -> Result<Vec<TestResult>>,
) -> Result<SensitivityResult> {
    if let Some(d) = deltas.iter().find(|d| !d.is_finite()) {
        return Err(Error::invalid(format!("non-finite delta {d}")));
    }
    let features: Vec<usize> = {
        let mut f: Vec<usize> = hyps.iter().map(|h| h.outcome.feature).collect();
        f.sort_unstable();
        f.dedup();
        f
    };
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for &delta in deltas {
        let mut family = Vec::with_capacity(hyps.len());
        for h in hyps {
            match rescaled_range(h.outcome.y_lo, h.outcome.y_up, delta) {
                Some((lo, up)) => family.push(h.with_range(lo, up)),
                None => skipped.push(SensitivitySkip {
                    hypothesis_id: h.id,
                    delta,
                    reason: "degenerate rescaled interval".into(),
                }),
            }
        }
        let report = FamilyReport::from_results(run(&family)?, method, level);
        let mut counts: BTreeMap<usize, (usize, usize)> = features.iter().map(|&f| (f, (0, 0))).collect();
        for (r, &rejected) in report.results.iter().zip(&report.multiplicity.decisions) {
            let c = counts.entry(r.outcome_feature).or_default();
            c.0 += 1;
            c.1 += rejected as usize;
        }
        rows.extend(counts.into_iter().map(|(f, (h, r))| SensitivityRow {
            delta,
            outcome_feature: f,
            hypotheses: h,
            rejections: r,
        }));
    }
    Ok(SensitivityResult { deltas: deltas.to_vec(), rows, skipped })
}

/// Sequential [`sensitivity_sweep_with`] over a twin collection.
pub fn sensitivity_sweep(
    data: &Dataset,
    twins: &TwinCollection,
    hyps: &[Hypothesis],
    deltas: &[f64],
    cfg: &TestConfig,
    method: Multiplicity,
    level: f64,
) -> Result<SensitivityResult> {
    sensitivity_sweep_with(hyps, deltas, method, level, |family| {
        family.iter().map(|h| test_with_collection(data, twins, h, cfg)).collect()
    })
}

/// Columns `delta, outcome_feature, hypotheses, rejections`.
pub fn write_sensitivity_csv(path: impl AsRef<Path>, result: &SensitivityResult) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["delta", "outcome_feature", "hypotheses", "rejections"])?;
    for r in &result.rows {
        w.write_record([
            r.delta.to_string(),
            r.outcome_feature.to_string(),
            r.hypotheses.to_string(),
            r.rejections.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

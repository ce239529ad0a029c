//! Data-driven hypothesis generation from a holdout dataset.
//!
//! Each timestep is partitioned by a bin plan (threshold cuts, fixed or taken
//! from holdout quantiles). Every `(t, a_{1:t}, B_{0:t})` realised by at least
//! `min_support` holdout trajectories becomes a tuple whose clip interval is
//! the pair of nearest-rank quantiles of the outcome over that subset.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{BoxRegion, Constraint, Direction, Hypothesis, OutcomeSpec, RegionSequence};
use crate::error::{Error, Result};
use crate::stats::quantile_nearest_rank;
use crate::trajectory::Dataset;

/// Feature a discretizer splits on: a fixed index or the outcome feature
/// currently being generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "serde_json::Value", into = "serde_json::Value")]
pub enum FeatureRef {
    Index(usize),
    Outcome,
}

impl TryFrom<serde_json::Value> for FeatureRef {
    type Error = String;

    fn try_from(v: serde_json::Value) -> std::result::Result<Self, String> {
        match &v {
            serde_json::Value::String(s) if s == "outcome" => Ok(FeatureRef::Outcome),
            serde_json::Value::Number(n) => {
                n.as_u64().map(|i| FeatureRef::Index(i as usize)).ok_or_else(|| format!("bad feature index {n}"))
            }
            _ => Err(format!("feature must be an index or \"outcome\", got {v}")),
        }
    }
}

impl From<FeatureRef> for serde_json::Value {
    fn from(f: FeatureRef) -> Self {
        match f {
            FeatureRef::Index(i) => serde_json::Value::from(i),
            FeatureRef::Outcome => serde_json::Value::from("outcome"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinRule {
    /// Fixed thresholds.
    Cuts(Vec<f64>),
    /// Thresholds at these nearest-rank quantile levels of the holdout.
    Quantiles(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discretizer {
    pub feature: FeatureRef,
    #[serde(flatten)]
    pub rule: BinRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    #[serde(default = "default_quantile_lo")]
    pub quantile_lo: f64,
    #[serde(default = "default_quantile_up")]
    pub quantile_up: f64,
    /// Applied at every timestep `0..=t`.
    pub bin_plan: Vec<Discretizer>,
    pub outcome_features: Vec<usize>,
    pub timesteps: Vec<usize>,
    #[serde(default = "default_min_support")]
    pub min_support: usize,
}

fn default_quantile_lo() -> f64 {
    0.2
}
fn default_quantile_up() -> f64 {
    0.8
}
fn default_min_support() -> usize {
    1
}

impl GeneratorConfig {
    /// Two fixed bins on a binary feature, four quartile bins on a second
    /// feature, and a median split of the outcome: 16 regions per timestep.
    pub fn sixteen_bin(
        binary_feature: usize,
        quartile_feature: usize,
        outcome_features: Vec<usize>,
        timesteps: Vec<usize>,
    ) -> Self {
        GeneratorConfig {
            quantile_lo: default_quantile_lo(),
            quantile_up: default_quantile_up(),
            bin_plan: vec![
                Discretizer { feature: FeatureRef::Index(binary_feature), rule: BinRule::Cuts(vec![0.5]) },
                Discretizer {
                    feature: FeatureRef::Index(quartile_feature),
                    rule: BinRule::Quantiles(vec![0.25, 0.5, 0.75]),
                },
                Discretizer { feature: FeatureRef::Outcome, rule: BinRule::Quantiles(vec![0.5]) },
            ],
            outcome_features,
            timesteps,
            min_support: default_min_support(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.quantile_lo && self.quantile_lo < self.quantile_up && self.quantile_up < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < quantile_lo ({}) < quantile_up ({}) < 1",
                self.quantile_lo, self.quantile_up
            )));
        }
        if self.min_support == 0 {
            return Err(Error::invalid("min_support must be at least 1"));
        }
        for d in &self.bin_plan {
            if let BinRule::Quantiles(qs) = &d.rule {
                if let Some(q) = qs.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
                    return Err(Error::invalid(format!("bin quantile {q} outside (0, 1)")));
                }
            }
            if let BinRule::Cuts(cs) = &d.rule {
                if cs.iter().any(|c| !c.is_finite()) {
                    return Err(Error::invalid("bin cuts must be finite"));
                }
            }
        }
        Ok(())
    }
}

/// A tuple dropped during generation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkipEntry {
    pub descriptor: String,
    pub reason: String,
}

/// Cut points used for one `(outcome feature, timestep, feature)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutRecord {
    pub outcome_feature: usize,
    pub timestep: usize,
    pub feature: usize,
    pub cuts: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct GeneratedHypotheses {
    pub hypotheses: Vec<Hypothesis>,
    pub skipped: Vec<SkipEntry>,
    pub cut_points: Vec<CutRecord>,
}

impl GeneratedHypotheses {
    pub fn write_skip_log(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["tuple", "reason"])?;
        for s in &self.skipped {
            w.write_record([&s.descriptor, &s.reason])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Thresholds for one discretizer at one timestep.
#[derive(Debug, Clone)]
struct ResolvedBins {
    feature: usize,
    cuts: Vec<f64>,
}

impl ResolvedBins {
    fn bin_of(&self, v: f64) -> usize {
        self.cuts.partition_point(|&c| c <= v)
    }

    fn constraint(&self, bin: usize) -> Constraint {
        let lo = bin.checked_sub(1).map(|i| self.cuts[i]);
        let hi = self.cuts.get(bin).copied();
        Constraint::half_open(self.feature, lo, hi)
    }
}

fn resolve_plan(
    holdout: &Dataset,
    plan: &[Discretizer],
    outcome_feature: usize,
    timestep: usize,
) -> Result<Vec<ResolvedBins>> {
    let dim = holdout.schema.dims[timestep];
    plan.iter()
        .map(|d| {
            let feature = match d.feature {
                FeatureRef::Index(i) => i,
                FeatureRef::Outcome => outcome_feature,
            };
            if feature >= dim {
                return Err(Error::invalid(format!(
                    "bin plan feature {feature} not available at timestep {timestep} (d = {dim})"
                )));
            }
            let mut cuts = match &d.rule {
                BinRule::Cuts(c) => c.clone(),
                BinRule::Quantiles(qs) => {
                    let values: Vec<f64> = holdout.records.iter().map(|r| r.state(timestep)[feature]).collect();
                    qs.iter().map(|&q| quantile_nearest_rank(&values, q)).collect::<Result<_>>()?
                }
            };
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            Ok(ResolvedBins { feature, cuts })
        })
        .collect()
}

fn region_for(bins: &[ResolvedBins], cell: &[usize]) -> Result<BoxRegion> {
    BoxRegion::new(bins.iter().zip(cell).map(|(b, &k)| b.constraint(k)))
}

fn describe(outcome: usize, t: usize, actions: &[u32], cells: &[Vec<usize>]) -> String {
    let cells: Vec<String> =
        cells.iter().map(|c| c.iter().map(usize::to_string).collect::<Vec<_>>().join(".")).collect();
    let actions: Vec<String> = actions.iter().map(u32::to_string).collect();
    format!("feature={outcome} t={t} a={} bins={}", actions.join("-"), cells.join("|"))
}

/// Generates hypotheses (both directions per tuple) from the holdout.
///
/// Output order is deterministic: outcome features and timesteps in config
/// order, then tuples ordered by `(a_{1:t}, bin cells)`. Ids are sequential.
pub fn generate_hypotheses(holdout: &Dataset, config: &GeneratorConfig) -> Result<GeneratedHypotheses> {
    config.validate()?;
    if holdout.is_empty() {
        return Err(Error::invalid("holdout dataset is empty"));
    }
    let schema = &holdout.schema;
    let mut out = GeneratedHypotheses::default();
    let mut next_id = 0u64;

    for &feature in &config.outcome_features {
        let max_t = config.timesteps.iter().copied().max().unwrap_or(0);
        if max_t > schema.horizon {
            return Err(Error::invalid(format!("timestep {max_t} beyond horizon {}", schema.horizon)));
        }
        let plans =
            (0..=max_t).map(|s| resolve_plan(holdout, &config.bin_plan, feature, s)).collect::<Result<Vec<_>>>()?;
        for (s, plan) in plans.iter().enumerate() {
            for b in plan {
                out.cut_points.push(CutRecord {
                    outcome_feature: feature,
                    timestep: s,
                    feature: b.feature,
                    cuts: b.cuts.clone(),
                });
            }
        }

        for &t in &config.timesteps {
            if t == 0 {
                return Err(Error::invalid("timesteps must be at least 1"));
            }
            if feature >= schema.dims[t] {
                return Err(Error::invalid(format!("outcome feature {feature} not available at t = {t}")));
            }
            type Key = (Vec<u32>, Vec<Vec<usize>>);
            let mut groups: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
            for r in &holdout.records {
                let actions: Vec<u32> = r.actions().take(t).collect();
                let cells: Vec<Vec<usize>> = (0..=t)
                    .map(|s| {
                        let x = r.state(s);
                        plans[s].iter().map(|b| b.bin_of(x[b.feature])).collect()
                    })
                    .collect();
                groups.entry((actions, cells)).or_default().push(r.state(t)[feature]);
            }

            for ((actions, cells), outcomes) in groups {
                // Cells from intersected same-feature bins can be empty sets;
                // no trajectory lands there, so they never form a group.
                if outcomes.len() < config.min_support {
                    continue;
                }
                let y_lo = quantile_nearest_rank(&outcomes, config.quantile_lo)?;
                let y_up = quantile_nearest_rank(&outcomes, config.quantile_up)?;
                if y_lo.partial_cmp(&y_up) != Some(std::cmp::Ordering::Less) {
                    out.skipped.push(SkipEntry {
                        descriptor: describe(feature, t, &actions, &cells),
                        reason: format!("degenerate outcome range y_lo = y_up = {y_lo}"),
                    });
                    continue;
                }
                let regions = RegionSequence(
                    cells.iter().enumerate().map(|(s, c)| region_for(&plans[s], c)).collect::<Result<_>>()?,
                );
                let outcome = OutcomeSpec { time: t, feature, y_lo, y_up };
                for direction in [Direction::Lo, Direction::Up] {
                    out.hypotheses.push(Hypothesis {
                        id: next_id,
                        t,
                        outcome,
                        actions: actions.clone(),
                        regions: regions.clone(),
                        direction,
                    });
                    next_id += 1;
                }
            }
        }
    }
    Ok(out)
}

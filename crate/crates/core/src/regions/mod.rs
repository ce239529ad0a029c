//! Box regions `B_t`, clipped outcome specs, and hypothesis tuples.

mod doses;
mod generate;

pub use doses::{discretize_doses, ActionEncoder, DoseBinner, DOSE_BINS};
pub use generate::{
    generate_hypotheses, BinRule, CutRecord, Discretizer, FeatureRef, GeneratedHypotheses, GeneratorConfig, SkipEntry,
};

pub use crate::stats::quantile_nearest_rank;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::SchemaSpec;

/// A one-feature interval constraint. Infinite ends are written as `null`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "ConstraintRepr", into = "ConstraintRepr")]
pub struct Constraint {
    pub feature: usize,
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

#[derive(Serialize, Deserialize)]
struct ConstraintRepr {
    feature: usize,
    lo: Option<f64>,
    hi: Option<f64>,
    #[serde(default = "yes")]
    lo_closed: bool,
    #[serde(default = "yes")]
    hi_closed: bool,
}

fn yes() -> bool {
    true
}

impl From<ConstraintRepr> for Constraint {
    fn from(r: ConstraintRepr) -> Self {
        Constraint {
            feature: r.feature,
            lo: r.lo.unwrap_or(f64::NEG_INFINITY),
            hi: r.hi.unwrap_or(f64::INFINITY),
            lo_closed: r.lo_closed,
            hi_closed: r.hi_closed,
        }
    }
}

impl From<Constraint> for ConstraintRepr {
    fn from(c: Constraint) -> Self {
        ConstraintRepr {
            feature: c.feature,
            lo: c.lo.is_finite().then_some(c.lo),
            hi: c.hi.is_finite().then_some(c.hi),
            lo_closed: c.lo_closed,
            hi_closed: c.hi_closed,
        }
    }
}

impl Constraint {
    pub fn closed(feature: usize, lo: f64, hi: f64) -> Self {
        Constraint { feature, lo, hi, lo_closed: true, hi_closed: true }
    }

    /// `[lo, hi)`, with `None` meaning unbounded on that side.
    pub fn half_open(feature: usize, lo: Option<f64>, hi: Option<f64>) -> Self {
        Constraint {
            feature,
            lo: lo.unwrap_or(f64::NEG_INFINITY),
            hi: hi.unwrap_or(f64::INFINITY),
            lo_closed: true,
            hi_closed: false,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        let above = if self.lo_closed { v >= self.lo } else { v > self.lo };
        let below = if self.hi_closed { v <= self.hi } else { v < self.hi };
        above && below
    }

    fn intersect(&self, other: &Constraint) -> Constraint {
        let (lo, lo_closed) = match self.lo.total_cmp(&other.lo) {
            std::cmp::Ordering::Greater => (self.lo, self.lo_closed),
            std::cmp::Ordering::Less => (other.lo, other.lo_closed),
            std::cmp::Ordering::Equal => (self.lo, self.lo_closed && other.lo_closed),
        };
        let (hi, hi_closed) = match self.hi.total_cmp(&other.hi) {
            std::cmp::Ordering::Less => (self.hi, self.hi_closed),
            std::cmp::Ordering::Greater => (other.hi, other.hi_closed),
            std::cmp::Ordering::Equal => (self.hi, self.hi_closed && other.hi_closed),
        };
        Constraint { feature: self.feature, lo, hi, lo_closed, hi_closed }
    }

    /// Some point satisfying the constraint, if one exists.
    fn witness(&self) -> Option<f64> {
        let v = match (self.lo.is_finite(), self.hi.is_finite()) {
            (true, true) => {
                if self.lo == self.hi {
                    self.lo
                } else {
                    0.5 * (self.lo + self.hi)
                }
            }
            (true, false) => self.lo + 1.0,
            (false, true) => self.hi - 1.0,
            (false, false) => 0.0,
        };
        self.contains(v).then_some(v)
    }
}

/// Conjunction of per-feature interval constraints; empty means the whole space.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoxRegion {
    constraints: Vec<Constraint>,
}

impl BoxRegion {
    pub fn whole() -> Self {
        Self::default()
    }

    /// Builds a region, intersecting constraints that share a feature.
    pub fn new(constraints: impl IntoIterator<Item = Constraint>) -> Result<Self> {
        let mut region = BoxRegion::whole();
        for c in constraints {
            if c.lo.is_nan() || c.hi.is_nan() {
                return Err(Error::invalid("NaN region bound"));
            }
            if c.lo > c.hi {
                return Err(Error::invalid(format!(
                    "constraint on feature {} has lower bound {} above upper bound {}",
                    c.feature, c.lo, c.hi
                )));
            }
            region.insert(c);
        }
        Ok(region)
    }

    fn insert(&mut self, c: Constraint) {
        match self.constraints.binary_search_by_key(&c.feature, |x| x.feature) {
            Ok(i) => self.constraints[i] = self.constraints[i].intersect(&c),
            Err(i) => self.constraints.insert(i, c),
        }
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn is_whole(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.constraints.last().map(|c| c.feature)
    }

    /// Membership test; errors when a constrained feature is outside `x`.
    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        if let Some(f) = self.max_feature() {
            if f >= x.len() {
                return Err(Error::invalid(format!(
                    "region constrains feature {f} but point has {} features",
                    x.len()
                )));
            }
        }
        Ok(self.contains_unchecked(x))
    }

    #[inline]
    pub(crate) fn contains_unchecked(&self, x: &[f64]) -> bool {
        self.constraints.iter().all(|c| c.contains(x[c.feature]))
    }

    /// A point of dimension `dim` inside the region, if the region is nonempty.
    pub fn interior_point(&self, dim: usize) -> Option<Vec<f64>> {
        let mut x = vec![0.0; dim];
        for c in &self.constraints {
            *x.get_mut(c.feature)? = c.witness()?;
        }
        Some(x)
    }
}

/// Membership test for a single region.
pub fn region_contains(region: &BoxRegion, x: &[f64]) -> Result<bool> {
    region.contains(x)
}

/// Regions `B_0..=B_t`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegionSequence(pub Vec<BoxRegion>);

impl RegionSequence {
    pub fn whole(t: usize) -> Self {
        RegionSequence(vec![BoxRegion::whole(); t + 1])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, s: usize) -> &BoxRegion {
        &self.0[s]
    }

    pub fn is_whole(&self) -> bool {
        self.0.iter().all(BoxRegion::is_whole)
    }
}

/// `f(x_{0:t}) = clip((x_t)_feature, y_lo, y_up)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSpec {
    pub time: usize,
    pub feature: usize,
    pub y_lo: f64,
    pub y_up: f64,
}

impl OutcomeSpec {
    #[inline]
    pub fn clip(&self, z: f64) -> f64 {
        z.max(self.y_lo).min(self.y_up)
    }

    /// Evaluates `f` on the state at the outcome time.
    #[inline]
    pub fn eval(&self, x_t: &[f64]) -> f64 {
        self.clip(x_t[self.feature])
    }

    pub fn range(&self) -> f64 {
        self.y_up - self.y_lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Lo,
    Up,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Lo => "lo",
            Direction::Up => "up",
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `(t, f, a_{1:t}, B_{0:t})` plus the tested direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub id: u64,
    pub t: usize,
    pub outcome: OutcomeSpec,
    pub actions: Vec<u32>,
    pub regions: RegionSequence,
    pub direction: Direction,
}

impl Hypothesis {
    pub fn validate(&self, schema: &SchemaSpec) -> Result<()> {
        let bad = |message: String| Error::Hypothesis { id: self.id, message };
        if self.t == 0 || self.t > schema.horizon {
            return Err(bad(format!("t = {} outside 1..={}", self.t, schema.horizon)));
        }
        if self.outcome.time != self.t {
            return Err(bad(format!("outcome time {} differs from t = {}", self.outcome.time, self.t)));
        }
        if self.outcome.feature >= schema.dims[self.t] {
            return Err(bad(format!(
                "outcome feature {} not below d_t = {}",
                self.outcome.feature, schema.dims[self.t]
            )));
        }
        if self.outcome.y_lo.partial_cmp(&self.outcome.y_up) != Some(std::cmp::Ordering::Less) {
            return Err(bad(format!("y_lo = {} must be below y_up = {}", self.outcome.y_lo, self.outcome.y_up)));
        }
        if self.actions.len() != self.t {
            return Err(bad(format!("{} actions for t = {}", self.actions.len(), self.t)));
        }
        for (i, &a) in self.actions.iter().enumerate() {
            if a >= schema.action_cardinalities[i] {
                return Err(bad(format!("action {a} out of range at step {}", i + 1)));
            }
        }
        if self.regions.len() != self.t + 1 {
            return Err(bad(format!("{} regions for t = {} (need t + 1)", self.regions.len(), self.t)));
        }
        for (s, region) in self.regions.0.iter().enumerate() {
            if let Some(f) = region.max_feature() {
                if f >= schema.dims[s] {
                    return Err(bad(format!("B_{s} constrains feature {f} beyond d_{s}")));
                }
            }
        }
        Ok(())
    }

    /// The same tuple with the clip interval replaced.
    pub fn with_range(&self, y_lo: f64, y_up: f64) -> Hypothesis {
        let mut h = self.clone();
        h.outcome.y_lo = y_lo;
        h.outcome.y_up = y_up;
        h
    }
}

pub fn load_hypotheses(path: impl AsRef<std::path::Path>) -> Result<Vec<Hypothesis>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_hypotheses(path: impl AsRef<std::path::Path>, hyps: &[Hypothesis]) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(hyps)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

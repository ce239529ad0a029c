use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Multiplicity {
    #[serde(rename = "holm")]
    HolmBonferroni,
    #[serde(rename = "by")]
    BenjaminiYekutieli,
}

impl Multiplicity {
    pub fn as_str(self) -> &'static str {
        match self {
            Multiplicity::HolmBonferroni => "holm",
            Multiplicity::BenjaminiYekutieli => "by",
        }
    }
}

impl std::str::FromStr for Multiplicity {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "holm" => Ok(Multiplicity::HolmBonferroni),
            "by" => Ok(Multiplicity::BenjaminiYekutieli),
            other => Err(crate::Error::invalid(format!("unknown multiplicity method {other:?} (expected holm or by)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiplicityReport {
    pub method: Multiplicity,
    pub level: f64,
    /// Per-hypothesis decision, in input order.
    pub decisions: Vec<bool>,
    /// Threshold each p-value was compared against, in input order.
    pub thresholds: Vec<f64>,
}

/// Indices sorted by ascending p, ties by position.
fn order(p: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    idx
}

/// Holm step-down: the `j`-th smallest p is compared with `level / (m - j + 1)`
/// and testing stops at the first failure.
pub fn holm_bonferroni(p: &[f64], level: f64) -> MultiplicityReport {
    let m = p.len();
    let mut decisions = vec![false; m];
    let mut thresholds = vec![0.0; m];
    let mut open = true;
    for (j, &i) in order(p).iter().enumerate() {
        thresholds[i] = level / (m - j) as f64;
        open = open && p[i] <= thresholds[i];
        decisions[i] = open;
    }
    MultiplicityReport { method: Multiplicity::HolmBonferroni, level, decisions, thresholds }
}

/// Benjamini–Yekutieli step-up with `c(m) = sum_{i<=m} 1/i`: rejects the `k`
/// smallest p-values for the largest `k` with `p_(k) <= k level / (m c(m))`.
pub fn benjamini_yekutieli(p: &[f64], level: f64) -> MultiplicityReport {
    let m = p.len();
    let c: f64 = (1..=m).map(|i| 1.0 / i as f64).sum();
    let sorted = order(p);
    let mut thresholds = vec![0.0; m];
    let mut cutoff = 0;
    for (j, &i) in sorted.iter().enumerate() {
        thresholds[i] = (j + 1) as f64 * level / (m as f64 * c);
        if p[i] <= thresholds[i] {
            cutoff = j + 1;
        }
    }
    let mut decisions = vec![false; m];
    for &i in &sorted[..cutoff] {
        decisions[i] = true;
    }
    MultiplicityReport { method: Multiplicity::BenjaminiYekutieli, level, decisions, thresholds }
}

pub fn adjust(method: Multiplicity, p: &[f64], level: f64) -> MultiplicityReport {
    match method {
        Multiplicity::HolmBonferroni => holm_bonferroni(p, level),
        Multiplicity::BenjaminiYekutieli => benjamini_yekutieli(p, level),
    }
}

//! One-sided confidence endpoints for the bound and twin means.
//!
//! Two backends: the exact Hoeffding endpoint `mean ∓ (y_up - y_lo) *
//! sqrt(ln(2/α) / 2n)`, and the bootstrap (reverse percentile or percentile)
//! over resampled means. Every endpoint targets one-sided coverage `1 - α/2`.
//!
//! Upper-bound and lower-twin sides are computed by negating the sample and
//! reusing the lower-bound / upper-twin machinery, then negating back.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::stats::{quantile_sorted, CompensatedSum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    /// Lower endpoint for `Q_lo` (`q_lo`).
    LowerForBound,
    /// Upper endpoint for the twin mean when testing `H_lo`.
    UpperForTwin,
    /// Upper endpoint for `Q_up`.
    UpperForBound,
    /// Lower endpoint for the twin mean when testing `H_up`.
    LowerForTwin,
}

impl Side {
    fn code(self) -> u64 {
        match self {
            Side::LowerForBound => 1,
            Side::UpperForTwin => 2,
            Side::UpperForBound => 3,
            Side::LowerForTwin => 4,
        }
    }

    /// The side this one maps to after negating the sample.
    fn negated(self) -> Side {
        match self {
            Side::UpperForBound => Side::LowerForBound,
            Side::LowerForTwin => Side::UpperForTwin,
            s => s,
        }
    }

    fn is_negated(self) -> bool {
        matches!(self, Side::UpperForBound | Side::LowerForTwin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    Hoeffding,
    #[serde(rename = "boot-revperc")]
    BootstrapReversePercentile,
    #[serde(rename = "boot-perc")]
    BootstrapPercentile,
}

impl Backend {
    pub fn is_bootstrap(self) -> bool {
        !matches!(self, Backend::Hoeffding)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Backend::Hoeffding => "hoeffding",
            Backend::BootstrapReversePercentile => "boot-revperc",
            Backend::BootstrapPercentile => "boot-perc",
        }
    }
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hoeffding" => Ok(Backend::Hoeffding),
            "boot-revperc" => Ok(Backend::BootstrapReversePercentile),
            "boot-perc" => Ok(Backend::BootstrapPercentile),
            _ => Err(Error::invalid(format!("unknown backend {s}"))),
        }
    }
}

pub const DEFAULT_RESAMPLES: usize = 100;

#[derive(Debug, Clone, Copy)]
pub struct IntervalRequest<'a> {
    pub values: &'a [f64],
    pub range: (f64, f64),
    pub alpha: f64,
    pub side: Side,
    pub backend: Backend,
    pub resamples: usize,
    pub seed: u64,
    /// Extra stream key (the hypothesis id) for bootstrap resampling.
    pub stream: u64,
}

impl<'a> IntervalRequest<'a> {
    pub fn new(values: &'a [f64], range: (f64, f64), alpha: f64, side: Side, backend: Backend) -> Self {
        IntervalRequest { values, range, alpha, side, backend, resamples: DEFAULT_RESAMPLES, seed: 0, stream: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntervalResult {
    pub endpoint: f64,
    pub n: usize,
    pub backend: Backend,
    /// Endpoints from this backend are monotone in `α` for fixed data and seed.
    pub nested: bool,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} outside (0, 1]")));
    }
    Ok(())
}

/// Hoeffding half-width `(y_up - y_lo) * sqrt(ln(2/α) / (2n))`.
pub fn hoeffding_delta(range: f64, n: usize, alpha: f64) -> f64 {
    range * ((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt()
}

/// Exact Hoeffding endpoint; not clamped to `[y_lo, y_up]`.
pub fn hoeffding_endpoint(req: &IntervalRequest<'_>) -> Result<IntervalResult> {
    check_alpha(req.alpha)?;
    let n = req.values.len();
    if n == 0 {
        return Err(Error::EmptySample("no values".into()));
    }
    let (lo, up) = req.range;
    if let Some(v) = req.values.iter().find(|v| !(**v >= lo && **v <= up)) {
        return Err(Error::invalid(format!("value {v} outside [{lo}, {up}]")));
    }
    let mean = crate::stats::mean(req.values).expect("nonempty");
    let delta = hoeffding_delta(up - lo, n, req.alpha);
    let endpoint = match req.side {
        Side::LowerForBound | Side::LowerForTwin => mean - delta,
        Side::UpperForTwin | Side::UpperForBound => mean + delta,
    };
    Ok(IntervalResult { endpoint, n, backend: Backend::Hoeffding, nested: true })
}

/// Sorted bootstrap means for one sample, ready to be queried at any `α`.
#[derive(Debug, Clone)]
pub struct BootstrapDistribution {
    mean: f64,
    sorted_means: Vec<f64>,
}

impl BootstrapDistribution {
    /// Draws `resamples` with-replacement resample means from the stream
    /// `(seed, stream, side)`.
    pub fn draw(values: &[f64], resamples: usize, seed: u64, stream: u64, side: Side) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample("no values".into()));
        }
        if resamples == 0 {
            return Err(Error::invalid("resamples must be at least 1"));
        }
        let n = values.len();
        let mut rng = rng::stream(seed, &[rng::tag::BOOTSTRAP, stream, side.code()]);
        let mut sorted_means: Vec<f64> = (0..resamples)
            .map(|_| {
                let s: CompensatedSum = (0..n).map(|_| values[rng.random_range(0..n)]).collect();
                s.total() / n as f64
            })
            .collect();
        sorted_means.sort_by(f64::total_cmp);
        Ok(BootstrapDistribution { mean: crate::stats::mean(values).expect("nonempty"), sorted_means })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn quantile(&self, q: f64) -> f64 {
        quantile_sorted(&self.sorted_means, q).expect("nonempty")
    }

    /// Lower endpoint (coverage `1 - α/2` from below).
    pub fn lower(&self, alpha: f64, backend: Backend) -> f64 {
        match backend {
            Backend::BootstrapPercentile => self.quantile(alpha / 2.0),
            _ => 2.0 * self.mean - self.quantile(1.0 - alpha / 2.0),
        }
    }

    /// Upper endpoint (coverage `1 - α/2` from above).
    pub fn upper(&self, alpha: f64, backend: Backend) -> f64 {
        match backend {
            Backend::BootstrapPercentile => self.quantile(1.0 - alpha / 2.0),
            _ => 2.0 * self.mean - self.quantile(alpha / 2.0),
        }
    }
}

/// Bootstrap endpoint, deterministic given `(seed, stream, side)`.
pub fn bootstrap_endpoint(req: &IntervalRequest<'_>) -> Result<IntervalResult> {
    check_alpha(req.alpha)?;
    if !req.backend.is_bootstrap() {
        return Err(Error::invalid("bootstrap_endpoint needs a bootstrap backend"));
    }
    let negate = req.side.is_negated();
    let values: Vec<f64> = if negate { req.values.iter().map(|v| -v).collect() } else { req.values.to_vec() };
    let dist = BootstrapDistribution::draw(&values, req.resamples, req.seed, req.stream, req.side)?;
    let endpoint = match req.side.negated() {
        Side::LowerForBound => dist.lower(req.alpha, req.backend),
        _ => dist.upper(req.alpha, req.backend),
    };
    Ok(IntervalResult {
        endpoint: if negate { -endpoint } else { endpoint },
        n: values.len(),
        backend: req.backend,
        nested: true,
    })
}

/// Dispatches on the request's backend.
pub fn endpoint(req: &IntervalRequest<'_>) -> Result<IntervalResult> {
    match req.backend {
        Backend::Hoeffding => hoeffding_endpoint(req),
        _ => bootstrap_endpoint(req),
    }
}

use crate::error::{Error, Result};
use crate::stats::quantile_nearest_rank;

/// Bins per drug: one zero-dose bin plus four quartile bins.
pub const DOSE_BINS: u32 = 5;

/// Zero / quartile discretizer for one drug.
///
/// Bin 0 holds exactly-zero doses. Nonzero doses fall into bins 1..=4 split at
/// the nearest-rank quartiles of the nonzero holdout doses; bins are closed on
/// the left and open on the right, the last one extending to +inf.
#[derive(Debug, Clone, PartialEq)]
pub struct DoseBinner {
    cuts: Vec<f64>,
}

impl DoseBinner {
    pub fn fit(holdout_doses: &[f64]) -> Result<Self> {
        if let Some(d) = holdout_doses.iter().find(|d| d.is_nan() || **d < 0.0) {
            return Err(Error::invalid(format!("negative or NaN dose {d}")));
        }
        let nonzero: Vec<f64> = holdout_doses.iter().copied().filter(|&d| d > 0.0).collect();
        let cuts = if nonzero.is_empty() {
            Vec::new()
        } else {
            [0.25, 0.5, 0.75].iter().map(|&q| quantile_nearest_rank(&nonzero, q)).collect::<Result<_>>()?
        };
        Ok(DoseBinner { cuts })
    }

    pub fn cuts(&self) -> &[f64] {
        &self.cuts
    }

    pub fn bin(&self, dose: f64) -> Result<u32> {
        if dose.is_nan() || dose < 0.0 {
            return Err(Error::invalid(format!("negative or NaN dose {dose}")));
        }
        if dose == 0.0 {
            return Ok(0);
        }
        let above = self.cuts.iter().filter(|&&c| c <= dose).count() as u32;
        Ok((1 + above).min(DOSE_BINS - 1))
    }
}

/// Mixed-radix action encoder over several drugs (base [`DOSE_BINS`]).
///
/// With two drugs the composite id is `5 * first_bin + second_bin`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionEncoder {
    drugs: Vec<DoseBinner>,
}

impl ActionEncoder {
    /// `holdout[k]` lists every holdout dose of drug `k`.
    pub fn fit(holdout: &[Vec<f64>]) -> Result<Self> {
        if holdout.is_empty() {
            return Err(Error::invalid("at least one drug is required"));
        }
        Ok(ActionEncoder { drugs: holdout.iter().map(|d| DoseBinner::fit(d)).collect::<Result<_>>()? })
    }

    pub fn cardinality(&self) -> u32 {
        DOSE_BINS.pow(self.drugs.len() as u32)
    }

    pub fn encode_bins(bins: &[u32]) -> u32 {
        bins.iter().fold(0, |acc, &b| acc * DOSE_BINS + b)
    }

    pub fn encode(&self, doses: &[f64]) -> Result<u32> {
        if doses.len() != self.drugs.len() {
            return Err(Error::invalid(format!("expected {} doses, got {}", self.drugs.len(), doses.len())));
        }
        let bins = self.drugs.iter().zip(doses).map(|(b, &d)| b.bin(d)).collect::<Result<Vec<_>>>()?;
        Ok(Self::encode_bins(&bins))
    }
}

/// Maps raw per-step doses (`raw[s][k]` = dose of drug `k` at step `s`) to
/// composite action ids, fitting bins on the holdout dose table.
pub fn discretize_doses(raw: &[Vec<f64>], holdout: &[Vec<f64>]) -> Result<Vec<u32>> {
    let encoder = ActionEncoder::fit(holdout)?;
    raw.iter().map(|d| encoder.encode(d)).collect()
}

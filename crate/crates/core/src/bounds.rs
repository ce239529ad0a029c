//! Sample estimators of the longitudinal causal bounds.
//!
//! For a target sequence `a_{1:t}` each observed trajectory is truncated at
//! `N`, the longest prefix on which its actions agree with the target. It
//! enters the filtered subset when `X_{0:N}` lies in `B_{0:N}`. Matched
//! trajectories (`N = t`) contribute `f(X_{0:t})` to both bounds; the rest
//! contribute the worst-case `y_lo` to the lower bound and `y_up` to the
//! upper bound. The resulting width is `(y_up - y_lo) * (1 - n_match / n)`.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::regions::{BoxRegion, Hypothesis, RegionSequence};
use crate::stats::CompensatedSum;
use crate::trajectory::{Dataset, ObservedTrajectory, TwinDataset};

/// Longest `s <= t` with `A_{1:s} = a_{1:s}`.
pub fn match_length(traj: &ObservedTrajectory, actions: &[u32]) -> usize {
    traj.actions().zip(actions).take_while(|(observed, target)| observed == *target).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryContribution {
    /// Index of the trajectory in its dataset.
    pub record: usize,
    /// Truncation index `N`.
    pub match_length: usize,
    pub in_filter: bool,
    pub y_lo_value: f64,
    pub y_up_value: f64,
}

impl TrajectoryContribution {
    pub fn matched(&self, t: usize) -> bool {
        self.match_length == t
    }
}

fn prefix_in_regions(states: impl Fn(usize) -> bool, upto: usize) -> bool {
    (0..=upto).all(states)
}

/// Contribution of a single trajectory, in or out of the filter.
pub fn contribution(traj: &ObservedTrajectory, index: usize, hyp: &Hypothesis) -> TrajectoryContribution {
    let t = hyp.t;
    let n_match = match_length(traj, &hyp.actions);
    let in_filter = prefix_in_regions(|s| hyp.regions.get(s).contains_unchecked(traj.state(s)), n_match);
    let (y_lo_value, y_up_value) = if n_match == t {
        let y = hyp.outcome.eval(traj.state(t));
        (y, y)
    } else {
        (hyp.outcome.y_lo, hyp.outcome.y_up)
    };
    TrajectoryContribution { record: index, match_length: n_match, in_filter, y_lo_value, y_up_value }
}

/// Contributions of every trajectory in `D(a_{1:t}, B_{0:t})`, in record order.
pub fn obs_filter(data: &Dataset, hyp: &Hypothesis) -> Vec<TrajectoryContribution> {
    data.records.iter().enumerate().map(|(i, r)| contribution(r, i, hyp)).filter(|c| c.in_filter).collect()
}

/// Twin trajectories with `X_0 ∈ B_0` and `X̂_{1:t} ∈ B_{1:t}`, mapped to `Ŷ`.
pub fn twin_outcomes(twin: &TwinDataset, hyp: &Hypothesis) -> Vec<f64> {
    let t = hyp.t;
    twin.records
        .iter()
        .filter(|r| r.states.len() >= t)
        .filter(|r| prefix_in_regions(|s| hyp.regions.get(s).contains_unchecked(r.state(s)), t))
        .map(|r| hyp.outcome.eval(r.state(t)))
        .collect()
}

/// Observational side of [`BoundEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObservationalEstimate {
    pub n: usize,
    pub n_match: usize,
    pub mu_lo: Option<f64>,
    pub mu_up: Option<f64>,
}

pub fn estimate_observational(data: &Dataset, hyp: &Hypothesis) -> ObservationalEstimate {
    let mut lo = CompensatedSum::new();
    let mut up = CompensatedSum::new();
    let mut n = 0usize;
    let mut n_match = 0usize;
    for c in obs_filter(data, hyp) {
        n += 1;
        if c.matched(hyp.t) {
            n_match += 1;
        }
        lo.add(c.y_lo_value);
        up.add(c.y_up_value);
    }
    let mean = |s: CompensatedSum| (n > 0).then(|| s.total() / n as f64);
    ObservationalEstimate { n, n_match, mu_lo: mean(lo), mu_up: mean(up) }
}

/// Filtered counts and sample means for one hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundEstimate {
    pub n: usize,
    pub n_match: usize,
    pub mu_lo: Option<f64>,
    pub mu_up: Option<f64>,
    pub n_hat: usize,
    pub mu_hat: Option<f64>,
    pub y_lo: f64,
    pub y_up: f64,
}

impl BoundEstimate {
    pub fn width(&self) -> Option<f64> {
        Some(self.mu_up? - self.mu_lo?)
    }

    pub fn match_fraction(&self) -> Option<f64> {
        (self.n > 0).then(|| self.n_match as f64 / self.n as f64)
    }
}

/// Estimates `mu_lo`, `mu_up` and `mu_hat`. Zero counts give `None` means.
pub fn estimate_bounds(data: &Dataset, twin: &TwinDataset, hyp: &Hypothesis) -> Result<BoundEstimate> {
    if twin.actions != hyp.actions {
        return Err(Error::Hypothesis {
            id: hyp.id,
            message: format!("twin dataset uses actions {:?}, hypothesis needs {:?}", twin.actions, hyp.actions),
        });
    }
    let obs = estimate_observational(data, hyp);
    let y_hat = twin_outcomes(twin, hyp);
    let n_hat = y_hat.len();
    let mu_hat = crate::stats::mean(&y_hat);
    Ok(BoundEstimate {
        n: obs.n,
        n_match: obs.n_match,
        mu_lo: obs.mu_lo,
        mu_up: obs.mu_up,
        n_hat,
        mu_hat,
        y_lo: hyp.outcome.y_lo,
        y_up: hyp.outcome.y_up,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SharpnessMode {
    AttainLo,
    AttainUp,
}

/// Rewrites a dataset into one whose potential outcomes attain a bound.
///
/// Every trajectory is replaced by its trajectory under `a_{1:t}`: matched
/// ones are unchanged, unmatched ones keep `X_{0:N}` and continue with the
/// fill points, with the outcome feature at time `t` set to `y_lo` or `y_up`.
/// Estimating the bounds on the result collapses both to the original
/// `mu_lo` (or `mu_up`).
pub fn sharpness_transform(
    data: &Dataset,
    hyp: &Hypothesis,
    fill: &[Vec<f64>],
    mode: SharpnessMode,
) -> Result<Dataset> {
    let t = hyp.t;
    if fill.len() != t {
        return Err(Error::invalid(format!("need {t} fill points (x_1..x_t), got {}", fill.len())));
    }
    let target = match mode {
        SharpnessMode::AttainLo => hyp.outcome.y_lo,
        SharpnessMode::AttainUp => hyp.outcome.y_up,
    };
    let mut fill = fill.to_vec();
    if let Some(last) = fill.last_mut() {
        if hyp.outcome.feature >= last.len() {
            return Err(Error::invalid("fill point at t lacks the outcome feature"));
        }
        last[hyp.outcome.feature] = target;
    }
    for (i, x) in fill.iter().enumerate() {
        let s = i + 1;
        if x.len() != data.schema.dims[s] {
            return Err(Error::invalid(format!("fill point x_{s} has wrong dimension")));
        }
        if !hyp.regions.get(s).contains(x)? {
            return Err(Error::invalid(format!("fill point x_{s} (outcome set to {target} at t) lies outside B_{s}")));
        }
    }

    let records = data
        .records
        .iter()
        .map(|r| {
            let n_match = match_length(r, &hyp.actions);
            if n_match == t {
                return r.clone();
            }
            let mut out = r.clone();
            for s in n_match + 1..=t {
                let step = &mut out.steps[s - 1];
                step.action = hyp.actions[s - 1];
                step.observation = fill[s - 1].clone();
            }
            out
        })
        .collect();
    Ok(Dataset { schema: data.schema.clone(), records, provenance: data.provenance.clone() })
}

/// One fill point per `B_1..B_t`, if every region is nonempty.
pub fn default_fill(hyp: &Hypothesis, dims: &[usize]) -> Option<Vec<Vec<f64>>> {
    (1..=hyp.t).map(|s| hyp.regions.get(s).interior_point(dims[s])).collect()
}

/// Unconditional (Manski) version of a hypothesis: every `B_s` is the whole space.
pub fn manski_hypothesis(hyp: &Hypothesis) -> Hypothesis {
    Hypothesis { regions: RegionSequence(vec![BoxRegion::whole(); hyp.regions.len()]), ..hyp.clone() }
}

/// Writes `(id, n, n_match, mu_lo, mu_up, n_hat, mu_hat, width, match_fraction)`
/// rows; undefined means are left blank.
pub fn write_estimates_csv(path: impl AsRef<Path>, rows: impl IntoIterator<Item = (u64, BoundEstimate)>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["hypothesis_id", "n", "n_match", "mu_lo", "mu_up", "n_hat", "mu_hat", "width", "match_fraction"])?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (id, e) in rows {
        w.write_record([
            id.to_string(),
            e.n.to_string(),
            e.n_match.to_string(),
            fmt(e.mu_lo),
            fmt(e.mu_up),
            e.n_hat.to_string(),
            fmt(e.mu_hat),
            fmt(e.width()),
            fmt(e.match_fraction()),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regions::{Constraint, Direction, OutcomeSpec};
    use crate::trajectory::{SchemaSpec, Step, TwinTrajectory};

    fn traj(actions: &[u32], xs: &[f64]) -> ObservedTrajectory {
        ObservedTrajectory {
            x0: vec![0.0],
            steps: actions.iter().zip(xs).map(|(&a, &x)| Step { action: a, observation: vec![x] }).collect(),
        }
    }

    fn hyp(actions: Vec<u32>, regions: RegionSequence) -> Hypothesis {
        let t = actions.len();
        Hypothesis {
            id: 0,
            t,
            outcome: OutcomeSpec { time: t, feature: 0, y_lo: 0.0, y_up: 1.0 },
            actions,
            regions,
            direction: Direction::Lo,
        }
    }

    fn micro() -> Dataset {
        Dataset::new(
            SchemaSpec::uniform(2, 1, 3).unwrap(),
            vec![traj(&[1, 1], &[0.2, 0.5]), traj(&[1, 2], &[0.2, 0.9]), traj(&[2, 1], &[0.2, 0.4])],
        )
        .unwrap()
    }

    #[test]
    fn match_length_examples() {
        assert_eq!(match_length(&traj(&[1, 2], &[0.0, 0.0]), &[1, 1]), 1);
        assert_eq!(match_length(&traj(&[2, 1], &[0.0, 0.0]), &[1, 1]), 0);
        assert_eq!(match_length(&traj(&[1, 1], &[0.0, 0.0]), &[1, 1]), 2);
        assert_eq!(match_length(&traj(&[1, 1], &[0.0, 0.0]), &[1]), 1);
    }

    #[test]
    fn micro_dataset_contributions() {
        let h = hyp(vec![1, 1], RegionSequence::whole(2));
        let c = obs_filter(&micro(), &h);
        let lo: Vec<f64> = c.iter().map(|c| c.y_lo_value).collect();
        let up: Vec<f64> = c.iter().map(|c| c.y_up_value).collect();
        assert_eq!(lo, vec![0.5, 0.0, 0.0]);
        assert_eq!(up, vec![0.5, 1.0, 1.0]);
        assert_eq!(c.iter().map(|c| c.match_length).collect::<Vec<_>>(), vec![2, 1, 0]);
    }

    #[test]
    fn micro_dataset_estimate() {
        let h = hyp(vec![1, 1], RegionSequence::whole(2));
        let twin = TwinDataset::empty(micro().schema.clone(), vec![1, 1]);
        let e = estimate_bounds(&micro(), &twin, &h).unwrap();
        assert_eq!((e.n, e.n_match), (3, 1));
        assert_eq!(e.mu_lo, Some(0.5 / 3.0));
        assert_eq!(e.mu_up, Some(2.5 / 3.0));
        assert!((e.mu_lo.unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!((e.mu_up.unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert!((e.width().unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(e.n_hat, 0);
        assert_eq!(e.mu_hat, None);
    }

    #[test]
    fn filter_truncates_at_n() {
        // N = 1, X_1 outside B_1: excluded. X_2 outside B_2 does not matter.
        let b1 = BoxRegion::new([Constraint::closed(0, 0.0, 0.1)]).unwrap();
        let h = hyp(vec![1, 1], RegionSequence(vec![BoxRegion::whole(), b1, BoxRegion::whole()]));
        let c = obs_filter(&micro(), &h);
        // Trajectories 0 and 1 reach step 1 with X_1 = 0.2 outside B_1; 2 has N = 0.
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].record, 2);
    }

    #[test]
    fn full_match_gives_zero_width() {
        let data = Dataset::new(
            SchemaSpec::uniform(1, 1, 2).unwrap(),
            vec![traj(&[1], &[0.3]), traj(&[1], &[7.0]), traj(&[1], &[-1.0])],
        )
        .unwrap();
        let e = estimate_observational(&data, &hyp(vec![1], RegionSequence::whole(1)));
        assert_eq!(e.mu_lo, e.mu_up);
        assert_eq!(e.n_match, 3);
    }

    #[test]
    fn twin_filter_checks_all_states() {
        let schema = SchemaSpec::uniform(2, 1, 3).unwrap();
        let b2 = BoxRegion::new([Constraint::closed(0, 0.0, 0.6)]).unwrap();
        let h = hyp(vec![1, 1], RegionSequence(vec![BoxRegion::whole(), BoxRegion::whole(), b2]));
        let twin = TwinDataset {
            schema: schema.clone(),
            actions: vec![1, 1],
            records: vec![
                TwinTrajectory { x0: vec![0.0], actions: vec![1, 1], states: vec![vec![5.0], vec![0.5]] },
                TwinTrajectory { x0: vec![0.0], actions: vec![1, 1], states: vec![vec![5.0], vec![0.7]] },
            ],
            provenance: Default::default(),
        };
        assert_eq!(twin_outcomes(&twin, &h), vec![0.5]);
        let wrong = TwinDataset::empty(schema, vec![1, 2]);
        assert!(estimate_bounds(&micro(), &wrong, &h).is_err());
    }

    #[test]
    fn sharpness_on_micro() {
        let h = hyp(vec![1, 1], RegionSequence::whole(2));
        let data = micro();
        let orig = estimate_observational(&data, &h);
        let fill = default_fill(&h, &data.schema.dims).unwrap();
        let lo = estimate_observational(&sharpness_transform(&data, &h, &fill, SharpnessMode::AttainLo).unwrap(), &h);
        assert_eq!(lo.mu_lo, orig.mu_lo);
        assert_eq!(lo.mu_up, orig.mu_lo);
        let up = estimate_observational(&sharpness_transform(&data, &h, &fill, SharpnessMode::AttainUp).unwrap(), &h);
        assert_eq!(up.mu_lo, orig.mu_up);
        assert_eq!(up.mu_up, orig.mu_up);
    }

    #[test]
    fn sharpness_identity_when_all_match() {
        let data =
            Dataset::new(SchemaSpec::uniform(1, 1, 2).unwrap(), vec![traj(&[1], &[0.3]), traj(&[1], &[0.9])]).unwrap();
        let h = hyp(vec![1], RegionSequence::whole(1));
        let out = sharpness_transform(&data, &h, &[vec![0.5]], SharpnessMode::AttainLo).unwrap();
        assert_eq!(out, data);
    }

    #[test]
    fn sharpness_rejects_fill_outside_region() {
        let b1 = BoxRegion::new([Constraint::closed(0, 2.0, 3.0)]).unwrap();
        let h = hyp(vec![1], RegionSequence(vec![BoxRegion::whole(), b1]));
        let data = micro();
        // The outcome coordinate is forced to y_lo = 0, outside [2, 3].
        assert!(sharpness_transform(&data, &h, &[vec![2.5]], SharpnessMode::AttainLo).is_err());
    }

    #[test]
    fn manski_clears_regions() {
        let b1 = BoxRegion::new([Constraint::closed(0, 0.0, 0.1)]).unwrap();
        let h = hyp(vec![1], RegionSequence(vec![BoxRegion::whole(), b1]));
        let m = manski_hypothesis(&h);
        assert!(m.regions.is_whole());
        assert_eq!(m.regions.len(), 2);
        let whole = hyp(vec![1], RegionSequence::whole(1));
        assert_eq!(
            estimate_observational(&micro(), &manski_hypothesis(&whole)),
            estimate_observational(&micro(), &whole)
        );
    }
}

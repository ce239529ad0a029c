use serde::Serialize;

use crate::bounds::{contribution, twin_outcomes};
use crate::error::Result;
use crate::regions::{Direction, Hypothesis};
use crate::trajectory::{Dataset, TwinDataset};

pub const INSUFFICIENT_DATA: &str = "insufficient data";

/// One twin-versus-observed comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticCase {
    pub name: &'static str,
    pub twin: Option<f64>,
    pub observed: Option<f64>,
    /// `twin - observed`, in the negated frame for `H_lo`.
    pub difference: Option<f64>,
    pub exceeds_zero: bool,
    pub note: Option<&'static str>,
}

/// Empirical decomposition of a rejected hypothesis.
///
/// For `H_up` a rejection implies the twin puts more mass at or above `y_up`,
/// more mass above `y_lo`, or a larger mean inside `(y_lo, y_up)` than the
/// data. `H_lo` is reported on `-f`, so "exceeds zero" has the same meaning.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectionDiagnostics {
    pub hypothesis_id: u64,
    pub direction: Direction,
    pub n_twin: usize,
    pub n_observed: usize,
    pub cases: Vec<DiagnosticCase>,
}

fn frac(values: &[f64], pred: impl Fn(f64) -> bool) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().filter(|&&v| pred(v)).count() as f64 / values.len() as f64)
}

fn interior_mean(values: &[f64], lo: f64, up: f64) -> Option<f64> {
    let inside: Vec<f64> = values.iter().copied().filter(|&v| lo < v && v < up).collect();
    crate::stats::mean(&inside)
}

fn case(name: &'static str, twin: Option<f64>, observed: Option<f64>) -> DiagnosticCase {
    let difference = twin.zip(observed).map(|(a, b)| a - b);
    DiagnosticCase {
        name,
        twin,
        observed,
        difference,
        exceeds_zero: difference.is_some_and(|d| d > 0.0),
        note: difference.is_none().then_some(INSUFFICIENT_DATA),
    }
}

/// Computes the three comparisons on unclipped outcomes: twin trajectories
/// passing the twin filter against fully matched, filtered observations.
pub fn rejection_diagnostics(data: &Dataset, twin: &TwinDataset, hyp: &Hypothesis) -> Result<RejectionDiagnostics> {
    let sign = match hyp.direction {
        Direction::Up => 1.0,
        Direction::Lo => -1.0,
    };
    let (lo, up) = match hyp.direction {
        Direction::Up => (hyp.outcome.y_lo, hyp.outcome.y_up),
        Direction::Lo => (-hyp.outcome.y_up, -hyp.outcome.y_lo),
    };
    let raw = Hypothesis {
        outcome: crate::regions::OutcomeSpec { y_lo: f64::NEG_INFINITY, y_up: f64::INFINITY, ..hyp.outcome },
        ..hyp.clone()
    };
    let feature = hyp.outcome.feature;
    let observed: Vec<f64> = data
        .records
        .iter()
        .enumerate()
        .filter(|(i, r)| {
            let c = contribution(r, *i, hyp);
            c.in_filter && c.matched(hyp.t)
        })
        .map(|(_, r)| sign * r.state(hyp.t)[feature])
        .collect();
    let twin_z: Vec<f64> = twin_outcomes(twin, &raw).into_iter().map(|z| sign * z).collect();

    let cases = vec![
        case("P(Z >= y_up)", frac(&twin_z, |z| z >= up), frac(&observed, |z| z >= up)),
        case("P(Z > y_lo)", frac(&twin_z, |z| z > lo), frac(&observed, |z| z > lo)),
        case("E[Z | y_lo < Z < y_up]", interior_mean(&twin_z, lo, up), interior_mean(&observed, lo, up)),
    ];
    Ok(RejectionDiagnostics {
        hypothesis_id: hyp.id,
        direction: hyp.direction,
        n_twin: twin_z.len(),
        n_observed: observed.len(),
        cases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regions::{OutcomeSpec, RegionSequence};
    use crate::trajectory::{ObservedTrajectory, SchemaSpec, Step, TwinTrajectory};

    fn world(obs: &[f64], tw: &[f64], direction: Direction) -> (Dataset, TwinDataset, Hypothesis) {
        let schema = SchemaSpec::uniform(1, 1, 2).unwrap();
        let data = Dataset::new(
            schema.clone(),
            obs.iter()
                .map(|&z| ObservedTrajectory { x0: vec![0.0], steps: vec![Step { action: 1, observation: vec![z] }] })
                .collect(),
        )
        .unwrap();
        let twin = TwinDataset {
            schema,
            actions: vec![1],
            records: tw
                .iter()
                .map(|&z| TwinTrajectory { x0: vec![0.0], actions: vec![1], states: vec![vec![z]] })
                .collect(),
            provenance: Default::default(),
        };
        let hyp = Hypothesis {
            id: 1,
            t: 1,
            outcome: OutcomeSpec { time: 1, feature: 0, y_lo: 0.0, y_up: 1.0 },
            actions: vec![1],
            regions: RegionSequence::whole(1),
            direction,
        };
        (data, twin, hyp)
    }

    #[test]
    fn identical_samples_give_zero_differences() {
        let z = [-0.5, 0.2, 0.4, 0.9, 1.3];
        for dir in [Direction::Up, Direction::Lo] {
            let (d, t, h) = world(&z, &z, dir);
            let r = rejection_diagnostics(&d, &t, &h).unwrap();
            for c in &r.cases {
                assert_eq!(c.difference, Some(0.0), "{}", c.name);
                assert!(!c.exceeds_zero);
            }
        }
    }

    #[test]
    fn full_separation_above() {
        let (d, t, h) = world(&[0.1, 0.5, 0.7], &[1.0, 2.0, 5.0], Direction::Up);
        let r = rejection_diagnostics(&d, &t, &h).unwrap();
        assert_eq!(r.cases[0].difference, Some(1.0));
        assert!(r.cases[0].exceeds_zero);
        assert_eq!(r.cases[2].note, Some(INSUFFICIENT_DATA));
        assert_eq!(r.cases[2].difference, None);
    }

    #[test]
    fn lower_direction_uses_negated_frame() {
        // Twin sits below y_lo: violates H_lo; case 1 is P(Z <= y_lo).
        let (d, t, h) = world(&[0.3, 0.5], &[-1.0, -2.0], Direction::Lo);
        let r = rejection_diagnostics(&d, &t, &h).unwrap();
        assert_eq!(r.cases[0].difference, Some(1.0));
    }
}

//! Test-side oracles and case builders, written independently of the crate's
//! own implementations. Shared with the acceptance suite of the CLI crate.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twinfalsify::regions::{
    BinRule, BoxRegion, Constraint, Direction, FeatureRef, GeneratorConfig, Hypothesis, OutcomeSpec, RegionSequence,
};
use twinfalsify::trajectory::{Dataset, ObservedTrajectory, SchemaSpec, Step};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Values on a coarse half-integer grid so region boundaries get hit.
fn grid_value(r: &mut ChaCha8Rng) -> f64 {
    r.random_range(-4i32..=4) as f64 * 0.5
}

pub struct Case {
    pub data: Dataset,
    pub hyp: Hypothesis,
}

/// Random small dataset plus a hypothesis over it.
///
/// With `sharp` set, `B_t` never constrains the outcome feature, so a fill
/// point with the outcome moved to `y_lo` or `y_up` stays inside `B_t`.
pub fn random_case(seed: u64, sharp: bool) -> Case {
    let mut r = rng(seed);
    let horizon = r.random_range(1..=3usize);
    let d = r.random_range(1..=2usize);
    let k = r.random_range(1..=3u32);
    let schema = SchemaSpec::uniform(horizon, d, k).unwrap();
    let n = r.random_range(1..=40usize);
    let records: Vec<ObservedTrajectory> = (0..n)
        .map(|_| ObservedTrajectory {
            x0: (0..d).map(|_| grid_value(&mut r)).collect(),
            steps: (0..horizon)
                .map(|_| Step {
                    action: r.random_range(0..k),
                    observation: (0..d).map(|_| grid_value(&mut r)).collect(),
                })
                .collect(),
        })
        .collect();
    let t = r.random_range(1..=horizon);
    let actions: Vec<u32> = if r.random_bool(0.6) {
        // Borrow a realised prefix so some trajectories match.
        let src = &records[r.random_range(0..n)];
        src.actions().take(t).collect()
    } else {
        (0..t).map(|_| r.random_range(0..k)).collect()
    };
    let feature = r.random_range(0..d);
    let y_lo = grid_value(&mut r);
    let y_up = y_lo + r.random_range(1..=6) as f64 * 0.5;
    let regions = RegionSequence(
        (0..=t)
            .map(|s| {
                if r.random_bool(0.4) {
                    return BoxRegion::whole();
                }
                let f = r.random_range(0..d);
                if sharp && s == t && f == feature {
                    return BoxRegion::whole();
                }
                let lo = grid_value(&mut r);
                let hi = lo + r.random_range(1..=6) as f64 * 0.5;
                let c = match r.random_range(0..3) {
                    0 => Constraint::half_open(f, Some(lo), Some(hi)),
                    1 => Constraint::half_open(f, None, Some(hi)),
                    _ => Constraint::closed(f, lo, hi),
                };
                BoxRegion::new([c]).unwrap()
            })
            .collect(),
    );
    let hyp = Hypothesis {
        id: seed,
        t,
        outcome: OutcomeSpec { time: t, feature, y_lo, y_up },
        actions,
        regions,
        direction: if r.random_bool(0.5) { Direction::Lo } else { Direction::Up },
    };
    hyp.validate(&schema).unwrap();
    Case { data: Dataset::new(schema, records).unwrap(), hyp }
}

/// `1000` log-spaced levels `10^(-6 + 6k/999)`.
pub fn log_grid() -> Vec<f64> {
    (0..1000).map(|k| 10f64.powf(-6.0 + 6.0 * k as f64 / 999.0)).collect()
}

/// Smallest grid level at which the Hoeffding test rejects, or 1.
///
/// Evaluates the endpoints directly: `mu_lo - R sqrt(ln(2/a)/2n)` against
/// `mu_hat + R sqrt(ln(2/a)/2n̂)`.
pub fn grid_p_value(mu_lo: f64, mu_hat: f64, range: f64, n: usize, n_hat: usize) -> f64 {
    for a in log_grid() {
        let half = (2.0 / a).ln() / 2.0;
        let q_lo = mu_lo - range * (half / n as f64).sqrt();
        let q_hat = mu_hat + range * (half / n_hat as f64).sqrt();
        if q_hat < q_lo {
            return a;
        }
    }
    1.0
}

/// Ratio between consecutive grid levels.
pub fn grid_step() -> f64 {
    10f64.powf(6.0 / 999.0)
}

fn nearest_rank_quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // ceil(q n) with a tolerance for products such as 0.7 * 10.
    let x = q * v.len() as f64;
    let k = if (x - x.round()).abs() < 1e-9 { x.round() } else { x.ceil() };
    v[(k as usize).clamp(1, v.len()) - 1]
}

/// One hypothesis tuple in a representation independent of the crate's
/// region types: per timestep, per constrained feature, `[lo, hi)` bounds as
/// bit patterns (infinite ends included).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Tuple {
    pub feature: usize,
    pub t: usize,
    pub actions: Vec<u32>,
    pub cells: Vec<Vec<(usize, u64, u64)>>,
    pub y_lo: u64,
    pub y_up: u64,
}

/// Brute-force enumeration of every `(t, a_{1:t}, cell sequence)` over the
/// full product space, keeping cells realised by at least `min_support`
/// holdout trajectories. Only half-open bins are supported.
pub fn brute_force_tuples(holdout: &Dataset, config: &GeneratorConfig) -> BTreeSet<Tuple> {
    let schema = &holdout.schema;
    let mut out = BTreeSet::new();
    for &feature in &config.outcome_features {
        let max_t = *config.timesteps.iter().max().unwrap();
        // bins[s] = per discretizer (feature index, sorted distinct cuts)
        let bins: Vec<Vec<(usize, Vec<f64>)>> = (0..=max_t)
            .map(|s| {
                config
                    .bin_plan
                    .iter()
                    .map(|d| {
                        let f = match d.feature {
                            FeatureRef::Index(i) => i,
                            FeatureRef::Outcome => feature,
                        };
                        let mut cuts: Vec<f64> = match &d.rule {
                            BinRule::Cuts(c) => c.clone(),
                            BinRule::Quantiles(qs) => {
                                let col: Vec<f64> = holdout.records.iter().map(|r| state(r, s)[f]).collect();
                                qs.iter().map(|&q| nearest_rank_quantile(&col, q)).collect()
                            }
                        };
                        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
                        cuts.dedup();
                        (f, cuts)
                    })
                    .collect()
            })
            .collect();
        for &t in &config.timesteps {
            // Enumerate all action sequences.
            let mut seqs: Vec<Vec<u32>> = vec![vec![]];
            for s in 0..t {
                seqs = seqs
                    .into_iter()
                    .flat_map(|p| {
                        (0..schema.action_cardinalities[s]).map(move |a| {
                            let mut q = p.clone();
                            q.push(a);
                            q
                        })
                    })
                    .collect();
            }
            // Enumerate all cell sequences: one bin index per discretizer per step.
            let mut radices = Vec::new();
            for step in &bins[..=t] {
                for (_, cuts) in step {
                    radices.push(cuts.len() + 1);
                }
            }
            let total: usize = radices.iter().product();
            for actions in &seqs {
                for code in 0..total {
                    let mut digits = Vec::with_capacity(radices.len());
                    let mut c = code;
                    for &r in &radices {
                        digits.push(c % r);
                        c /= r;
                    }
                    // Per step, per feature: intersect the chosen bins.
                    let mut cells = Vec::new();
                    let mut di = 0;
                    for step in &bins[..=t] {
                        let mut per: std::collections::BTreeMap<usize, (f64, f64)> = Default::default();
                        for (f, cuts) in step {
                            let b = digits[di];
                            di += 1;
                            let lo = if b == 0 { f64::NEG_INFINITY } else { cuts[b - 1] };
                            let hi = if b == cuts.len() { f64::INFINITY } else { cuts[b] };
                            let e = per.entry(*f).or_insert((f64::NEG_INFINITY, f64::INFINITY));
                            e.0 = e.0.max(lo);
                            e.1 = e.1.min(hi);
                        }
                        cells.push(per);
                    }
                    let members: Vec<f64> = holdout
                        .records
                        .iter()
                        .filter(|r| r.actions().take(t).eq(actions.iter().copied()))
                        .filter(|r| {
                            cells.iter().enumerate().all(|(s, per)| {
                                per.iter().all(|(&f, &(lo, hi))| {
                                    let v = state(r, s)[f];
                                    lo <= v && v < hi
                                })
                            })
                        })
                        .map(|r| state(r, t)[feature])
                        .collect();
                    if members.is_empty() || members.len() < config.min_support {
                        continue;
                    }
                    let y_lo = nearest_rank_quantile(&members, config.quantile_lo);
                    let y_up = nearest_rank_quantile(&members, config.quantile_up);
                    if y_lo >= y_up {
                        continue;
                    }
                    out.insert(Tuple {
                        feature,
                        t,
                        actions: actions.clone(),
                        cells: cells
                            .iter()
                            .map(|per| {
                                per.iter()
                                    .filter(|(_, &(lo, hi))| lo.is_finite() || hi.is_finite())
                                    .map(|(&f, &(lo, hi))| (f, lo.to_bits(), hi.to_bits()))
                                    .collect()
                            })
                            .collect(),
                        y_lo: y_lo.to_bits(),
                        y_up: y_up.to_bits(),
                    });
                }
            }
        }
    }
    out
}

fn state(r: &ObservedTrajectory, s: usize) -> &[f64] {
    if s == 0 {
        &r.x0
    } else {
        &r.steps[s - 1].observation
    }
}

/// Converts generated hypotheses (one per direction) into tuples.
pub fn generated_tuples(hyps: &[Hypothesis]) -> BTreeSet<Tuple> {
    hyps.iter()
        .filter(|h| h.direction == Direction::Lo)
        .map(|h| Tuple {
            feature: h.outcome.feature,
            t: h.t,
            actions: h.actions.clone(),
            cells: h
                .regions
                .0
                .iter()
                .map(|b| {
                    let mut per: std::collections::BTreeMap<usize, (f64, f64)> = Default::default();
                    for c in b.constraints() {
                        assert!(c.lo_closed || c.lo.is_infinite());
                        assert!(!c.hi_closed || c.hi.is_infinite());
                        let e = per.entry(c.feature).or_insert((f64::NEG_INFINITY, f64::INFINITY));
                        e.0 = e.0.max(c.lo);
                        e.1 = e.1.min(c.hi);
                    }
                    per.into_iter()
                        .filter(|(_, (lo, hi))| lo.is_finite() || hi.is_finite())
                        .map(|(f, (lo, hi))| (f, lo.to_bits(), hi.to_bits()))
                        .collect()
                })
                .collect(),
            y_lo: h.outcome.y_lo.to_bits(),
            y_up: h.outcome.y_up.to_bits(),
        })
        .collect()
}

/// Bin plan used by the generator equivalence checks: a fixed cut on
/// feature 0, holdout quartiles of feature 1 and a median split of the outcome.
pub fn equivalence_plan(timesteps: Vec<usize>) -> GeneratorConfig {
    GeneratorConfig {
        quantile_lo: 0.2,
        quantile_up: 0.8,
        bin_plan: vec![
            twinfalsify::regions::Discretizer { feature: FeatureRef::Index(0), rule: BinRule::Cuts(vec![10.0]) },
            twinfalsify::regions::Discretizer {
                feature: FeatureRef::Index(1),
                rule: BinRule::Quantiles(vec![0.25, 0.5, 0.75]),
            },
            twinfalsify::regions::Discretizer { feature: FeatureRef::Outcome, rule: BinRule::Quantiles(vec![0.5]) },
        ],
        outcome_features: vec![0, 1],
        timesteps,
        min_support: 3,
    }
}

//! Browser front end: three operations over the synthetic confounded process,
//! each returning a JSON string for the page script.

use serde::Serialize;
use twinfalsify::bounds::{estimate_bounds, BoundEstimate};
use twinfalsify::intervals::{hoeffding_delta, Backend};
use twinfalsify::regions::{
    generate_hypotheses, BinRule, BoxRegion, Constraint, Direction, Discretizer, FeatureRef, GeneratorConfig,
    Hypothesis, OutcomeSpec, RegionSequence,
};
use twinfalsify::synth::{
    generate_observational, generate_twin, generate_twin_collection, interventional_oracle, sequence_master,
    SynthConfig, TwinMode,
};
use twinfalsify::testing::{test_with_collection, FamilyReport, Multiplicity, TestConfig};
use twinfalsify::trajectory::split_holdout;
use twinfalsify::Result;
use wasm_bindgen::prelude::*;

const Y_RANGE: (f64, f64) = (6.0, 16.0);
const ORACLE_DRAWS: usize = 20_000;

fn process(p_u: f64, effect: f64, policy_bias: f64) -> SynthConfig {
    SynthConfig { p_u, effect, policy_bias, ..SynthConfig::default() }
}

fn mode(shift: f64) -> TwinMode {
    if shift == 0.0 {
        TwinMode::Correct
    } else {
        TwinMode::BiasedShift { delta: shift }
    }
}

/// `B_0` choice: 0 whole space, 1 `x0[1] < 10`, 2 `x0[1] >= 10`.
fn initial_region(choice: u32) -> BoxRegion {
    match choice {
        1 => BoxRegion::new([Constraint::half_open(1, None, Some(10.0))]).unwrap(),
        2 => BoxRegion::new([Constraint::half_open(1, Some(10.0), None)]).unwrap(),
        _ => BoxRegion::whole(),
    }
}

fn to_json<T: Serialize>(r: Result<T>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| format!(r#"{{"error":"{e}"}}"#)),
        Err(e) => serde_json::json!({ "error": e.to_string() }).to_string(),
    }
}

#[derive(Debug, Serialize)]
pub struct BoundsView {
    pub estimate: BoundEstimate,
    /// Hoeffding half-width at α = 0.05 for the observational side.
    pub delta: f64,
    /// Rejection-sampled interventional mean of the true process.
    pub truth: f64,
    pub naive: Option<f64>,
}

/// Bounds on `E[Y(a) | B]` next to the twin estimate and the truth.
pub fn bounds_view(
    cfg: &SynthConfig,
    n: usize,
    actions: &[u32],
    region: u32,
    shift: f64,
    seed: u64,
) -> Result<BoundsView> {
    let t = actions.len();
    let mut regions = RegionSequence::whole(t);
    regions.0[0] = initial_region(region);
    let hyp = Hypothesis {
        id: 0,
        t,
        outcome: OutcomeSpec { time: t, feature: 0, y_lo: Y_RANGE.0, y_up: Y_RANGE.1 },
        actions: actions.to_vec(),
        regions,
        direction: Direction::Lo,
    };
    let data = generate_observational(cfg, n, seed)?;
    let pool: Vec<Vec<f64>> = data.records.iter().map(|r| r.x0.clone()).collect();
    let twin = generate_twin(cfg, mode(shift), &pool, actions, n, sequence_master(seed, actions))?;
    let estimate = estimate_bounds(&data, &twin, &hyp)?;
    // Mean over trajectories that happened to follow the actions: what a
    // confounding-blind comparison would use.
    let followed: Vec<f64> = data
        .records
        .iter()
        .filter(|r| r.actions().take(t).eq(actions.iter().copied()))
        .filter(|r| (0..=t).all(|s| hyp.regions.get(s).contains(r.state(s)).unwrap_or(false)))
        .map(|r| hyp.outcome.eval(r.state(t)))
        .collect();
    Ok(BoundsView {
        estimate,
        delta: hoeffding_delta(Y_RANGE.1 - Y_RANGE.0, estimate.n.max(1), 0.05),
        truth: interventional_oracle(cfg, &hyp, ORACLE_DRAWS, seed ^ 0x5eed)?.mean,
        naive: twinfalsify::stats::mean(&followed),
    })
}

#[derive(Debug, Serialize)]
pub struct FamilyRow {
    pub id: u64,
    pub t: usize,
    pub actions: Vec<u32>,
    pub cells: String,
    pub direction: &'static str,
    pub p: f64,
    pub gate: Option<&'static str>,
    pub rejected: bool,
    pub mu_lo: Option<f64>,
    pub mu_up: Option<f64>,
    pub mu_hat: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct FamilyView {
    pub hypotheses: usize,
    pub rejections: usize,
    pub rows: Vec<FamilyRow>,
}

fn describe_cells(h: &Hypothesis) -> String {
    h.regions
        .0
        .iter()
        .map(|b| {
            b.constraints()
                .iter()
                .map(|c| format!("x[{}] in [{:.2}, {:.2})", c.feature, c.lo, c.hi))
                .collect::<Vec<_>>()
                .join(" & ")
        })
        .map(|s| if s.is_empty() { "any".to_string() } else { s })
        .collect::<Vec<_>>()
        .join(" | ")
}

fn generator() -> GeneratorConfig {
    GeneratorConfig {
        quantile_lo: 0.2,
        quantile_up: 0.8,
        bin_plan: vec![Discretizer { feature: FeatureRef::Outcome, rule: BinRule::Quantiles(vec![0.5]) }],
        outcome_features: vec![0],
        timesteps: vec![1, 2],
        min_support: 20,
    }
}

/// Generates hypotheses on a holdout and tests the twin against the rest.
pub fn family_view(cfg: &SynthConfig, n: usize, shift: f64, bootstrap: bool, seed: u64) -> Result<FamilyView> {
    let data = generate_observational(cfg, n, seed)?;
    let (holdout, rest) = split_holdout(&data, 0.2, seed)?;
    let hyps = generate_hypotheses(&holdout, &generator())?.hypotheses;
    let mut sequences: Vec<Vec<u32>> = hyps.iter().map(|h| h.actions.clone()).collect();
    sequences.sort();
    sequences.dedup();
    let pool: Vec<Vec<f64>> = rest.records.iter().map(|r| r.x0.clone()).collect();
    let twins = generate_twin_collection(cfg, mode(shift), &pool, &sequences, pool.len(), seed)?;
    let test = TestConfig {
        backend: if bootstrap { Backend::BootstrapReversePercentile } else { Backend::Hoeffding },
        seed,
        ..TestConfig::default()
    };
    let results = hyps.iter().map(|h| test_with_collection(&rest, &twins, h, &test)).collect::<Result<Vec<_>>>()?;
    let report = FamilyReport::from_results(results, Multiplicity::HolmBonferroni, 0.05);
    let rows = report
        .results
        .iter()
        .zip(&report.multiplicity.decisions)
        .zip(&hyps)
        .map(|((r, &rejected), h)| FamilyRow {
            id: r.id,
            t: r.t,
            actions: h.actions.clone(),
            cells: describe_cells(h),
            direction: r.direction.as_str(),
            p: r.p_value,
            gate: r.gate.map(|g| g.as_str()),
            rejected,
            mu_lo: r.estimate.mu_lo,
            mu_up: r.estimate.mu_up,
            mu_hat: r.estimate.mu_hat,
        })
        .collect();
    Ok(FamilyView { hypotheses: report.results.len(), rejections: report.rejections(), rows })
}

#[derive(Debug, Serialize)]
pub struct PowerPoint {
    pub shift: f64,
    /// Share of replicates with at least one Holm rejection.
    pub falsified: f64,
}

/// Falsification rate against twin shift, over `replicates` fresh datasets.
pub fn power_curve(cfg: &SynthConfig, n: usize, shifts: &[f64], replicates: u32, seed: u64) -> Result<Vec<PowerPoint>> {
    shifts
        .iter()
        .map(|&shift| {
            let mut hits = 0;
            for r in 0..replicates {
                let view = family_view(cfg, n, shift, false, seed.wrapping_add(u64::from(r)))?;
                if view.rejections > 0 {
                    hits += 1;
                }
            }
            Ok(PowerPoint { shift, falsified: f64::from(hits) / f64::from(replicates.max(1)) })
        })
        .collect()
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn explore_bounds(
    n: usize,
    p_u: f64,
    effect: f64,
    policy_bias: f64,
    actions: Vec<u32>,
    region: u32,
    shift: f64,
    seed: u64,
) -> String {
    to_json(bounds_view(&process(p_u, effect, policy_bias), n, &actions, region, shift, seed))
}

#[wasm_bindgen]
pub fn falsify(n: usize, p_u: f64, effect: f64, policy_bias: f64, shift: f64, bootstrap: bool, seed: u64) -> String {
    to_json(family_view(&process(p_u, effect, policy_bias), n, shift, bootstrap, seed))
}

#[wasm_bindgen]
pub fn power(
    n: usize,
    p_u: f64,
    effect: f64,
    policy_bias: f64,
    shifts: Vec<f64>,
    replicates: u32,
    seed: u64,
) -> String {
    to_json(power_curve(&process(p_u, effect, policy_bias), n, &shifts, replicates, seed))
}

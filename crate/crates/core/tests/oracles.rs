mod common;

use rand::Rng;
use twinfalsify::bounds::{estimate_bounds, estimate_observational, BoundEstimate};
use twinfalsify::regions::{
    generate_hypotheses, BoxRegion, Constraint, Direction, Hypothesis, OutcomeSpec, RegionSequence,
};
use twinfalsify::synth::{
    generate_observational, generate_twin, interventional_mean, interventional_oracle, SynthConfig, TwinMode,
};
use twinfalsify::testing::{hoeffding_endpoints, hoeffding_p_value};
use twinfalsify::trajectory::split_holdout;

fn estimate(mu_lo: f64, mu_hat: f64, range: f64, n: usize, n_hat: usize) -> BoundEstimate {
    BoundEstimate {
        n,
        n_match: n,
        mu_lo: Some(mu_lo),
        mu_up: Some(mu_lo + range / 2.0),
        n_hat,
        mu_hat: Some(mu_hat),
        y_lo: 0.0,
        y_up: range,
    }
}

#[test]
fn closed_form_p_value_agrees_with_grid_search() {
    let mut r = common::rng(11);
    let step = common::grid_step();
    let mut interior = 0;
    for _ in 0..2000 {
        let range = r.random_range(0.5..4.0);
        let n = r.random_range(1..3000);
        let n_hat = r.random_range(1..3000);
        let mu_lo = r.random_range(0.0..range / 2.0);
        // Gap in units of the combined half-width scale.
        let c = range * ((0.5 / n as f64).sqrt() + (0.5 / n_hat as f64).sqrt());
        let mu_hat = mu_lo - r.random_range(-0.5..4.5) * c;
        let est = estimate(mu_lo, mu_hat, range, n, n_hat);
        let p = hoeffding_p_value(&est, Direction::Lo).unwrap();
        let grid = common::grid_p_value(mu_lo, mu_hat, range, n, n_hat);
        if p >= 1.0 {
            assert_eq!(grid, 1.0);
        } else if p <= 1e-6 {
            assert_eq!(grid, 1e-6);
        } else {
            interior += 1;
            // The grid answer is the first grid level at or above the exact p.
            assert!(p <= grid * (1.0 + 1e-9), "p {p} grid {grid}");
            assert!(grid <= p * step * (1.0 + 1e-9), "p {p} grid {grid}");
        }
    }
    assert!(interior > 500);
}

#[test]
fn endpoints_reject_exactly_below_p() {
    let est = estimate(0.6, 0.45, 1.0, 400, 300);
    let p = hoeffding_p_value(&est, Direction::Lo).unwrap();
    for a in common::log_grid() {
        let (bound, twin) = hoeffding_endpoints(&est, Direction::Lo, a).unwrap();
        if (a - p).abs() > 1e-9 * p {
            assert_eq!(twin < bound, a > p, "alpha {a} p {p}");
        }
    }
}

#[test]
fn worked_example_p_value() {
    // gap 0.3 with R (sqrt(1/2n) + sqrt(1/2n̂)) = 0.1 gives 2 exp(-9).
    let est = estimate(0.5, 0.2, 1.0, 200, 200);
    let p = hoeffding_p_value(&est, Direction::Lo).unwrap();
    assert!((p - 2.0 * (-9.0f64).exp()).abs() < 1e-15);
    assert!((p - 2.468196e-4).abs() < 1e-9);
}

#[test]
fn generator_matches_brute_force_enumeration() {
    for seed in 0..4u64 {
        let cfg = SynthConfig { horizon: 2, d: 2, actions: 2, policy_bias: 0.6, ..SynthConfig::default() };
        let data = generate_observational(&cfg, 2500, seed).unwrap();
        let (holdout, _) = split_holdout(&data, 0.2, seed).unwrap();
        assert_eq!(holdout.len(), 500);
        let gcfg = common::equivalence_plan(vec![1, 2]);
        let out = generate_hypotheses(&holdout, &gcfg).unwrap();
        let generated = common::generated_tuples(&out.hypotheses);
        let brute = common::brute_force_tuples(&holdout, &gcfg);
        assert!(!brute.is_empty());
        assert_eq!(generated, brute, "seed {seed}");
        // Both directions for every tuple.
        assert_eq!(out.hypotheses.len(), 2 * generated.len());
    }
}

fn whole(actions: Vec<u32>, y_lo: f64, y_up: f64) -> Hypothesis {
    let t = actions.len();
    Hypothesis {
        id: 0,
        t,
        outcome: OutcomeSpec { time: t, feature: 0, y_lo, y_up },
        actions,
        regions: RegionSequence::whole(t),
        direction: Direction::Lo,
    }
}

/// Mean of the outcome over observational trajectories that followed `actions`.
fn observed_conditional_mean(cfg: &SynthConfig, actions: &[u32], n: usize) -> (f64, usize) {
    let data = generate_observational(cfg, n, 5).unwrap();
    let ys: Vec<f64> = data
        .records
        .iter()
        .filter(|r| r.actions().eq(actions.iter().copied()))
        .map(|r| r.state(actions.len())[0])
        .collect();
    (ys.iter().sum::<f64>() / ys.len() as f64, ys.len())
}

#[test]
fn confounding_separates_observational_from_interventional() {
    let cfg = SynthConfig { effect: 2.0, ..SynthConfig::default() };
    let actions = [1, 1];
    let (obs, k) = observed_conditional_mean(&cfg, &actions, 20_000);
    assert!(k > 5000);
    let truth = interventional_mean(&cfg, &actions);
    // Under full bias only U = 1 takes the top action, so the naive mean
    // carries the whole effect instead of p_U of it.
    assert!(obs - truth > 0.5, "observational {obs}, interventional {truth}");

    // Without U the fully biased policy always plays 0, and following it
    // selects nothing: the naive mean is the interventional one.
    let unconfounded = SynthConfig { p_u: 0.0, ..cfg };
    let (obs, k) = observed_conditional_mean(&unconfounded, &[0, 0], 20_000);
    assert_eq!(k, 20_000);
    let se = 2.0 * unconfounded.noise / (k as f64).sqrt();
    assert!((obs - interventional_mean(&unconfounded, &[0, 0])).abs() < 4.0 * se);
}

#[test]
fn correct_twin_matches_closed_form_and_oracle() {
    let cfg = SynthConfig::default();
    let pool: Vec<Vec<f64>> =
        generate_observational(&cfg, 8000, 1).unwrap().records.into_iter().map(|r| r.x0).collect();
    for actions in [vec![0], vec![1], vec![0, 1], vec![1, 1]] {
        let twin = generate_twin(&cfg, TwinMode::Correct, &pool, &actions, 8000, 3).unwrap();
        let ys: Vec<f64> = twin.records.iter().map(|r| r.states[actions.len() - 1][0]).collect();
        let m = ys.iter().sum::<f64>() / ys.len() as f64;
        let var = ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (ys.len() - 1) as f64;
        let se = (var / ys.len() as f64).sqrt();
        let truth = interventional_mean(&cfg, &actions);
        assert!((m - truth).abs() < 4.0 * se, "{actions:?}: twin {m} truth {truth} se {se}");

        // Conditioning on a region: twin mean vs rejection-sampled oracle.
        let mut hyp = whole(actions.clone(), 6.0, 16.0);
        hyp.regions.0[0] = BoxRegion::new([Constraint::half_open(1, Some(10.0), None)]).unwrap();
        let oracle = interventional_oracle(&cfg, &hyp, 60_000, 9).unwrap();
        let est = estimate_bounds(&generate_observational(&cfg, 10, 0).unwrap(), &twin, &hyp).unwrap();
        let twin_se = hyp.outcome.range() / 2.0 / (est.n_hat as f64).sqrt();
        let tol = 4.0 * (twin_se.powi(2) + oracle.stderr.powi(2)).sqrt();
        assert!((est.mu_hat.unwrap() - oracle.mean).abs() < tol);
    }
}

#[test]
fn observational_bounds_contain_interventional_truth() {
    let cfg = SynthConfig { effect: 2.0, ..SynthConfig::default() };
    let data = generate_observational(&cfg, 20_000, 2).unwrap();
    for actions in [vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]] {
        let hyp = whole(actions.clone(), 0.0, 25.0);
        let est = estimate_observational(&data, &hyp);
        let truth = interventional_oracle(&cfg, &hyp, 50_000, 4).unwrap();
        let slack = 4.0 * 25.0 / (est.n as f64).sqrt();
        assert!(est.mu_lo.unwrap() - slack <= truth.mean, "{actions:?}");
        assert!(truth.mean <= est.mu_up.unwrap() + slack, "{actions:?}");
    }
}

//! Confounded linear-Gaussian process with a hidden binary confounder.
//!
//! Each trajectory draws `X_0 ~ N(b, σ²)` per feature and `U ~ Bernoulli(p_U)`
//! independently. At step `s`
//!
//! `x_s[j] = b + ρ (x_{s-1}[j] - b) + g a_s / (K - 1) + U effect + σ z`.
//!
//! With probability `policy_bias` the behavioural agent picks the top action
//! when `U = 1` and action 0 otherwise; else it flips a fair coin between a
//! uniform action and a threshold rule on feature 0 of the previous state.
//! `U` is never emitted, so with nonzero bias and effect the observational
//! data are confounded.

use rand::seq::index;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regions::Hypothesis;
use crate::rng::{self, tag};
use crate::stats::CompensatedSum;
use crate::trajectory::{
    Dataset, ObservedTrajectory, Provenance, SchemaSpec, Step, TwinCollection, TwinDataset, TwinTrajectory,
};

fn default_baseline() -> f64 {
    10.0
}
fn default_persistence() -> f64 {
    0.5
}
fn default_gain() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(rename = "T")]
    pub horizon: usize,
    /// Observation dimension at every timestep.
    pub d: usize,
    /// Number of actions per step.
    pub actions: u32,
    pub p_u: f64,
    /// Drift added to every feature while `U = 1`.
    pub effect: f64,
    pub policy_bias: f64,
    pub noise: f64,
    #[serde(default = "default_baseline")]
    pub baseline_mean: f64,
    #[serde(default = "default_persistence")]
    pub persistence: f64,
    #[serde(default = "default_gain")]
    pub action_gain: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            horizon: 2,
            d: 2,
            actions: 2,
            p_u: 0.5,
            effect: 1.0,
            policy_bias: 1.0,
            noise: 1.0,
            baseline_mean: default_baseline(),
            persistence: default_persistence(),
            action_gain: default_gain(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.horizon == 0 || self.d == 0 || self.actions == 0 {
            return Err(Error::invalid("T, d and the action count must be positive"));
        }
        if !unit(self.p_u) {
            return Err(Error::invalid(format!("p_u {} outside [0, 1]", self.p_u)));
        }
        if !unit(self.policy_bias) {
            return Err(Error::invalid(format!("policy_bias {} outside [0, 1]", self.policy_bias)));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid(format!("noise scale {} must be positive", self.noise)));
        }
        for (name, v) in [
            ("effect", self.effect),
            ("baseline_mean", self.baseline_mean),
            ("persistence", self.persistence),
            ("action_gain", self.action_gain),
        ] {
            if !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite")));
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> Result<SchemaSpec> {
        SchemaSpec::uniform(self.horizon, self.d, self.actions)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: SynthConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn action_drift(&self, a: u32) -> f64 {
        if self.actions <= 1 {
            0.0
        } else {
            self.action_gain * f64::from(a) / f64::from(self.actions - 1)
        }
    }

    /// One transition; draws exactly `d` normals from `rng`.
    fn step(&self, prev: &[f64], a: u32, u: bool, noise: f64, shift: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let b = self.baseline_mean;
        let drift = self.action_drift(a) + if u { self.effect } else { 0.0 };
        prev.iter()
            .enumerate()
            .map(|(j, &x)| {
                let z: f64 = rng.sample(StandardNormal);
                let s = if j == OUTCOME_FEATURE { shift } else { 0.0 };
                b + self.persistence * (x - b) + drift + s + noise * z
            })
            .collect()
    }

    fn draw_x0(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.d).map(|_| self.baseline_mean + self.noise * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    fn behaviour(&self, prev: &[f64], u: bool, rng: &mut ChaCha8Rng) -> u32 {
        let top = self.actions - 1;
        if rng.random::<f64>() < self.policy_bias {
            return if u { top } else { 0 };
        }
        if rng.random::<f64>() < 0.5 {
            rng.random_range(0..self.actions)
        } else if prev[0] > self.baseline_mean {
            top
        } else {
            0
        }
    }
}

/// Feature shifted by [`TwinMode::BiasedShift`].
pub const OUTCOME_FEATURE: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TwinMode {
    Correct,
    /// Adds `delta` to the drift of feature 0 at every step.
    BiasedShift {
        delta: f64,
    },
    /// Multiplies the transition noise scale by `kappa >= 1`.
    VarianceInflated {
        kappa: f64,
    },
}

impl TwinMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TwinMode::VarianceInflated { kappa } if !(kappa >= 1.0 && kappa.is_finite()) => {
                Err(Error::invalid(format!("variance inflation {kappa} must be >= 1")))
            }
            TwinMode::BiasedShift { delta } if !delta.is_finite() => Err(Error::invalid("shift must be finite")),
            _ => Ok(()),
        }
    }

    fn shift_and_scale(&self) -> (f64, f64) {
        match *self {
            TwinMode::Correct => (0.0, 1.0),
            TwinMode::BiasedShift { delta } => (delta, 1.0),
            TwinMode::VarianceInflated { kappa } => (0.0, kappa),
        }
    }
}

/// Observational dataset of `n` trajectories; record `i` uses its own stream.
pub fn generate_observational(cfg: &SynthConfig, n: usize, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let records = (0..n).map(|i| observed_trajectory(cfg, seed, i as u64)).collect();
    let mut data = Dataset::new(cfg.schema()?, records)?;
    data.provenance = Provenance { source: Some("synth".into()), seed: Some(seed) };
    Ok(data)
}

/// Record `i` of [`generate_observational`].
pub fn observed_trajectory(cfg: &SynthConfig, seed: u64, i: u64) -> ObservedTrajectory {
    let mut rng = rng::stream(seed, &[tag::OBSERVATIONAL, i]);
    let x0 = cfg.draw_x0(&mut rng);
    let u = rng.random::<f64>() < cfg.p_u;
    let mut prev = x0.clone();
    let mut steps = Vec::with_capacity(cfg.horizon);
    for _ in 0..cfg.horizon {
        let a = cfg.behaviour(&prev, u, &mut rng);
        let x = cfg.step(&prev, a, u, cfg.noise, 0.0, &mut rng);
        steps.push(Step { action: a, observation: x.clone() });
        prev = x;
    }
    ObservedTrajectory { x0, steps }
}

/// Twin states `x_1..x_t` from `x0` under forced `actions`.
///
/// `U` is drawn from its prior, which is also its posterior given `X_0`
/// because the two are independent. Every mode consumes the same draws, so
/// `BiasedShift(0)` and `VarianceInflated(1)` reproduce `Correct` exactly.
pub fn simulate_twin(cfg: &SynthConfig, mode: TwinMode, x0: &[f64], actions: &[u32], seed: u64) -> Vec<Vec<f64>> {
    let (shift, scale) = mode.shift_and_scale();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = rng.random::<f64>() < cfg.p_u;
    let mut prev = x0.to_vec();
    actions
        .iter()
        .map(|&a| {
            prev = cfg.step(&prev, a, u, cfg.noise * scale, shift, &mut rng);
            prev.clone()
        })
        .collect()
}

/// Seed sent with twin request `i` of a dataset generated under `master`.
pub fn request_seed(master: u64, i: u64) -> u64 {
    rng::derive_seed(master, &[tag::TWIN_REQUEST, i])
}

/// `n` distinct pool indices, drawn without replacement.
pub fn select_x0(pool_len: usize, n: usize, master: u64) -> Result<Vec<usize>> {
    if n > pool_len {
        return Err(Error::invalid(format!("requested {n} twin trajectories but the x0 pool holds only {pool_len}")));
    }
    let mut rng = rng::stream(master, &[tag::X0_POOL]);
    Ok(index::sample(&mut rng, pool_len, n).into_vec())
}

/// Master seed for the twin dataset of one action sequence.
pub fn sequence_master(seed: u64, actions: &[u32]) -> u64 {
    rng::derive_seed(seed, &[rng::actions_key(actions)])
}

/// Twin dataset for `actions`, each `x0` from the pool used at most once.
pub fn generate_twin(
    cfg: &SynthConfig,
    mode: TwinMode,
    pool: &[Vec<f64>],
    actions: &[u32],
    n: usize,
    master: u64,
) -> Result<TwinDataset> {
    cfg.validate()?;
    mode.validate()?;
    let schema = cfg.schema()?;
    if actions.is_empty() || actions.len() > cfg.horizon {
        return Err(Error::invalid(format!("action sequence length {} outside 1..=T", actions.len())));
    }
    if let Some(&a) = actions.iter().find(|&&a| a >= cfg.actions) {
        return Err(Error::invalid(format!("action {a} out of range")));
    }
    if let Some(x) = pool.iter().find(|x| x.len() != cfg.d) {
        return Err(Error::invalid(format!("x0 of dimension {} in pool, expected {}", x.len(), cfg.d)));
    }
    let records = select_x0(pool.len(), n, master)?
        .into_iter()
        .enumerate()
        .map(|(i, k)| {
            let x0 = pool[k].clone();
            let states = simulate_twin(cfg, mode, &x0, actions, request_seed(master, i as u64));
            TwinTrajectory { x0, actions: actions.to_vec(), states }
        })
        .collect();
    Ok(TwinDataset {
        schema,
        actions: actions.to_vec(),
        records,
        provenance: Provenance { source: Some("synth-twin".into()), seed: Some(master) },
    })
}

/// One twin dataset per distinct action sequence, each keyed by
/// [`sequence_master`].
pub fn generate_twin_collection(
    cfg: &SynthConfig,
    mode: TwinMode,
    pool: &[Vec<f64>],
    sequences: &[Vec<u32>],
    n: usize,
    seed: u64,
) -> Result<TwinCollection> {
    sequences.iter().map(|a| generate_twin(cfg, mode, pool, a, n, sequence_master(seed, a))).collect()
}

/// Monte Carlo estimate of `E[f(X_t(a)) | X_{0:t}(a) ∈ B_{0:t}]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub accepted: usize,
    pub draws: usize,
}

/// Simulates the true process under `do(a_{1:t})` with `U` from its prior and
/// keeps draws whose states fall in every region (rejection conditioning).
/// The outcome is clipped to the hypothesis range.
pub fn interventional_oracle(cfg: &SynthConfig, hyp: &Hypothesis, n_draws: usize, seed: u64) -> Result<OracleEstimate> {
    cfg.validate()?;
    if n_draws == 0 {
        return Err(Error::invalid("n_draws must be at least 1"));
    }
    let mut sum = CompensatedSum::new();
    let mut sq = CompensatedSum::new();
    let mut accepted = 0usize;
    for i in 0..n_draws {
        let mut rng = rng::stream(seed, &[tag::ORACLE, i as u64]);
        let x0 = cfg.draw_x0(&mut rng);
        let u = rng.random::<f64>() < cfg.p_u;
        if !hyp.regions.get(0).contains(&x0)? {
            continue;
        }
        let mut prev = x0;
        let mut inside = true;
        for (s, &a) in hyp.actions.iter().enumerate() {
            prev = cfg.step(&prev, a, u, cfg.noise, 0.0, &mut rng);
            if !hyp.regions.get(s + 1).contains(&prev)? {
                inside = false;
                break;
            }
        }
        if inside {
            let y = hyp.outcome.eval(&prev);
            sum.add(y);
            sq.add(y * y);
            accepted += 1;
        }
    }
    if accepted == 0 {
        return Err(Error::EmptySample("no oracle draw fell inside the regions".into()));
    }
    let k = accepted as f64;
    let mean = sum.total() / k;
    let var = if accepted > 1 { ((sq.total() - k * mean * mean) / (k - 1.0)).max(0.0) } else { 0.0 };
    Ok(OracleEstimate { mean, stderr: (var / k).sqrt(), accepted, draws: n_draws })
}

/// Closed-form `E[x_t[j]]` under `do(a_{1:t})` with no conditioning.
pub fn interventional_mean(cfg: &SynthConfig, actions: &[u32]) -> f64 {
    actions.iter().fold(cfg.baseline_mean, |m, &a| {
        cfg.baseline_mean + cfg.persistence * (m - cfg.baseline_mean) + cfg.action_drift(a) + cfg.p_u * cfg.effect
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regions::{Direction, OutcomeSpec, RegionSequence};

    fn wide_hyp(actions: Vec<u32>) -> Hypothesis {
        Hypothesis {
            id: 0,
            t: actions.len(),
            outcome: OutcomeSpec { time: actions.len(), feature: 0, y_lo: -1e9, y_up: 1e9 },
            regions: RegionSequence::whole(actions.len()),
            actions,
            direction: Direction::Lo,
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = SynthConfig::default();
        assert_eq!(generate_observational(&cfg, 20, 3).unwrap(), generate_observational(&cfg, 20, 3).unwrap());
        assert_ne!(
            generate_observational(&cfg, 20, 3).unwrap().records,
            generate_observational(&cfg, 20, 4).unwrap().records
        );
    }

    #[test]
    fn full_bias_means_actions_follow_u() {
        // With no noise in the policy, every step of a trajectory takes the same action.
        let cfg = SynthConfig { horizon: 3, ..Default::default() };
        let data = generate_observational(&cfg, 200, 1).unwrap();
        for r in &data.records {
            let a: Vec<u32> = r.actions().collect();
            assert!(a.iter().all(|&x| x == a[0]));
        }
    }

    #[test]
    fn degenerate_modes_match_correct() {
        let cfg = SynthConfig::default();
        let x0 = vec![10.0, 9.0];
        let c = simulate_twin(&cfg, TwinMode::Correct, &x0, &[1, 0], 5);
        assert_eq!(c, simulate_twin(&cfg, TwinMode::BiasedShift { delta: 0.0 }, &x0, &[1, 0], 5));
        assert_eq!(c, simulate_twin(&cfg, TwinMode::VarianceInflated { kappa: 1.0 }, &x0, &[1, 0], 5));
        let s = simulate_twin(&cfg, TwinMode::BiasedShift { delta: 2.0 }, &x0, &[1], 5);
        let c1 = simulate_twin(&cfg, TwinMode::Correct, &x0, &[1], 5);
        assert!((s[0][0] - c1[0][0] - 2.0).abs() < 1e-12);
        assert_eq!(s[0][1], c1[0][1]);
    }

    #[test]
    fn x0_pool_without_replacement() {
        let idx = select_x0(50, 50, 9).unwrap();
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert!(select_x0(3, 4, 0).is_err());
    }

    #[test]
    fn twin_validation() {
        let cfg = SynthConfig::default();
        let pool = vec![vec![10.0, 10.0]; 4];
        assert!(generate_twin(&cfg, TwinMode::VarianceInflated { kappa: 0.5 }, &pool, &[0], 2, 0).is_err());
        assert!(generate_twin(&cfg, TwinMode::Correct, &pool, &[2], 2, 0).is_err());
        assert!(generate_twin(&cfg, TwinMode::Correct, &pool, &[0, 0, 0], 2, 0).is_err());
        let t = generate_twin(&cfg, TwinMode::Correct, &pool, &[0, 1], 4, 0).unwrap();
        assert_eq!(t.records.len(), 4);
        assert_eq!(t.records[0].states.len(), 2);
    }

    #[test]
    fn oracle_matches_linear_mean() {
        let cfg = SynthConfig { effect: 0.0, ..Default::default() };
        let hyp = wide_hyp(vec![1, 1]);
        let o = interventional_oracle(&cfg, &hyp, 20_000, 2).unwrap();
        // b + ρ g + g with ρ = 0.5, g = 1.
        let exact = interventional_mean(&cfg, &[1, 1]);
        assert!((exact - 11.5).abs() < 1e-12);
        assert!((o.mean - exact).abs() < 4.0 * o.stderr, "{} vs {exact}", o.mean);
        assert_eq!(o, interventional_oracle(&cfg, &hyp, 20_000, 2).unwrap());
    }

    #[test]
    fn oracle_with_empty_region_errors() {
        use crate::regions::{BoxRegion, Constraint};
        let cfg = SynthConfig::default();
        let mut hyp = wide_hyp(vec![0]);
        hyp.regions.0[0] = BoxRegion::new([Constraint::closed(0, 1e6, 1e7)]).unwrap();
        assert!(interventional_oracle(&cfg, &hyp, 100, 0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SynthConfig { p_u: 1.5, ..Default::default() }.validate().is_err());
        assert!(SynthConfig { noise: 0.0, ..Default::default() }.validate().is_err());
        assert!(SynthConfig { policy_bias: -0.1, ..Default::default() }.validate().is_err());
        let json = r#"{"T":2,"d":2,"actions":2,"p_u":0.5,"effect":1,"policy_bias":1,"noise":1}"#;
        let cfg: SynthConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.baseline_mean, 10.0);
    }
}

//! The three training environments behind one reset/step interface.
//!
//! * [`ClassicalEnv`]: two-state probability vector steered by closed-form maps.
//! * [`QuantumEnv`]: noisy single qubit driven by discrete gates.
//! * [`LinkEnv`]: Rayleigh block-fading link adaptation over N receive antennas.

use std::f64::consts::{FRAC_PI_4, FRAC_PI_8};

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::PolicyAction;
use crate::quantum::{
    apply_gate, excited_population, measure_collapse, Gate, GateAction, NoiseModel, QubitState,
};

/// Random stream type used by every environment and agent.
pub type SimRng = ChaCha8Rng;

pub const DEFAULT_HORIZON: usize = 10;
pub const DEFAULT_NOISE_LEVEL: f64 = 0.03;
pub const COLLAPSE_PROB: f64 = 0.1;
/// Rotation angle of every discrete Rx/Ry/Rz action.
pub const GATE_ANGLE: f64 = FRAC_PI_4;

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub trait Environment: Send {
    fn obs_dim(&self) -> usize;
    fn num_actions(&self) -> usize;
    /// Whether actions carry a continuous component (transmit power).
    fn has_continuous_action(&self) -> bool {
        false
    }
    fn horizon(&self) -> usize;
    fn reset(&mut self, rng: &mut SimRng) -> Vec<f64>;
    fn step(&mut self, action: PolicyAction, rng: &mut SimRng) -> Result<Step>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Classical,
    Quantum,
    Link,
}

impl std::str::FromStr for EnvKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(Self::Classical),
            "quantum" => Ok(Self::Quantum),
            "link" => Ok(Self::Link),
            other => Err(Error::domain(format!("unknown environment {other:?}"))),
        }
    }
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Classical => "classical",
            Self::Quantum => "quantum",
            Self::Link => "link",
        })
    }
}

// ---------------------------------------------------------------------------
// Classical two-state environment
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassicalOp {
    Shift,
    Scale,
    Rotate,
    Flip,
    Identity,
}

impl ClassicalOp {
    pub const ALL: [ClassicalOp; 5] = [
        ClassicalOp::Shift,
        ClassicalOp::Scale,
        ClassicalOp::Rotate,
        ClassicalOp::Flip,
        ClassicalOp::Identity,
    ];

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::domain(format!("classical action {i} not in 0..5")))
    }
}

fn from_p1(p1: f64) -> [f64; 2] {
    let p1 = p1.clamp(0.0, 1.0);
    [1.0 - p1, p1]
}

/// Closed-form map T_a(p), renormalized.
pub fn classical_transform(p: [f64; 2], op: ClassicalOp) -> [f64; 2] {
    match op {
        ClassicalOp::Shift => from_p1(p[1] + 0.1),
        ClassicalOp::Scale => from_p1((1.2 * p[1]).min(1.0)),
        ClassicalOp::Rotate => {
            let phi = p[1].max(0.0).sqrt().atan2(p[0].max(0.0).sqrt()) + FRAC_PI_8;
            let (s, c) = phi.sin_cos();
            let total = s * s + c * c;
            [c * c / total, s * s / total]
        }
        ClassicalOp::Flip => [p[1], p[0]],
        ClassicalOp::Identity => p,
    }
}

/// Bhattacharyya fidelity (Σ √(p_i q_i))².
pub fn bhattacharyya_fidelity(p: [f64; 2], q: [f64; 2]) -> f64 {
    let s: f64 = p.iter().zip(&q).map(|(a, b)| (a * b).max(0.0).sqrt()).sum();
    s * s
}

#[derive(Clone, Debug)]
pub struct ClassicalEnv {
    p: [f64; 2],
    m: f64,
    t: usize,
    pub horizon: usize,
    /// Probability per step of a flip-or-drift disturbance.
    pub noise_prob: f64,
    pub collapse_prob: f64,
    pub target: [f64; 2],
}

impl ClassicalEnv {
    pub fn new(noise_prob: f64) -> Self {
        Self {
            p: [1.0, 0.0],
            m: 0.0,
            t: 0,
            horizon: DEFAULT_HORIZON,
            noise_prob,
            collapse_prob: COLLAPSE_PROB,
            target: [0.0, 1.0],
        }
    }

    /// Places the environment in `p` without advancing time.
    pub fn set_distribution(&mut self, p: [f64; 2]) {
        self.p = p;
    }

    pub fn distribution(&self) -> [f64; 2] {
        self.p
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.p[0], self.p[1], self.m]
    }

    pub fn classical_step(&mut self, action: usize, rng: &mut SimRng) -> Result<Step> {
        let op = ClassicalOp::from_index(action)?;
        self.p = classical_transform(self.p, op);
        if rng.random::<f64>() < self.noise_prob {
            if rng.random::<f64>() < 0.5 {
                self.p = [self.p[1], self.p[0]];
            } else {
                let delta: f64 = rng.random_range(-0.1..0.1);
                self.p = from_p1(self.p[1] + delta);
            }
        }
        if rng.random::<f64>() < self.collapse_prob {
            let outcome = rng.random::<f64>() < self.p[1];
            self.m = if outcome { 1.0 } else { 0.0 };
            self.p = if outcome { [0.0, 1.0] } else { [1.0, 0.0] };
        }
        self.t += 1;
        Ok(Step {
            obs: self.observation(),
            reward: bhattacharyya_fidelity(self.p, self.target),
            done: self.t >= self.horizon,
        })
    }
}

impl Environment for ClassicalEnv {
    fn obs_dim(&self) -> usize {
        3
    }

    fn num_actions(&self) -> usize {
        5
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&mut self, _rng: &mut SimRng) -> Vec<f64> {
        self.p = [1.0, 0.0];
        self.m = 0.0;
        self.t = 0;
        self.observation()
    }

    fn step(&mut self, action: PolicyAction, rng: &mut SimRng) -> Result<Step> {
        self.classical_step(action.choice, rng)
    }
}

// ---------------------------------------------------------------------------
// Noisy single-qubit environment
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct QuantumEnv {
    state: QubitState,
    m: f64,
    t: usize,
    pub horizon: usize,
    pub collapse_prob: f64,
    noise: NoiseModel,
    noise_level: f64,
}

impl QuantumEnv {
    /// All three channels at `noise_level` each, applied
    /// depolarizing → amplitude damping → dephasing after every gate.
    pub fn new(noise_level: f64) -> Result<Self> {
        Ok(Self {
            state: QubitState::ground(),
            m: 0.0,
            t: 0,
            horizon: DEFAULT_HORIZON,
            collapse_prob: COLLAPSE_PROB,
            noise: NoiseModel::uniform(noise_level)?,
            noise_level,
        })
    }

    pub fn with_noise_model(mut self, noise: NoiseModel) -> Self {
        self.noise = noise;
        self
    }

    pub fn noise_level(&self) -> f64 {
        self.noise_level
    }

    pub fn state(&self) -> &QubitState {
        &self.state
    }

    fn observation(&self) -> Vec<f64> {
        let [p0, p1] = self.state.populations();
        vec![p0, p1, self.m]
    }

    pub fn quantum_step(&mut self, gate_index: usize, rng: &mut SimRng) -> Result<Step> {
        let gate = Gate::from_index(gate_index)?;
        let mut state = apply_gate(&self.state, GateAction::new(gate, GATE_ANGLE))?;
        state = self.noise.apply(&state)?;
        if rng.random::<f64>() < self.collapse_prob {
            let (outcome, collapsed) = measure_collapse(&state, rng);
            self.m = f64::from(outcome);
            state = collapsed;
        }
        self.state = state;
        self.t += 1;
        Ok(Step {
            obs: self.observation(),
            reward: excited_population(&self.state),
            done: self.t >= self.horizon,
        })
    }
}

impl Environment for QuantumEnv {
    fn obs_dim(&self) -> usize {
        3
    }

    fn num_actions(&self) -> usize {
        Gate::ALL.len()
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&mut self, _rng: &mut SimRng) -> Vec<f64> {
        self.state = QubitState::ground();
        self.m = 0.0;
        self.t = 0;
        self.observation()
    }

    fn step(&mut self, action: PolicyAction, rng: &mut SimRng) -> Result<Step> {
        self.quantum_step(action.choice, rng)
    }
}

// ---------------------------------------------------------------------------
// Rayleigh-fading link adaptation
// ---------------------------------------------------------------------------

/// Modulation orders selectable by the categorical head, in index order.
pub const MODULATIONS: [u32; 3] = [4, 16, 64];
/// SNR (dB) needed by Gray-mapped uncoded m-QAM for a 10⁻³ error rate.
pub const DEFAULT_SNR_THRESHOLDS_DB: [f64; 3] = [9.8, 16.5, 22.5];

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub antennas: usize,
    pub pilot_snr_db: f64,
    pub p_min: f64,
    pub p_max: f64,
    /// σ² is drawn once per episode, uniformly from this range.
    pub sigma2_range: (f64, f64),
    pub thresholds_db: [f64; 3],
    pub horizon: usize,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            antennas: 4,
            pilot_snr_db: 10.0,
            p_min: 0.0,
            p_max: 1.0,
            sigma2_range: (0.05, 0.2),
            thresholds_db: DEFAULT_SNR_THRESHOLDS_DB,
            horizon: DEFAULT_HORIZON,
        }
    }
}

impl LinkConfig {
    pub fn snr_threshold(&self, m: u32) -> Result<f64> {
        MODULATIONS
            .iter()
            .position(|&x| x == m)
            .map(|i| self.thresholds_db[i])
            .ok_or_else(|| Error::domain(format!("unsupported modulation order {m}")))
    }

    /// Pilot estimation error variance σ_p² = 10^(−pilotSNR/10).
    pub fn pilot_error_variance(&self) -> f64 {
        db_to_linear(-self.pilot_snr_db)
    }
}

/// Threshold from the default table.
pub fn snr_threshold(m: u32) -> Result<f64> {
    LinkConfig::default().snr_threshold(m)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkAction {
    pub m: u32,
    pub p: f64,
}

impl LinkAction {
    /// Maps a sampled policy action onto the modulation set, clipping power.
    pub fn from_policy(action: PolicyAction, cfg: &LinkConfig) -> Result<Self> {
        let m = *MODULATIONS
            .get(action.choice)
            .ok_or_else(|| Error::domain(format!("modulation index {}", action.choice)))?;
        let raw = action
            .continuous
            .ok_or_else(|| Error::domain("link action needs a power component"))?;
        let p = if raw.is_nan() { cfg.p_min } else { raw.clamp(cfg.p_min, cfg.p_max) };
        Ok(Self { m, p })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkObs {
    pub h_hat: Vec<Complex64>,
    pub sigma2: f64,
}

impl LinkObs {
    /// [Re ĥ, Im ĥ, σ²]
    pub fn features(&self) -> Vec<f64> {
        let mut f: Vec<f64> = self.h_hat.iter().map(|z| z.re).collect();
        f.extend(self.h_hat.iter().map(|z| z.im));
        f.push(self.sigma2);
        f
    }
}

/// One circularly-symmetric complex Gaussian sample with variance `var`.
pub fn complex_gaussian(rng: &mut SimRng, var: f64) -> Complex64 {
    let s = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// log₂(m)·1[p‖h‖²/σ² ≥ SNR_th(m)]
pub fn link_reward(action: LinkAction, gain: f64, sigma2: f64, cfg: &LinkConfig) -> Result<f64> {
    let th = db_to_linear(cfg.snr_threshold(action.m)?);
    let snr = action.p * gain / sigma2;
    Ok(if snr >= th {
        f64::from(action.m).log2()
    } else {
        0.0
    })
}

#[derive(Clone, Debug)]
pub struct LinkEnv {
    pub cfg: LinkConfig,
    h: Vec<Complex64>,
    h_hat: Vec<Complex64>,
    sigma2: f64,
    t: usize,
}

impl LinkEnv {
    pub fn new(cfg: LinkConfig) -> Self {
        let n = cfg.antennas;
        Self {
            cfg,
            h: vec![Complex64::new(0.0, 0.0); n],
            h_hat: vec![Complex64::new(0.0, 0.0); n],
            sigma2: 1.0,
            t: 0,
        }
    }

    pub fn channel_gain(&self) -> f64 {
        self.h.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn observation(&self) -> LinkObs {
        LinkObs {
            h_hat: self.h_hat.clone(),
            sigma2: self.sigma2,
        }
    }

    fn draw_slot(&mut self, rng: &mut SimRng) {
        let pilot_var = self.cfg.pilot_error_variance();
        for k in 0..self.cfg.antennas {
            self.h[k] = complex_gaussian(rng, 1.0);
            self.h_hat[k] = self.h[k] + complex_gaussian(rng, pilot_var);
        }
    }

    pub fn link_reset(&mut self, rng: &mut SimRng) -> LinkObs {
        let (lo, hi) = self.cfg.sigma2_range;
        self.sigma2 = if hi > lo { rng.random_range(lo..hi) } else { lo };
        self.t = 0;
        self.draw_slot(rng);
        self.observation()
    }

    pub fn link_step(&mut self, action: LinkAction, rng: &mut SimRng) -> Result<(LinkObs, f64, bool)> {
        let reward = link_reward(action, self.channel_gain(), self.sigma2, &self.cfg)?;
        self.t += 1;
        self.draw_slot(rng);
        Ok((self.observation(), reward, self.t >= self.cfg.horizon))
    }
}

impl Environment for LinkEnv {
    fn obs_dim(&self) -> usize {
        2 * self.cfg.antennas + 1
    }

    fn num_actions(&self) -> usize {
        MODULATIONS.len()
    }

    fn has_continuous_action(&self) -> bool {
        true
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn reset(&mut self, rng: &mut SimRng) -> Vec<f64> {
        self.link_reset(rng).features()
    }

    fn step(&mut self, action: PolicyAction, rng: &mut SimRng) -> Result<Step> {
        let action = LinkAction::from_policy(action, &self.cfg)?;
        let (obs, reward, done) = self.link_step(action, rng)?;
        Ok(Step {
            obs: obs.features(),
            reward,
            done,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> SimRng {
        SimRng::seed_from_u64(seed)
    }

    fn quiet_classical() -> ClassicalEnv {
        let mut env = ClassicalEnv::new(0.0);
        env.collapse_prob = 0.0;
        env
    }

    #[test]
    fn classical_reward_examples() {
        let mut env = quiet_classical();
        let mut r = rng(0);
        env.reset(&mut r);
        env.set_distribution([0.0, 1.0]);
        assert_eq!(env.classical_step(4, &mut r).unwrap().reward, 1.0);
        assert_eq!(bhattacharyya_fidelity([1.0, 0.0], [0.0, 1.0]), 0.0);
        assert!((bhattacharyya_fidelity([0.5, 0.5], [0.0, 1.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn classical_transforms() {
        let p = [0.6, 0.4];
        let s = classical_transform(p, ClassicalOp::Shift);
        assert!((s[1] - 0.5).abs() < 1e-15);
        assert!((classical_transform(p, ClassicalOp::Scale)[1] - 0.48).abs() < 1e-15);
        assert_eq!(classical_transform([0.1, 0.9], ClassicalOp::Scale), [0.0, 1.0]);
        assert_eq!(classical_transform(p, ClassicalOp::Flip), [0.4, 0.6]);
        let r = classical_transform([1.0, 0.0], ClassicalOp::Rotate);
        assert!((r[1] - FRAC_PI_8.sin().powi(2)).abs() < 1e-15);
        assert!((r[0] + r[1] - 1.0).abs() < 1e-15);
        // four rotations reach the target vertex
        let mut q = [1.0, 0.0];
        for _ in 0..4 {
            q = classical_transform(q, ClassicalOp::Rotate);
        }
        assert!((q[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_actions_are_rejected() {
        let mut r = rng(1);
        assert!(quiet_classical().classical_step(5, &mut r).is_err());
        assert!(QuantumEnv::new(0.0).unwrap().quantum_step(7, &mut r).is_err());
        assert!(snr_threshold(8).is_err());
    }

    #[test]
    fn four_rx_steps_reach_excited_state() {
        let mut env = QuantumEnv::new(0.0).unwrap();
        env.collapse_prob = 0.0;
        let mut r = rng(2);
        env.reset(&mut r);
        let rewards: Vec<f64> = (0..4).map(|_| env.quantum_step(0, &mut r).unwrap().reward).collect();
        assert!((rewards[3] - 1.0).abs() < 1e-12);
        // total of the ramp: sin²(π/8) + 1/2 + cos²(π/8) + 1
        assert!((rewards.iter().sum::<f64>() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn identity_at_zero_noise_leaves_observation() {
        let mut env = QuantumEnv::new(0.0).unwrap();
        env.collapse_prob = 0.0;
        let mut r = rng(3);
        env.reset(&mut r);
        let a = env.quantum_step(3, &mut r).unwrap();
        let b = env.quantum_step(4, &mut r).unwrap();
        assert_eq!(a.obs, b.obs);
        assert_eq!(a.reward, b.reward);
    }

    #[test]
    fn quantum_episode_return_is_bounded_and_ends() {
        let mut r = rng(4);
        let mut env = QuantumEnv::new(0.03).unwrap();
        for _ in 0..200 {
            env.reset(&mut r);
            let mut total = 0.0;
            let mut steps = 0;
            loop {
                let s = env.quantum_step(r.random_range(0..5), &mut r).unwrap();
                total += s.reward;
                steps += 1;
                if s.done {
                    break;
                }
            }
            assert_eq!(steps, 10);
            assert!(total <= 10.0);
        }
    }

    #[test]
    fn noiseless_episodes_stay_pure() {
        let mut env = QuantumEnv::new(0.0).unwrap();
        env.collapse_prob = 0.0;
        let mut r = rng(5);
        for _ in 0..100 {
            env.reset(&mut r);
            for _ in 0..10 {
                env.quantum_step(r.random_range(0..5), &mut r).unwrap();
                assert!((env.state().purity() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn observations_keep_invariants() {
        let mut r = rng(6);
        let mut classical = ClassicalEnv::new(0.03);
        let mut quantum = QuantumEnv::new(0.15).unwrap();
        let mut link = LinkEnv::new(LinkConfig::default());
        for env in [
            &mut classical as &mut dyn Environment,
            &mut quantum as &mut dyn Environment,
        ] {
            env.reset(&mut r);
            for _ in 0..100_000 {
                let s = env.step(PolicyAction::discrete(r.random_range(0..5)), &mut r).unwrap();
                assert!((s.obs[0] + s.obs[1] - 1.0).abs() < 1e-10);
                assert!(s.obs.iter().all(|x| (0.0..=1.0).contains(x)));
                assert!((0.0..=1.0).contains(&s.reward));
                assert!(s.obs[2] == 0.0 || s.obs[2] == 1.0);
                if s.done {
                    env.reset(&mut r);
                }
            }
        }
        link.reset(&mut r);
        for _ in 0..100_000 {
            let a = PolicyAction {
                choice: r.random_range(0..3),
                continuous: Some(r.random_range(-0.5..1.5)),
            };
            let s = link.step(a, &mut r).unwrap();
            assert_eq!(s.obs.len(), 9);
            assert!(s.obs[8] > 0.0);
            assert!([0.0, 2.0, 4.0, 6.0].contains(&s.reward));
            if s.done {
                link.reset(&mut r);
            }
        }
    }

    #[test]
    fn identical_seeds_give_identical_trajectories() {
        let run = |seed| {
            let mut r = rng(seed);
            let mut env = QuantumEnv::new(0.05).unwrap();
            let mut out = vec![];
            env.reset(&mut r);
            for i in 0..50 {
                let s = env.quantum_step(i % 5, &mut r).unwrap();
                out.extend(s.obs);
                if s.done {
                    env.reset(&mut r);
                }
            }
            out
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn link_reward_examples() {
        let cfg = LinkConfig::default();
        // 16-QAM at 20 dB
        let a = LinkAction { m: 16, p: 1.0 };
        assert_eq!(link_reward(a, 10.0, 0.1, &cfg).unwrap(), 4.0);
        for m in MODULATIONS {
            assert_eq!(link_reward(LinkAction { m, p: 0.0 }, 5.0, 0.1, &cfg).unwrap(), 0.0);
        }
        // SNR 4 = 6.02 dB is below 9.8 dB
        assert_eq!(link_reward(LinkAction { m: 4, p: 1.0 }, 4.0, 1.0, &cfg).unwrap(), 0.0);
        assert!((linear_to_db(4.0) - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn threshold_table_is_monotone() {
        let t: Vec<f64> = MODULATIONS.iter().map(|&m| snr_threshold(m).unwrap()).collect();
        assert_eq!(t, vec![9.8, 16.5, 22.5]);
        assert!(t[0] < t[1] && t[1] < t[2]);
    }

    #[test]
    fn rayleigh_gain_has_mean_n() {
        let mut r = rng(7);
        let mut env = LinkEnv::new(LinkConfig::default());
        let n = 100_000;
        let mut total = 0.0;
        env.link_reset(&mut r);
        for _ in 0..n {
            env.draw_slot(&mut r);
            total += env.channel_gain();
        }
        let mean = total / n as f64;
        assert!((mean - 4.0).abs() <= 0.02 * 4.0, "{mean}");
    }

    #[test]
    fn pilot_error_variance_matches_snr() {
        assert!((LinkConfig::default().pilot_error_variance() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn power_is_clipped() {
        let cfg = LinkConfig::default();
        let a = LinkAction::from_policy(PolicyAction { choice: 2, continuous: Some(3.0) }, &cfg).unwrap();
        assert_eq!(a, LinkAction { m: 64, p: 1.0 });
        let a = LinkAction::from_policy(PolicyAction { choice: 0, continuous: Some(-1.0) }, &cfg).unwrap();
        assert_eq!(a.p, 0.0);
    }
}

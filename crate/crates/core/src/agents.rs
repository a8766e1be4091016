//! Learners: REINFORCE (CPG), block-diagonal preconditioned PG (QNPG), full
//! Tikhonov-preconditioned PG (QPPG), unregularized natural PG, and a DQN
//! over a quantum-circuit embedding (Q-DQN).
//!
//! The information matrix used by the preconditioned learners is the
//! empirical Fisher matrix of the per-step score vectors of the current
//! trajectory. Under the square-root amplitude embedding of the policy this
//! is exactly the pure-state QFI of the embedded state, which is what lets
//! the QFI-preconditioned update run on a neural softmax policy.

use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, SimRng};
use crate::error::{Error, Result};
use crate::fisher::{
    classical_fim, precondition_solve, pseudo_inverse_solve, BlockLayout, SolveMethod,
};
use crate::net::{
    ActionDistribution, ParamLayout, ParamVector, PolicyAction, PolicyNet, QuantumQNet, Transition,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Cpg,
    Qnpg,
    Qppg,
    Qdqn,
    /// Unregularized natural PG (pseudo-inverse of the empirical FIM).
    Npg,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Cpg => "cpg",
            Self::Qnpg => "qnpg",
            Self::Qppg => "qppg",
            Self::Qdqn => "qdqn",
            Self::Npg => "npg",
        }
    }
}

impl std::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AgentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cpg" => Ok(Self::Cpg),
            "qnpg" => Ok(Self::Qnpg),
            "qppg" => Ok(Self::Qppg),
            "qdqn" => Ok(Self::Qdqn),
            "npg" => Ok(Self::Npg),
            other => Err(Error::domain(format!("unknown agent {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub alpha: f64,
    pub gamma: f64,
    /// Tikhonov strength ξ.
    pub xi: f64,
    pub horizon: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay: f64,
    /// Target-network sync period, in episodes.
    pub target_sync: usize,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub solve: SolveMethod,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            alpha: 0.002,
            gamma: 0.99,
            xi: 0.1,
            horizon: 10,
            epsilon_start: 1.0,
            epsilon_end: 0.01,
            epsilon_decay: 0.995,
            target_sync: 10,
            buffer_capacity: 10_000,
            batch_size: 32,
            solve: SolveMethod::Auto,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::domain("alpha must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::domain("gamma must lie in (0, 1)"));
        }
        if !(self.xi > 0.0) {
            return Err(Error::domain("xi must be positive"));
        }
        if self.horizon == 0 || self.batch_size == 0 || self.target_sync == 0 {
            return Err(Error::domain("horizon, batch_size and target_sync must be positive"));
        }
        if self.buffer_capacity < self.batch_size {
            return Err(Error::domain("buffer_capacity smaller than batch_size"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryStep {
    pub obs: Vec<f64>,
    pub action: PolicyAction,
    /// ∇θ log π(a|s)
    pub score: Vec<f64>,
    pub reward: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn scores(&self) -> Vec<Vec<f64>> {
        self.steps.iter().map(|s| s.score.clone()).collect()
    }

    fn check(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::domain("empty trajectory"));
        }
        if self.steps.iter().any(|s| !s.reward.is_finite()) {
            return Err(Error::domain("non-finite reward in trajectory"));
        }
        Ok(())
    }
}

/// G_t = r_t + γ·G_{t+1}
pub fn compute_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (g, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *g = acc;
    }
    out
}

/// Σ_t ∇log π(a_t|s_t)·G_t, without baseline.
pub fn policy_gradient(traj: &Trajectory, gamma: f64) -> Result<Vec<f64>> {
    traj.check()?;
    let returns = compute_returns(&traj.rewards(), gamma);
    let d = traj.steps[0].score.len();
    let mut g = vec![0.0; d];
    for (step, ret) in traj.steps.iter().zip(&returns) {
        if step.score.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: step.score.len(),
            });
        }
        g.iter_mut().zip(&step.score).for_each(|(gi, si)| *gi += ret * si);
    }
    Ok(g)
}

/// How the parameter step is derived from the trajectory gradient.
#[derive(Clone, Debug)]
pub enum Preconditioner<'a> {
    /// Δθ = α∇J
    Identity,
    /// Δθ = α(F̂ + ξI)⁻¹∇J
    Full,
    /// Per-block (F̂_bb + ξI)⁻¹, off-block coupling dropped.
    BlockDiagonal(&'a BlockLayout),
    /// Δθ = αF̂⁺∇J
    PseudoInverse,
}

/// Δθ for one trajectory.
pub fn parameter_step(traj: &Trajectory, cfg: &AgentConfig, pre: &Preconditioner<'_>) -> Result<Vec<f64>> {
    let grad = policy_gradient(traj, cfg.gamma)?;
    let mut step = match pre {
        Preconditioner::Identity => grad,
        Preconditioner::Full => {
            let fim = classical_fim(&traj.scores())?;
            precondition_solve(&fim, cfg.xi, &grad, cfg.solve)?
        }
        Preconditioner::BlockDiagonal(layout) => {
            if layout.dim() != grad.len() {
                return Err(Error::Dimension {
                    expected: grad.len(),
                    got: layout.dim(),
                });
            }
            let mut out = vec![0.0; grad.len()];
            for b in layout.blocks() {
                let r = b.start..b.start + b.len;
                let block_scores: Vec<Vec<f64>> =
                    traj.steps.iter().map(|s| s.score[r.clone()].to_vec()).collect();
                let fim = classical_fim(&block_scores)?;
                let x = precondition_solve(&fim, cfg.xi, &grad[r.clone()], cfg.solve)?;
                out[r].copy_from_slice(&x);
            }
            out
        }
        Preconditioner::PseudoInverse => pseudo_inverse_solve(&traj.scores(), &grad)?,
    };
    step.iter_mut().for_each(|x| *x *= cfg.alpha);
    if step.iter().any(|x| !x.is_finite()) {
        return Err(Error::Divergence("parameter update".into()));
    }
    Ok(step)
}

fn apply_step(params: &ParamVector, step: &[f64]) -> ParamVector {
    let mut out = params.clone();
    out.axpy(1.0, step);
    out
}

pub fn update_cpg(params: &ParamVector, traj: &Trajectory, cfg: &AgentConfig) -> Result<ParamVector> {
    Ok(apply_step(params, &parameter_step(traj, cfg, &Preconditioner::Identity)?))
}

pub fn update_qppg(params: &ParamVector, traj: &Trajectory, cfg: &AgentConfig) -> Result<ParamVector> {
    Ok(apply_step(params, &parameter_step(traj, cfg, &Preconditioner::Full)?))
}

pub fn update_qnpg(
    params: &ParamVector,
    traj: &Trajectory,
    cfg: &AgentConfig,
    layout: &BlockLayout,
) -> Result<ParamVector> {
    Ok(apply_step(params, &parameter_step(traj, cfg, &Preconditioner::BlockDiagonal(layout))?))
}

pub fn update_npg(params: &ParamVector, traj: &Trajectory, cfg: &AgentConfig) -> Result<ParamVector> {
    Ok(apply_step(params, &parameter_step(traj, cfg, &Preconditioner::PseudoInverse)?))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SelectMode {
    Sample,
    Greedy,
    EpsilonGreedy(f64),
}

/// Lowest index among the maxima.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn sample_categorical(probs: &[f64], rng: &mut SimRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u ≥ Σp: take the last action with mass
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

pub fn select_action(dist: &ActionDistribution, mode: SelectMode, rng: &mut SimRng) -> PolicyAction {
    let greedy = |dist: &ActionDistribution| PolicyAction {
        choice: argmax(&dist.probs),
        continuous: dist.gaussian.map(|g| g.mean),
    };
    match mode {
        SelectMode::Greedy => greedy(dist),
        SelectMode::Sample => PolicyAction {
            choice: sample_categorical(&dist.probs, rng),
            continuous: dist.gaussian.map(|g| {
                let z: f64 = rng.sample(StandardNormal);
                g.mean + g.std * z
            }),
        },
        SelectMode::EpsilonGreedy(eps) => {
            if eps > 0.0 && rng.random::<f64>() < eps {
                PolicyAction {
                    choice: rng.random_range(0..dist.probs.len()),
                    continuous: dist.gaussian.map(|g| g.mean),
                }
            } else {
                greedy(dist)
            }
        }
    }
}

/// FIFO ring of transitions.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Uniform sample without replacement.
    pub fn sample(&self, batch: usize, rng: &mut SimRng) -> Vec<&Transition> {
        let n = batch.min(self.items.len());
        index::sample(rng, self.items.len(), n)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

/// Common driver interface used by the training harness.
pub trait Agent: Send {
    fn kind(&self) -> AgentKind;
    /// Runs one training episode (including its updates) and returns the
    /// undiscounted episode return.
    fn train_episode(&mut self, env: &mut dyn Environment, rng: &mut SimRng) -> Result<f64>;
    fn act(&self, obs: &[f64], mode: SelectMode, rng: &mut SimRng) -> Result<PolicyAction>;
    fn params(&self) -> &ParamVector;
    fn set_params(&mut self, params: ParamVector) -> Result<()>;
    fn layout(&self) -> &ParamLayout;
}

/// Plays one episode with a fixed action-selection mode and no learning.
pub fn rollout(
    agent: &dyn Agent,
    env: &mut dyn Environment,
    mode: SelectMode,
    rng: &mut SimRng,
) -> Result<f64> {
    let mut obs = env.reset(rng);
    let mut total = 0.0;
    for _ in 0..env.horizon() {
        let a = agent.act(&obs, mode, rng)?;
        let s = env.step(a, rng)?;
        total += s.reward;
        obs = s.obs;
        if s.done {
            break;
        }
    }
    Ok(total)
}

pub struct PolicyGradientAgent {
    kind: AgentKind,
    net: PolicyNet,
    params: ParamVector,
    blocks: BlockLayout,
    cfg: AgentConfig,
}

impl PolicyGradientAgent {
    pub fn new(kind: AgentKind, net: PolicyNet, cfg: AgentConfig, rng: &mut SimRng) -> Result<Self> {
        if kind == AgentKind::Qdqn {
            return Err(Error::domain("Q-DQN is not a policy-gradient agent"));
        }
        cfg.validate()?;
        let params = net.init(rng);
        let blocks = net.layout().block_layout();
        Ok(Self {
            kind,
            net,
            params,
            blocks,
            cfg,
        })
    }

    pub fn net(&self) -> &PolicyNet {
        &self.net
    }

    /// Samples one trajectory under the current policy.
    pub fn collect(&self, env: &mut dyn Environment, rng: &mut SimRng) -> Result<Trajectory> {
        let mut obs = env.reset(rng);
        let mut traj = Trajectory::default();
        for _ in 0..self.cfg.horizon.min(env.horizon()) {
            let dist = self.net.forward(&self.params, &obs)?;
            let action = select_action(&dist, SelectMode::Sample, rng);
            let (_, score) = self.net.logprob_and_grad(&self.params, &obs, action)?;
            let s = env.step(action, rng)?;
            traj.steps.push(TrajectoryStep {
                obs: std::mem::replace(&mut obs, s.obs),
                action,
                score,
                reward: s.reward,
            });
            if s.done {
                break;
            }
        }
        Ok(traj)
    }

    pub fn update(&mut self, traj: &Trajectory) -> Result<()> {
        let next = match self.kind {
            AgentKind::Cpg => update_cpg(&self.params, traj, &self.cfg)?,
            AgentKind::Qppg => update_qppg(&self.params, traj, &self.cfg)?,
            AgentKind::Qnpg => update_qnpg(&self.params, traj, &self.cfg, &self.blocks)?,
            AgentKind::Npg => update_npg(&self.params, traj, &self.cfg)?,
            AgentKind::Qdqn => unreachable!("rejected in constructor"),
        };
        if !next.is_finite() {
            return Err(Error::Divergence(format!("{} update", self.kind)));
        }
        self.params = next;
        Ok(())
    }
}

impl Agent for PolicyGradientAgent {
    fn kind(&self) -> AgentKind {
        self.kind
    }

    fn train_episode(&mut self, env: &mut dyn Environment, rng: &mut SimRng) -> Result<f64> {
        let traj = self.collect(env, rng)?;
        self.update(&traj)?;
        Ok(traj.total_reward())
    }

    fn act(&self, obs: &[f64], mode: SelectMode, rng: &mut SimRng) -> Result<PolicyAction> {
        let dist = self.net.forward(&self.params, obs)?;
        Ok(select_action(&dist, mode, rng))
    }

    fn params(&self) -> &ParamVector {
        &self.params
    }

    fn set_params(&mut self, params: ParamVector) -> Result<()> {
        if params.len() != self.net.layout().total() {
            return Err(Error::Dimension {
                expected: self.net.layout().total(),
                got: params.len(),
            });
        }
        self.params = params;
        Ok(())
    }

    fn layout(&self) -> &ParamLayout {
        self.net.layout()
    }
}

pub struct QDqnAgent {
    net: QuantumQNet,
    params: ParamVector,
    target: ParamVector,
    buffer: ReplayBuffer,
    epsilon: f64,
    episodes: usize,
    cfg: AgentConfig,
}

impl QDqnAgent {
    pub fn new(net: QuantumQNet, cfg: AgentConfig, rng: &mut SimRng) -> Result<Self> {
        cfg.validate()?;
        let params = net.init(rng);
        Ok(Self {
            target: params.clone(),
            params,
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            epsilon: cfg.epsilon_start,
            episodes: 0,
            net,
            cfg,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn target_params(&self) -> &ParamVector {
        &self.target
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    fn greedy_dist(&self, obs: &[f64]) -> Result<ActionDistribution> {
        let q = self.net.q_values(&self.params, obs)?;
        let best = argmax(&q);
        let probs = (0..q.len()).map(|i| if i == best { 1.0 } else { 0.0 }).collect();
        Ok(ActionDistribution {
            probs,
            gaussian: None,
        })
    }

    /// Stores the transition and, once the buffer holds a batch, takes one
    /// gradient step on the TD loss against the target parameters.
    pub fn observe(&mut self, t: Transition, rng: &mut SimRng) -> Result<Option<f64>> {
        self.buffer.push(t);
        if self.buffer.len() < self.cfg.batch_size {
            return Ok(None);
        }
        let batch = self.buffer.sample(self.cfg.batch_size, rng);
        let (loss, grad) = self
            .net
            .td_loss_and_grad(&self.params, &self.target, &batch, self.cfg.gamma)?;
        self.params.axpy(-self.cfg.alpha, &grad);
        if !self.params.is_finite() {
            return Err(Error::Divergence("Q-DQN update".into()));
        }
        Ok(Some(loss))
    }

    /// ε decay and periodic target sync.
    pub fn end_episode(&mut self) {
        self.episodes += 1;
        self.epsilon = (self.epsilon * self.cfg.epsilon_decay).max(self.cfg.epsilon_end);
        if self.episodes % self.cfg.target_sync == 0 {
            self.target = self.params.clone();
        }
    }
}

impl Agent for QDqnAgent {
    fn kind(&self) -> AgentKind {
        AgentKind::Qdqn
    }

    fn train_episode(&mut self, env: &mut dyn Environment, rng: &mut SimRng) -> Result<f64> {
        if env.has_continuous_action() {
            return Err(Error::domain("Q-DQN supports discrete action spaces only"));
        }
        let mut obs = env.reset(rng);
        let mut total = 0.0;
        for _ in 0..self.cfg.horizon.min(env.horizon()) {
            let dist = self.greedy_dist(&obs)?;
            let action = select_action(&dist, SelectMode::EpsilonGreedy(self.epsilon), rng);
            let s = env.step(action, rng)?;
            total += s.reward;
            let done = s.done;
            let next = s.obs;
            self.observe(
                Transition {
                    obs: std::mem::replace(&mut obs, next.clone()),
                    action: action.choice,
                    reward: s.reward,
                    next_obs: next,
                    done,
                },
                rng,
            )?;
            if done {
                break;
            }
        }
        self.end_episode();
        Ok(total)
    }

    fn act(&self, obs: &[f64], mode: SelectMode, rng: &mut SimRng) -> Result<PolicyAction> {
        let dist = self.greedy_dist(obs)?;
        let mode = match mode {
            SelectMode::Sample => SelectMode::EpsilonGreedy(self.epsilon),
            other => other,
        };
        Ok(select_action(&dist, mode, rng))
    }

    fn params(&self) -> &ParamVector {
        &self.params
    }

    fn set_params(&mut self, params: ParamVector) -> Result<()> {
        if params.len() != self.net.layout().total() {
            return Err(Error::Dimension {
                expected: self.net.layout().total(),
                got: params.len(),
            });
        }
        self.target = params.clone();
        self.params = params;
        Ok(())
    }

    fn layout(&self) -> &ParamLayout {
        self.net.layout()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::QuantumEnv;
    use crate::fisher::{Block, FisherMatrix};
    use crate::net::Gaussian;
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;

    fn rng(seed: u64) -> SimRng {
        SimRng::seed_from_u64(seed)
    }

    fn traj_from(scores: Vec<Vec<f64>>, rewards: Vec<f64>) -> Trajectory {
        Trajectory {
            steps: scores
                .into_iter()
                .zip(rewards)
                .map(|(score, reward)| TrajectoryStep {
                    obs: vec![],
                    action: PolicyAction::discrete(0),
                    score,
                    reward,
                })
                .collect(),
        }
    }

    fn random_traj(r: &mut SimRng, d: usize, t: usize) -> Trajectory {
        traj_from(
            (0..t).map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect()).collect(),
            (0..t).map(|_| r.random()).collect(),
        )
    }

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn returns_examples() {
        let g = compute_returns(&[1.0, 1.0, 1.0], 0.99);
        let want = [2.9701, 1.99, 1.0];
        for (a, b) in g.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(compute_returns(&[0.0; 4], 0.99), vec![0.0; 4]);
        assert_eq!(compute_returns(&[0.3, 0.5, 0.1], 0.0), vec![0.3, 0.5, 0.1]);
    }

    #[test]
    fn policy_gradient_examples() {
        let t = traj_from(vec![vec![1.0, 2.0], vec![3.0, 4.0]], vec![0.0, 0.0]);
        assert_eq!(policy_gradient(&t, 0.99).unwrap(), vec![0.0, 0.0]);
        let t = traj_from(vec![vec![0.5, -1.5]], vec![2.0]);
        assert_eq!(policy_gradient(&t, 0.99).unwrap(), vec![1.0, -3.0]);
        assert!(policy_gradient(&Trajectory::default(), 0.99).is_err());
    }

    /// Two-armed bandit with softmax over logits θ: ∇J = Σ_a π_a r_a (e_a − π).
    fn bandit_episode(theta: &[f64; 2], rewards: [f64; 2], r: &mut SimRng) -> Trajectory {
        let probs = crate::net::softmax(theta);
        let a = sample_categorical(&probs, r);
        let score = (0..2).map(|i| if i == a { 1.0 - probs[i] } else { -probs[i] }).collect();
        traj_from(vec![score], vec![rewards[a]])
    }

    fn bandit_value(theta: &[f64], rewards: [f64; 2]) -> f64 {
        let p = crate::net::softmax(theta);
        p[0] * rewards[0] + p[1] * rewards[1]
    }

    #[test]
    fn bandit_gradient_estimator_is_unbiased() {
        let theta = [0.3, -0.2];
        let rewards = [1.0, 0.2];
        let probs = crate::net::softmax(&theta);
        let exact: Vec<f64> = (0..2)
            .map(|i| {
                (0..2)
                    .map(|a| probs[a] * rewards[a] * (if a == i { 1.0 } else { 0.0 } - probs[i]))
                    .sum()
            })
            .collect();
        let mut r = rng(1);
        let n = 100_000;
        let mut sum = [0.0; 2];
        let mut sumsq = [0.0; 2];
        for _ in 0..n {
            let g = policy_gradient(&bandit_episode(&theta, rewards, &mut r), 0.99).unwrap();
            for i in 0..2 {
                sum[i] += g[i];
                sumsq[i] += g[i] * g[i];
            }
        }
        for i in 0..2 {
            let mean = sum[i] / n as f64;
            let se = ((sumsq[i] / n as f64 - mean * mean) / n as f64).sqrt();
            assert!((mean - exact[i]).abs() <= 3.0 * se, "{i}: {mean} vs {}", exact[i]);
        }
    }

    #[test]
    fn cpg_update_ascends_on_bandit() {
        let theta = [0.0, 0.0];
        let rewards = [1.0, 0.0];
        let cfg = AgentConfig { alpha: 0.1, ..AgentConfig::default() };
        let mut r = rng(2);
        let reps = 10_000;
        let before = bandit_value(&theta, rewards);
        let mut after = 0.0;
        for _ in 0..reps {
            let t = bandit_episode(&theta, rewards, &mut r);
            let p = update_cpg(&ParamVector(theta.to_vec()), &t, &cfg).unwrap();
            after += bandit_value(&p.0, rewards) / reps as f64;
        }
        assert!(after > before, "{after} vs {before}");
    }

    #[test]
    fn cpg_update_is_alpha_times_gradient() {
        let mut r = rng(3);
        let t = random_traj(&mut r, 5, 4);
        let cfg = AgentConfig::default();
        let p0 = ParamVector(vec![0.1; 5]);
        let p1 = update_cpg(&p0, &t, &cfg).unwrap();
        let g = policy_gradient(&t, cfg.gamma).unwrap();
        for i in 0..5 {
            assert_eq!(p1.0[i], p0.0[i] + cfg.alpha * g[i]);
        }
        let zero = traj_from(vec![vec![0.0; 5]], vec![1.0]);
        assert_eq!(update_cpg(&p0, &zero, &cfg).unwrap(), p0);
    }

    #[test]
    fn qppg_with_zero_fim_scales_by_inverse_xi() {
        // an all-zero trajectory also has zero gradient, so check the solve itself
        let cfg = AgentConfig { xi: 0.05, ..AgentConfig::default() };
        let g = vec![0.4, -1.0, 2.0];
        let x = precondition_solve(&FisherMatrix::zeros(3), cfg.xi, &g, SolveMethod::Dense).unwrap();
        for (xi, gi) in x.iter().zip(&g) {
            assert!((cfg.alpha * xi - 20.0 * cfg.alpha * gi).abs() < 1e-12);
        }
    }

    #[test]
    fn qppg_with_identity_fim() {
        // orthonormal scores in d = T give F̂ = I/T; scale them by √T for F̂ = I
        let d = 4;
        let s = (d as f64).sqrt();
        let scores: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| if i == j { s } else { 0.0 }).collect())
            .collect();
        let t = traj_from(scores, vec![0.5, 0.0, 1.0, 0.25]);
        let cfg = AgentConfig::default();
        assert!(classical_fim(&t.scores()).unwrap().max_abs_diff(&FisherMatrix::identity(d)) < 1e-14);
        let step = parameter_step(&t, &cfg, &Preconditioner::Full).unwrap();
        let g = policy_gradient(&t, cfg.gamma).unwrap();
        for (x, gi) in step.iter().zip(&g) {
            assert!((x - cfg.alpha / 1.1 * gi).abs() < 1e-14);
        }
    }

    #[test]
    fn qppg_matches_explicit_inverse() {
        let mut r = rng(4);
        let cfg = AgentConfig::default();
        for _ in 0..20 {
            let t = random_traj(&mut r, 12, 10);
            let step = parameter_step(&t, &cfg, &Preconditioner::Full).unwrap();
            let f = classical_fim(&t.scores()).unwrap();
            let m = DMatrix::from_row_slice(12, 12, f.data()) + DMatrix::identity(12, 12) * cfg.xi;
            let g = DVector::from_vec(policy_gradient(&t, cfg.gamma).unwrap());
            let want = m.try_inverse().unwrap() * g * cfg.alpha;
            for (a, b) in step.iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn qnpg_degenerate_and_block_cases() {
        let mut r = rng(5);
        let cfg = AgentConfig::default();
        let t = random_traj(&mut r, 6, 8);
        let single = BlockLayout::single(6);
        let a = parameter_step(&t, &cfg, &Preconditioner::BlockDiagonal(&single)).unwrap();
        let b = parameter_step(&t, &cfg, &Preconditioner::Full).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-14));

        // scores supported on disjoint blocks → F̂ block diagonal exactly
        let layout = BlockLayout::new(vec![
            Block { name: "a".into(), start: 0, len: 2 },
            Block { name: "b".into(), start: 2, len: 4 },
        ])
        .unwrap();
        let scores: Vec<Vec<f64>> = (0..8)
            .map(|k| {
                (0..6)
                    .map(|j| if (j < 2) == (k % 2 == 0) { r.random_range(-1.0..1.0) } else { 0.0 })
                    .collect()
            })
            .collect();
        let t = traj_from(scores, (0..8).map(|_| r.random()).collect());
        let a = parameter_step(&t, &cfg, &Preconditioner::BlockDiagonal(&layout)).unwrap();
        let b = parameter_step(&t, &cfg, &Preconditioner::Full).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-10));
    }

    #[test]
    fn qnpg_singleton_blocks_diagonal_fim() {
        // F̂ = diag(1, 3), ξ → 0, g = (1, 1), α = 1 → Δθ = (1, 1/3).
        // Scores (1, 0)·√2 and (0, √3)·√2 give F̂ = diag(1, 3); choose rewards
        // with γ = 0 so that ∇J = (1, 1).
        let layout = BlockLayout::new(vec![
            Block { name: "x".into(), start: 0, len: 1 },
            Block { name: "y".into(), start: 1, len: 1 },
        ])
        .unwrap();
        let s2 = 2f64.sqrt();
        let scores = vec![vec![s2, 0.0], vec![0.0, 3f64.sqrt() * s2]];
        let rewards = vec![1.0 / s2, 1.0 / (3f64.sqrt() * s2)];
        let t = traj_from(scores, rewards);
        let cfg = AgentConfig { alpha: 1.0, gamma: 1e-300, xi: 1e-12, ..AgentConfig::default() };
        let step = parameter_step(&t, &cfg, &Preconditioner::BlockDiagonal(&layout)).unwrap();
        assert!((step[0] - 1.0).abs() < 1e-9 && (step[1] - 1.0 / 3.0).abs() < 1e-9, "{step:?}");
    }

    #[test]
    fn preconditioned_step_properties() {
        let mut r = rng(6);
        for _ in 0..200 {
            let d = r.random_range(2..15);
            let len = r.random_range(1..11);
            let t = random_traj(&mut r, d, len);
            let cfg = AgentConfig::default();
            let step = parameter_step(&t, &cfg, &Preconditioner::Full).unwrap();
            let g = policy_gradient(&t, cfg.gamma).unwrap();
            let inner: f64 = step.iter().zip(&g).map(|(a, b)| a * b).sum();
            assert!(inner >= 0.0);
            assert!(norm(&step) <= cfg.alpha / cfg.xi * norm(&g) * (1.0 + 1e-12));

            let big = AgentConfig { xi: 1e6, ..cfg.clone() };
            let step = parameter_step(&t, &big, &Preconditioner::Full).unwrap();
            let scaled: Vec<f64> = step.iter().map(|x| x * big.xi).collect();
            let plain: Vec<f64> = g.iter().map(|x| x * big.alpha).collect();
            let diff: Vec<f64> = scaled.iter().zip(&plain).map(|(a, b)| a - b).collect();
            if norm(&plain) > 0.0 {
                assert!(norm(&diff) / norm(&plain) <= 1e-4);
            }
        }
    }

    #[test]
    fn select_action_modes() {
        let mut r = rng(7);
        let dist = ActionDistribution {
            probs: vec![0.2, 0.5, 0.3],
            gaussian: Some(Gaussian { mean: 0.4, std: 0.1 }),
        };
        for _ in 0..100 {
            assert_eq!(
                select_action(&dist, SelectMode::EpsilonGreedy(0.0), &mut r),
                select_action(&dist, SelectMode::Greedy, &mut r)
            );
        }
        assert_eq!(select_action(&dist, SelectMode::Greedy, &mut r), PolicyAction { choice: 1, continuous: Some(0.4) });

        let one_hot = ActionDistribution { probs: vec![0.0, 0.0, 1.0], gaussian: None };
        for mode in [SelectMode::Sample, SelectMode::Greedy, SelectMode::EpsilonGreedy(0.0)] {
            for _ in 0..50 {
                assert_eq!(select_action(&one_hot, mode, &mut r).choice, 2);
            }
        }

        let tie = ActionDistribution { probs: vec![0.4, 0.4, 0.2], gaussian: None };
        assert_eq!(select_action(&tie, SelectMode::Greedy, &mut r).choice, 0);

        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[select_action(&one_hot, SelectMode::EpsilonGreedy(1.0), &mut r).choice] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 3.0).abs() < 0.02);
        }
    }

    #[test]
    fn replay_buffer_is_bounded_fifo() {
        let mut buf = ReplayBuffer::new(10_000);
        let mk = |i: usize| Transition {
            obs: vec![i as f64],
            action: 0,
            reward: 0.0,
            next_obs: vec![],
            done: false,
        };
        for i in 0..20_000 {
            buf.push(mk(i));
            assert!(buf.len() <= buf.capacity());
        }
        let firsts: Vec<f64> = buf.iter().map(|t| t.obs[0]).collect();
        assert_eq!(firsts.first(), Some(&10_000.0));
        assert!(firsts.windows(2).all(|w| w[1] == w[0] + 1.0));
        let mut r = rng(8);
        let batch = buf.sample(32, &mut r);
        assert_eq!(batch.len(), 32);
    }

    #[test]
    fn qdqn_schedule() {
        let mut r = rng(9);
        let mut agent = QDqnAgent::new(QuantumQNet::new(5, std::f64::consts::PI), AgentConfig::default(), &mut r).unwrap();
        let mut env = QuantumEnv::new(0.03).unwrap();
        let initial_target = agent.target_params().clone();
        for ep in 1..=10 {
            agent.train_episode(&mut env, &mut r).unwrap();
            assert!((agent.epsilon() - 0.995f64.powi(ep)).abs() < 1e-12);
            if ep < 10 {
                assert_eq!(agent.target_params(), &initial_target);
            }
        }
        assert_eq!(agent.target_params(), agent.params());
        assert_eq!(agent.buffer().len(), 100);
    }

    #[test]
    fn qdqn_fixed_point_has_zero_update() {
        let mut r = rng(10);
        let net = QuantumQNet::new(2, std::f64::consts::PI);
        let cfg = AgentConfig { batch_size: 1, ..AgentConfig::default() };
        let mut agent = QDqnAgent::new(net, cfg, &mut r).unwrap();
        // zero head → Q ≡ 0; a terminal zero-reward transition is fitted exactly
        let mut p = agent.params().clone();
        p.0[4..].iter_mut().for_each(|x| *x = 0.0);
        agent.set_params(p.clone()).unwrap();
        let loss = agent
            .observe(
                Transition { obs: vec![0.1, 0.9, 0.0], action: 1, reward: 0.0, next_obs: vec![0.0; 3], done: true },
                &mut r,
            )
            .unwrap();
        assert_eq!(loss, Some(0.0));
        assert_eq!(agent.params(), &p);
    }

    #[test]
    fn training_is_reproducible() {
        let run = |kind| {
            let mut r = rng(11);
            let net = PolicyNet::new(3, 6, 5, false).unwrap();
            let mut agent = PolicyGradientAgent::new(kind, net, AgentConfig::default(), &mut r).unwrap();
            let mut env = QuantumEnv::new(0.03).unwrap();
            for _ in 0..5 {
                agent.train_episode(&mut env, &mut r).unwrap();
            }
            agent.params().clone()
        };
        for kind in [AgentKind::Cpg, AgentKind::Qnpg, AgentKind::Qppg, AgentKind::Npg] {
            assert_eq!(run(kind), run(kind));
        }
    }
}

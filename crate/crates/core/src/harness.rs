//! Multi-seed training runs, evaluation metrics, ergodic capacity and the
//! on-disk formats used by the command-line tool.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::agents::{
    Agent, AgentConfig, AgentKind, PolicyGradientAgent, QDqnAgent, SelectMode,
};
use crate::env::{ClassicalEnv, EnvKind, Environment, LinkConfig, LinkEnv, QuantumEnv, SimRng};
use crate::error::{Error, Result};
use crate::fisher::SolveMethod;
use crate::net::{ParamLayout, ParamVector, PolicyAction, PolicyNet, QuantumQNet};

pub const SUCCESS_THRESHOLD: f64 = 9.0;
pub const MOVING_WINDOW: usize = 25;
pub const DEFAULT_SEEDS: [u64; 5] = [42, 99, 123, 256, 512];
pub const DEFAULT_EPISODES: usize = 500;
pub const EVAL_EPISODES: usize = 100;
pub const ROBUSTNESS_NOISE: [f64; 2] = [0.05, 0.15];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    pub agent: AgentKind,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub noise_level: f64,
    pub width: usize,
    pub agent_cfg: AgentConfig,
    /// Pilot SNR used for training in the link environment.
    pub pilot_snr_db: f64,
    /// Noise levels for the post-training robustness evaluation.
    pub robustness_noise: Vec<f64>,
    pub eval_episodes: usize,
    pub out_dir: PathBuf,
    /// Train seeds on separate threads; results are identical either way.
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::Quantum,
            agent: AgentKind::Qppg,
            episodes: DEFAULT_EPISODES,
            seeds: DEFAULT_SEEDS.to_vec(),
            noise_level: crate::env::DEFAULT_NOISE_LEVEL,
            width: 16,
            agent_cfg: AgentConfig::default(),
            pilot_snr_db: LinkConfig::default().pilot_snr_db,
            robustness_noise: ROBUSTNESS_NOISE.to_vec(),
            eval_episodes: EVAL_EPISODES,
            out_dir: PathBuf::from("runs"),
            parallel: false,
        }
    }
}

fn parse_value<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config {
        line,
        msg: format!("bad value {v:?} for {key}"),
    })
}

fn parse_list<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(line, key, s))
        .collect()
}

fn parse_solve(line: usize, v: &str) -> Result<SolveMethod> {
    match v {
        "dense" => Ok(SolveMethod::Dense),
        "cg" | "conjugate_gradient" => Ok(SolveMethod::ConjugateGradient),
        "auto" => Ok(SolveMethod::Auto),
        _ => Err(Error::Config {
            line,
            msg: format!("bad value {v:?} for solve"),
        }),
    }
}

impl ExperimentConfig {
    /// Parses `key = value` lines on top of the defaults. `#` starts a
    /// comment; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                msg: format!("expected key = value, got {content:?}"),
            })?;
            let (key, v) = (key.trim(), value.trim());
            let a = &mut cfg.agent_cfg;
            match key {
                "env" => cfg.env = v.parse().map_err(|e: Error| Error::Config { line, msg: e.to_string() })?,
                "agent" => cfg.agent = v.parse().map_err(|e: Error| Error::Config { line, msg: e.to_string() })?,
                "episodes" => cfg.episodes = parse_value(line, key, v)?,
                "seeds" => cfg.seeds = parse_list(line, key, v)?,
                "noise_level" => cfg.noise_level = parse_value(line, key, v)?,
                "width" => cfg.width = parse_value(line, key, v)?,
                "alpha" => a.alpha = parse_value(line, key, v)?,
                "gamma" => a.gamma = parse_value(line, key, v)?,
                "xi" => a.xi = parse_value(line, key, v)?,
                "horizon" => a.horizon = parse_value(line, key, v)?,
                "epsilon_start" => a.epsilon_start = parse_value(line, key, v)?,
                "epsilon_end" => a.epsilon_end = parse_value(line, key, v)?,
                "epsilon_decay" => a.epsilon_decay = parse_value(line, key, v)?,
                "target_sync" => a.target_sync = parse_value(line, key, v)?,
                "buffer_capacity" => a.buffer_capacity = parse_value(line, key, v)?,
                "batch_size" => a.batch_size = parse_value(line, key, v)?,
                "solve" => a.solve = parse_solve(line, v)?,
                "pilot_snr_db" => cfg.pilot_snr_db = parse_value(line, key, v)?,
                "robustness_noise" => cfg.robustness_noise = parse_list(line, key, v)?,
                "eval_episodes" => cfg.eval_episodes = parse_value(line, key, v)?,
                "out_dir" => cfg.out_dir = PathBuf::from(v),
                "parallel" => cfg.parallel = parse_value(line, key, v)?,
                other => {
                    return Err(Error::Config {
                        line,
                        msg: format!("unknown key {other:?}"),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config { line, msg } => Error::Format {
                path: path.to_path_buf(),
                msg: format!("line {line}: {msg}"),
            },
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::domain("episodes must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::domain("at least one seed is required"));
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            return Err(Error::domain("seeds must be distinct"));
        }
        if self.width == 0 {
            return Err(Error::domain("width must be positive"));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return Err(Error::domain(format!("noise_level {} outside [0, 1]", self.noise_level)));
        }
        if self.robustness_noise.iter().any(|n| !(0.0..=1.0).contains(n)) {
            return Err(Error::domain("robustness noise levels must lie in [0, 1]"));
        }
        if self.env == EnvKind::Link && self.agent == AgentKind::Qdqn {
            return Err(Error::domain("Q-DQN has no continuous power head; use a policy-gradient agent for link"));
        }
        self.agent_cfg.validate()
    }

    pub fn link_config(&self, pilot_snr_db: f64) -> LinkConfig {
        LinkConfig {
            pilot_snr_db,
            horizon: self.agent_cfg.horizon,
            ..LinkConfig::default()
        }
    }
}

pub fn build_env(cfg: &ExperimentConfig, noise_level: f64, pilot_snr_db: f64) -> Result<Box<dyn Environment>> {
    let horizon = cfg.agent_cfg.horizon;
    Ok(match cfg.env {
        EnvKind::Classical => {
            let mut env = ClassicalEnv::new(noise_level);
            env.horizon = horizon;
            Box::new(env)
        }
        EnvKind::Quantum => {
            let mut env = QuantumEnv::new(noise_level)?;
            env.horizon = horizon;
            Box::new(env)
        }
        EnvKind::Link => Box::new(LinkEnv::new(cfg.link_config(pilot_snr_db))),
    })
}

pub fn build_agent(cfg: &ExperimentConfig, env: &dyn Environment, rng: &mut SimRng) -> Result<Box<dyn Agent>> {
    match cfg.agent {
        AgentKind::Qdqn => {
            let net = QuantumQNet::new(env.num_actions(), std::f64::consts::PI);
            Ok(Box::new(QDqnAgent::new(net, cfg.agent_cfg.clone(), rng)?))
        }
        kind => {
            let net = PolicyNet::new(env.obs_dim(), cfg.width, env.num_actions(), env.has_continuous_action())?;
            Ok(Box::new(PolicyGradientAgent::new(kind, net, cfg.agent_cfg.clone(), rng)?))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessEntry {
    pub noise: f64,
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub agent: AgentKind,
    pub env: EnvKind,
    pub seed: u64,
    pub rewards: Vec<f64>,
    pub moving_avg: Vec<f64>,
    pub episodes_to_success: Option<usize>,
    pub robustness: Vec<RobustnessEntry>,
    /// Set when training aborted; `rewards` then holds the completed episodes.
    pub failure: Option<String>,
}

impl RunRecord {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    pub fn robustness_at(&self, noise: f64) -> Option<f64> {
        self.robustness.iter().find(|e| e.noise == noise).map(|e| e.fraction)
    }
}

pub struct TrainedRun {
    pub record: RunRecord,
    pub agent: Box<dyn Agent>,
}

/// Trailing mean over up to `window` episodes; early entries average what
/// is available.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    let mut acc = 0.0;
    for i in 0..series.len() {
        acc += series[i];
        if i >= window {
            acc -= series[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}

/// Smallest 1-based n ≥ 25 with mean(rewards[n−24..=n]) ≥ threshold.
pub fn episodes_to_success(rewards: &[f64], threshold: f64) -> Option<usize> {
    if rewards.len() < MOVING_WINDOW {
        return None;
    }
    let mut sum: f64 = rewards[..MOVING_WINDOW].iter().sum();
    for end in MOVING_WINDOW..=rewards.len() {
        if end > MOVING_WINDOW {
            sum += rewards[end - 1] - rewards[end - 1 - MOVING_WINDOW];
        }
        // the running sum only screens; candidates are confirmed exactly
        let mean = sum / MOVING_WINDOW as f64;
        if mean >= threshold - 1e-9 {
            let exact: f64 = rewards[end - MOVING_WINDOW..end].iter().sum::<f64>() / MOVING_WINDOW as f64;
            if exact >= threshold {
                return Some(end);
            }
        }
    }
    None
}

fn eval_rng(seed: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Plays `episodes` episodes and returns their total rewards. The policy
/// receives the observation and the step index within the episode.
pub fn evaluate_policy<F>(env: &mut dyn Environment, episodes: usize, rng: &mut SimRng, mut policy: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], usize, &mut SimRng) -> Result<PolicyAction>,
{
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset(rng);
        let mut total = 0.0;
        for t in 0..env.horizon() {
            let a = policy(&obs, t, rng)?;
            let s = env.step(a, rng)?;
            total += s.reward;
            obs = s.obs;
            if s.done {
                break;
            }
        }
        out.push(total);
    }
    Ok(out)
}

pub fn success_fraction(returns: &[f64], threshold: f64) -> f64 {
    if returns.is_empty() {
        return 0.0;
    }
    returns.iter().filter(|&&r| r >= threshold).count() as f64 / returns.len() as f64
}

/// Fraction of greedy episodes reaching the success threshold at `noise_level`.
pub fn robustness_eval(
    agent: &dyn Agent,
    cfg: &ExperimentConfig,
    noise_level: f64,
    episodes: usize,
    rng: &mut SimRng,
) -> Result<f64> {
    let mut env = build_env(cfg, noise_level, cfg.pilot_snr_db)?;
    let returns = evaluate_policy(env.as_mut(), episodes, rng, |obs, _, r| agent.act(obs, SelectMode::Greedy, r))?;
    Ok(success_fraction(&returns, SUCCESS_THRESHOLD))
}

/// Mean per-slot throughput (bits/symbol) of the greedy policy at the given
/// pilot SNR.
pub fn link_throughput(
    agent: &dyn Agent,
    cfg: &ExperimentConfig,
    pilot_snr_db: f64,
    episodes: usize,
    rng: &mut SimRng,
) -> Result<f64> {
    let mut env = LinkEnv::new(cfg.link_config(pilot_snr_db));
    let horizon = env.horizon() as f64;
    let returns = evaluate_policy(&mut env, episodes, rng, |obs, _, r| agent.act(obs, SelectMode::Greedy, r))?;
    Ok(returns.iter().sum::<f64>() / (returns.len() as f64 * horizon))
}

fn train_one(cfg: &ExperimentConfig, seed: u64) -> Result<TrainedRun> {
    let mut rng = SimRng::seed_from_u64(seed);
    let mut env = build_env(cfg, cfg.noise_level, cfg.pilot_snr_db)?;
    let mut agent = build_agent(cfg, env.as_ref(), &mut rng)?;
    let mut rewards = Vec::with_capacity(cfg.episodes);
    let mut failure = None;
    for _ in 0..cfg.episodes {
        match agent.train_episode(env.as_mut(), &mut rng) {
            Ok(r) => rewards.push(r),
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        }
    }
    let mut robustness = Vec::new();
    if failure.is_none() && cfg.env != EnvKind::Link {
        let mut erng = eval_rng(seed);
        for &noise in &cfg.robustness_noise {
            let fraction = robustness_eval(agent.as_ref(), cfg, noise, cfg.eval_episodes, &mut erng)?;
            robustness.push(RobustnessEntry { noise, fraction });
        }
    }
    let record = RunRecord {
        agent: cfg.agent,
        env: cfg.env,
        seed,
        moving_avg: moving_average(&rewards, MOVING_WINDOW),
        episodes_to_success: episodes_to_success(&rewards, SUCCESS_THRESHOLD),
        rewards,
        robustness,
        failure,
    };
    Ok(TrainedRun { record, agent })
}

/// Trains one fresh agent per seed. Output order follows `cfg.seeds`.
pub fn run_training(cfg: &ExperimentConfig) -> Result<Vec<TrainedRun>> {
    cfg.validate()?;
    if !cfg.parallel {
        return cfg.seeds.iter().map(|&s| train_one(cfg, s)).collect();
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = cfg.seeds.iter().map(|&s| scope.spawn(move || train_one(cfg, s))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
            .collect()
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

/// log₂(1 + P‖h‖²/σ²)
pub fn capacity_sample(gain: f64, power: f64, sigma2: f64) -> f64 {
    (power * gain / sigma2).ln_1p() / std::f64::consts::LN_2
}

/// Monte Carlo E[log₂(1 + P_max‖h‖²/σ²)] with h ~ CN(0, I_N) and σ² drawn
/// as in the link environment.
pub fn ergodic_capacity(cfg: &LinkConfig, samples: usize, rng: &mut SimRng) -> Result<CapacityEstimate> {
    if samples == 0 {
        return Err(Error::domain("ergodic_capacity needs at least one sample"));
    }
    let (lo, hi) = cfg.sigma2_range;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..samples {
        let gain: f64 = (0..cfg.antennas).map(|_| crate::env::complex_gaussian(rng, 1.0).norm_sqr()).sum();
        let sigma2 = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let c = capacity_sample(gain, cfg.p_max, sigma2);
        sum += c;
        sumsq += c * c;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = if samples > 1 { (sumsq - n * mean * mean).max(0.0) / (n - 1.0) } else { 0.0 };
    Ok(CapacityEstimate {
        mean,
        stderr: (var / n).sqrt(),
        samples,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
    pub n: usize,
}

impl Stat {
    /// Sample std (n − 1); zero for a single value.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN, stderr: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, stderr: std / (n as f64).sqrt(), n }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    /// Seeds that never succeeded count as the episode budget.
    pub episodes_to_success: Stat,
    pub censored: usize,
    pub robustness: BTreeMap<String, Stat>,
    pub failed_runs: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub agents: BTreeMap<String, AgentSummary>,
}

fn noise_key(noise: f64) -> String {
    format!("noise_{noise}")
}

/// Groups records by agent and reduces each group in seed order.
pub fn summarize(records: &[RunRecord]) -> Summary {
    let mut groups: BTreeMap<AgentKind, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.agent).or_default().push(r);
    }
    let mut summary = Summary::default();
    for (kind, mut group) in groups {
        group.sort_by_key(|r| r.seed);
        let ok: Vec<&RunRecord> = group.iter().copied().filter(|r| !r.failed()).collect();
        let ets: Vec<f64> = ok
            .iter()
            .map(|r| r.episodes_to_success.unwrap_or(r.rewards.len()) as f64)
            .collect();
        let mut noises: Vec<f64> = ok.iter().flat_map(|r| r.robustness.iter().map(|e| e.noise)).collect();
        noises.sort_by(f64::total_cmp);
        noises.dedup();
        let robustness = noises
            .into_iter()
            .map(|n| {
                let vals: Vec<f64> = ok.iter().filter_map(|r| r.robustness_at(n)).collect();
                (noise_key(n), Stat::of(&vals))
            })
            .collect();
        summary.agents.insert(
            kind.name().to_string(),
            AgentSummary {
                episodes_to_success: Stat::of(&ets),
                censored: ok.iter().filter(|r| r.episodes_to_success.is_none()).count(),
                robustness,
                failed_runs: group.len() - ok.len(),
            },
        );
    }
    summary
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::domain(format!("unknown format {other:?}"))),
        }
    }
}

pub const RECORDS_FILE: &str = "records.json";
pub const SUMMARY_FILE: &str = "summary.json";

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn rewards_csv(records: &[RunRecord]) -> String {
    let mut s = String::from("seed,episode,reward,moving_avg\n");
    for r in records {
        for (i, (rew, ma)) in r.rewards.iter().zip(&r.moving_avg).enumerate() {
            s.push_str(&format!("{},{},{},{}\n", r.seed, i + 1, rew, ma));
        }
    }
    s
}

/// Writes the reward series (`rewards.csv` or `rewards.json`), the full
/// records and the per-agent summary into `dir`. Returns the written paths.
pub fn emit_results(records: &[RunRecord], format: OutputFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let series = match format {
        OutputFormat::Csv => (dir.join("rewards.csv"), rewards_csv(records)),
        OutputFormat::Json => (dir.join("rewards.json"), to_json(records)?),
    };
    write_file(&series.0, series.1.as_bytes())?;
    written.push(series.0);
    let rec = dir.join(RECORDS_FILE);
    write_file(&rec, to_json(records)?.as_bytes())?;
    written.push(rec);
    let sum = dir.join(SUMMARY_FILE);
    write_file(&sum, to_json(&summarize(records))?.as_bytes())?;
    written.push(sum);
    Ok(written)
}

fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::domain(format!("serialization: {e}")))
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

const PARAMS_MAGIC: &[u8; 4] = b"QPRM";

/// Layout header of (name, rows, cols) entries, then the parameter count
/// and the values, all little-endian.
pub fn encode_params(layout: &ParamLayout, params: &ParamVector) -> Result<Vec<u8>> {
    if params.len() != layout.total() {
        return Err(Error::Dimension { expected: layout.total(), got: params.len() });
    }
    let mut out = Vec::with_capacity(16 + 8 * params.len());
    out.extend_from_slice(PARAMS_MAGIC);
    out.extend_from_slice(&(layout.layers().len() as u32).to_le_bytes());
    for l in layout.layers() {
        out.extend_from_slice(&(l.name.len() as u32).to_le_bytes());
        out.extend_from_slice(l.name.as_bytes());
        out.extend_from_slice(&(l.shape.0 as u64).to_le_bytes());
        out.extend_from_slice(&(l.shape.1 as u64).to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for x in &params.0 {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated file")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_params(bytes: &[u8]) -> std::result::Result<(ParamLayout, ParamVector), String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != PARAMS_MAGIC {
        return Err("not a parameter file".into());
    }
    let layers = r.u32()? as usize;
    let mut shapes = Vec::with_capacity(layers.min(64));
    for _ in 0..layers {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| "layer name is not UTF-8")?;
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        shapes.push((name, (rows, cols)));
    }
    let layout = ParamLayout::from_shapes(shapes.iter().map(|(n, s)| (n.as_str(), *s)));
    let n = r.u64()? as usize;
    if n != layout.total() {
        return Err(format!("header declares {} parameters, data holds {n}", layout.total()));
    }
    let values = (0..n)
        .map(|_| r.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if r.pos != bytes.len() {
        return Err("trailing bytes".into());
    }
    Ok((layout, ParamVector(values)))
}

pub fn params_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("params_seed{seed}.bin"))
}

pub fn save_params(path: &Path, layout: &ParamLayout, params: &ParamVector) -> Result<()> {
    write_file(path, &encode_params(layout, params)?)
}

pub fn load_params(path: &Path) -> Result<(ParamLayout, ParamVector)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_params(&bytes).map_err(|msg| Error::Format { path: path.to_path_buf(), msg })
}

/// Rebuilds an agent for `cfg` and installs saved parameters, checking the
/// stored layout against the freshly built network.
pub fn restore_agent(cfg: &ExperimentConfig, path: &Path) -> Result<Box<dyn Agent>> {
    let (layout, params) = load_params(path)?;
    let env = build_env(cfg, cfg.noise_level, cfg.pilot_snr_db)?;
    let mut agent = build_agent(cfg, env.as_ref(), &mut SimRng::seed_from_u64(0))?;
    if &layout != agent.layout() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: "parameter layout does not match the configured network".into(),
        });
    }
    agent.set_params(params)?;
    Ok(agent)
}

/// Robustness of saved agents for every seed in `cfg`, evaluated at `noise`.
pub fn evaluate_saved(cfg: &ExperimentConfig, dir: &Path, noise: &[f64]) -> Result<Vec<(u64, Vec<RobustnessEntry>)>> {
    cfg.seeds
        .iter()
        .map(|&seed| {
            let agent = restore_agent(cfg, &params_path(dir, seed))?;
            let mut rng = eval_rng(seed);
            let entries = noise
                .iter()
                .map(|&n| {
                    robustness_eval(agent.as_ref(), cfg, n, cfg.eval_episodes, &mut rng)
                        .map(|fraction| RobustnessEntry { noise: n, fraction })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((seed, entries))
        })
        .collect()
}

//! Small dense policy and value networks with hand-written reverse-mode
//! gradients, plus the single-qubit embedding circuit used by the
//! quantum DQN.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fisher::{dot, Block, BlockLayout};
use crate::quantum::{gate_matrix, Gate, GateAction};

/// Added to the softplus output so the Gaussian head never collapses.
pub const MIN_STD: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    /// (rows, cols); biases are (rows, 1).
    pub shape: (usize, usize),
    pub start: usize,
}

impl LayerSpec {
    pub fn len(&self) -> usize {
        self.shape.0 * self.shape.1
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len()
    }
}

/// Named slices of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    layers: Vec<LayerSpec>,
}

impl ParamLayout {
    pub fn from_shapes<'a>(shapes: impl IntoIterator<Item = (&'a str, (usize, usize))>) -> Self {
        let mut start = 0;
        let layers = shapes
            .into_iter()
            .map(|(name, shape)| {
                let spec = LayerSpec {
                    name: name.to_string(),
                    shape,
                    start,
                };
                start += spec.len();
                spec
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn total(&self) -> usize {
        self.layers.iter().map(LayerSpec::len).sum()
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// One preconditioning block per named layer.
    pub fn block_layout(&self) -> BlockLayout {
        BlockLayout::new(
            self.layers
                .iter()
                .map(|l| Block {
                    name: l.name.clone(),
                    start: l.start,
                    len: l.len(),
                })
                .collect(),
        )
        .expect("layer slices partition the parameter vector")
    }

    pub fn unflatten(&self, params: &ParamVector) -> Result<Vec<Vec<f64>>> {
        self.check(params)?;
        Ok(self
            .layers
            .iter()
            .map(|l| params.0[l.range()].to_vec())
            .collect())
    }

    pub fn flatten(&self, parts: &[Vec<f64>]) -> Result<ParamVector> {
        if parts.len() != self.layers.len() {
            return Err(Error::Dimension {
                expected: self.layers.len(),
                got: parts.len(),
            });
        }
        let mut out = Vec::with_capacity(self.total());
        for (l, part) in self.layers.iter().zip(parts) {
            if part.len() != l.len() {
                return Err(Error::Dimension {
                    expected: l.len(),
                    got: part.len(),
                });
            }
            out.extend_from_slice(part);
        }
        Ok(ParamVector(out))
    }

    fn check(&self, params: &ParamVector) -> Result<()> {
        if params.0.len() != self.total() {
            return Err(Error::Dimension {
                expected: self.total(),
                got: params.0.len(),
            });
        }
        Ok(())
    }
}

/// Flat parameter vector θ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// θ ← θ + scale·delta
    pub fn axpy(&mut self, scale: f64, delta: &[f64]) {
        self.0.iter_mut().zip(delta).for_each(|(t, d)| *t += scale * d);
    }
}

/// Uniform(±1/√fan_in) weights, zero biases.
fn init_layout<R: Rng + ?Sized>(layout: &ParamLayout, rng: &mut R) -> ParamVector {
    let mut theta = vec![0.0; layout.total()];
    for l in layout.layers() {
        if l.name.starts_with('b') {
            continue;
        }
        let bound = 1.0 / (l.shape.1 as f64).sqrt();
        for v in &mut theta[l.range()] {
            *v = rng.random_range(-bound..bound);
        }
    }
    ParamVector(theta)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub std: f64,
}

impl Gaussian {
    pub fn log_density(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.std;
        -0.5 * z * z - self.std.ln() - 0.5 * (2.0 * PI).ln()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionDistribution {
    pub probs: Vec<f64>,
    pub gaussian: Option<Gaussian>,
}

/// A sampled action: a categorical choice and, for hybrid heads, the
/// unsquashed continuous component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyAction {
    pub choice: usize,
    pub continuous: Option<f64>,
}

impl PolicyAction {
    pub fn discrete(choice: usize) -> Self {
        Self {
            choice,
            continuous: None,
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// y = W x + b with W stored row-major (rows × cols).
fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    w.chunks_exact(x.len())
        .zip(b)
        .map(|(row, bi)| dot(row, x) + bi)
        .collect()
}

/// Two ReLU layers feeding a categorical head and an optional Gaussian head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub input: usize,
    pub width: usize,
    pub actions: usize,
    pub gaussian: bool,
    layout: ParamLayout,
}

struct Forward {
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
    probs: Vec<f64>,
    sigma_pre: f64,
    gaussian: Option<Gaussian>,
}

impl PolicyNet {
    pub fn new(input: usize, width: usize, actions: usize, gaussian: bool) -> Result<Self> {
        if input == 0 || width == 0 || actions == 0 {
            return Err(Error::domain("network dimensions must be positive"));
        }
        let mut shapes = vec![
            ("w1", (width, input)),
            ("b1", (width, 1)),
            ("w2", (width, width)),
            ("b2", (width, 1)),
            ("w3", (actions, width)),
            ("b3", (actions, 1)),
        ];
        if gaussian {
            shapes.extend([
                ("w_mu", (1, width)),
                ("b_mu", (1, 1)),
                ("w_sigma", (1, width)),
                ("b_sigma", (1, 1)),
            ]);
        }
        Ok(Self {
            input,
            width,
            actions,
            gaussian,
            layout: ParamLayout::from_shapes(shapes),
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        init_layout(&self.layout, rng)
    }

    fn slice<'a>(&self, params: &'a ParamVector, name: &str) -> &'a [f64] {
        &params.0[self.layout.layer(name).expect("known layer").range()]
    }

    fn run(&self, params: &ParamVector, obs: &[f64]) -> Result<Forward> {
        self.layout.check(params)?;
        if obs.len() != self.input {
            return Err(Error::Dimension {
                expected: self.input,
                got: obs.len(),
            });
        }
        let z1 = affine(self.slice(params, "w1"), self.slice(params, "b1"), obs);
        let h1: Vec<f64> = z1.iter().map(|v| v.max(0.0)).collect();
        let z2 = affine(self.slice(params, "w2"), self.slice(params, "b2"), &h1);
        let h2: Vec<f64> = z2.iter().map(|v| v.max(0.0)).collect();
        let logits = affine(self.slice(params, "w3"), self.slice(params, "b3"), &h2);
        let probs = softmax(&logits);
        let (gaussian, sigma_pre) = if self.gaussian {
            let mean = dot(self.slice(params, "w_mu"), &h2) + self.slice(params, "b_mu")[0];
            let pre = dot(self.slice(params, "w_sigma"), &h2) + self.slice(params, "b_sigma")[0];
            (
                Some(Gaussian {
                    mean,
                    std: softplus(pre) + MIN_STD,
                }),
                pre,
            )
        } else {
            (None, 0.0)
        };
        Ok(Forward {
            z1,
            h1,
            z2,
            h2,
            probs,
            sigma_pre,
            gaussian,
        })
    }

    pub fn forward(&self, params: &ParamVector, obs: &[f64]) -> Result<ActionDistribution> {
        let f = self.run(params, obs)?;
        Ok(ActionDistribution {
            probs: f.probs,
            gaussian: f.gaussian,
        })
    }

    /// log π(a|s) and its exact gradient with respect to every parameter.
    pub fn logprob_and_grad(
        &self,
        params: &ParamVector,
        obs: &[f64],
        action: PolicyAction,
    ) -> Result<(f64, Vec<f64>)> {
        if action.choice >= self.actions {
            return Err(Error::domain(format!(
                "action {} outside 0..{}",
                action.choice, self.actions
            )));
        }
        if self.gaussian != action.continuous.is_some() {
            return Err(Error::domain("continuous component does not match the head"));
        }
        let f = self.run(params, obs)?;
        let mut grad = vec![0.0; self.layout.total()];
        let mut logp = f.probs[action.choice].ln();

        // d logp / d logits = onehot − probs
        let dlogits: Vec<f64> = f
            .probs
            .iter()
            .enumerate()
            .map(|(i, p)| if i == action.choice { 1.0 - p } else { -p })
            .collect();

        let mut dh2 = vec![0.0; self.width];
        {
            let w3 = self.slice(params, "w3");
            let r = self.layout.layer("w3").unwrap().range();
            let g_w3 = &mut grad[r];
            for (a, da) in dlogits.iter().enumerate() {
                for j in 0..self.width {
                    g_w3[a * self.width + j] = da * f.h2[j];
                    dh2[j] += da * w3[a * self.width + j];
                }
            }
            let r = self.layout.layer("b3").unwrap().range();
            grad[r].copy_from_slice(&dlogits);
        }

        if let (Some(g), Some(x)) = (f.gaussian, action.continuous) {
            logp += g.log_density(x);
            let diff = x - g.mean;
            let dmean = diff / (g.std * g.std);
            let dstd = diff * diff / (g.std * g.std * g.std) - 1.0 / g.std;
            let dpre = dstd * sigmoid(f.sigma_pre);
            let w_mu = self.slice(params, "w_mu").to_vec();
            let w_sigma = self.slice(params, "w_sigma").to_vec();
            for (name, scale) in [("w_mu", dmean), ("w_sigma", dpre)] {
                let r = self.layout.layer(name).unwrap().range();
                grad[r]
                    .iter_mut()
                    .zip(&f.h2)
                    .for_each(|(g, h)| *g = scale * h);
            }
            grad[self.layout.layer("b_mu").unwrap().start] = dmean;
            grad[self.layout.layer("b_sigma").unwrap().start] = dpre;
            for j in 0..self.width {
                dh2[j] += dmean * w_mu[j] + dpre * w_sigma[j];
            }
        }

        let dz2: Vec<f64> = dh2
            .iter()
            .zip(&f.z2)
            .map(|(d, z)| if *z > 0.0 { *d } else { 0.0 })
            .collect();
        let mut dh1 = vec![0.0; self.width];
        {
            let w2 = self.slice(params, "w2");
            let r = self.layout.layer("w2").unwrap().range();
            let g_w2 = &mut grad[r];
            for i in 0..self.width {
                if dz2[i] == 0.0 {
                    continue;
                }
                for j in 0..self.width {
                    g_w2[i * self.width + j] = dz2[i] * f.h1[j];
                    dh1[j] += dz2[i] * w2[i * self.width + j];
                }
            }
            let r = self.layout.layer("b2").unwrap().range();
            grad[r].copy_from_slice(&dz2);
        }

        let dz1: Vec<f64> = dh1
            .iter()
            .zip(&f.z1)
            .map(|(d, z)| if *z > 0.0 { *d } else { 0.0 })
            .collect();
        {
            let r = self.layout.layer("w1").unwrap().range();
            let g_w1 = &mut grad[r];
            for i in 0..self.width {
                for j in 0..self.input {
                    g_w1[i * self.input + j] = dz1[i] * obs[j];
                }
            }
            let r = self.layout.layer("b1").unwrap().range();
            grad[r].copy_from_slice(&dz1);
        }
        Ok((logp, grad))
    }
}

/// Linear Q head over a feature vector: Q = W f + b.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QHead {
    pub features: usize,
    pub actions: usize,
    layout: ParamLayout,
}

impl QHead {
    pub fn new(features: usize, actions: usize) -> Self {
        Self {
            features,
            actions,
            layout: ParamLayout::from_shapes([("wq", (actions, features)), ("bq", (actions, 1))]),
        }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn q_forward(&self, params: &[f64], features: &[f64]) -> Result<Vec<f64>> {
        if params.len() != self.layout.total() {
            return Err(Error::Dimension {
                expected: self.layout.total(),
                got: params.len(),
            });
        }
        if features.len() != self.features {
            return Err(Error::Dimension {
                expected: self.features,
                got: features.len(),
            });
        }
        let (w, b) = params.split_at(self.actions * self.features);
        Ok(affine(w, b, features))
    }
}

/// Number of trainable angles in the embedding circuit (two Ry/Rz layers).
pub const EMBED_PARAMS: usize = 4;

fn bloch_of(psi: [Complex64; 2]) -> [f64; 3] {
    let c = psi[0].conj() * psi[1];
    [2.0 * c.re, 2.0 * c.im, psi[0].norm_sqr() - psi[1].norm_sqr()]
}

/// Angle-encodes up to three observation components (scaled by `obs_scale`
/// and clamped to [−π, π]) with Rx, Ry, Rz in that order on |0⟩, then
/// applies two trainable Ry(a)·Rz(b) layers. Returns (⟨σx⟩, ⟨σy⟩, ⟨σz⟩).
pub fn quantum_embed(obs: &[f64], embed: &[f64], obs_scale: f64) -> [f64; 3] {
    debug_assert_eq!(embed.len(), EMBED_PARAMS);
    let mut psi = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
    for (gate, x) in [Gate::Rx, Gate::Ry, Gate::Rz].into_iter().zip(obs) {
        let angle = (obs_scale * x).clamp(-PI, PI);
        psi = gate_matrix(GateAction::new(gate, angle)).apply(psi);
    }
    for layer in embed.chunks_exact(2) {
        psi = gate_matrix(GateAction::new(Gate::Ry, layer[0])).apply(psi);
        psi = gate_matrix(GateAction::new(Gate::Rz, layer[1])).apply(psi);
    }
    bloch_of(psi)
}

/// ∂f_Q/∂(embed angle k) by the parameter-shift rule; `jac[c][k]`.
pub fn embed_jacobian(obs: &[f64], embed: &[f64], obs_scale: f64) -> [[f64; EMBED_PARAMS]; 3] {
    let mut jac = [[0.0; EMBED_PARAMS]; 3];
    let mut shifted = embed.to_vec();
    for k in 0..EMBED_PARAMS {
        shifted[k] = embed[k] + FRAC_PI_2;
        let plus = quantum_embed(obs, &shifted, obs_scale);
        shifted[k] = embed[k] - FRAC_PI_2;
        let minus = quantum_embed(obs, &shifted, obs_scale);
        shifted[k] = embed[k];
        for c in 0..3 {
            jac[c][k] = 0.5 * (plus[c] - minus[c]);
        }
    }
    jac
}

/// One replayed transition for the TD loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

/// Quantum-embedded Q network: embedding angles followed by a linear head
/// over the three Bloch features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantumQNet {
    pub actions: usize,
    pub obs_scale: f64,
    head: QHead,
    layout: ParamLayout,
}

impl QuantumQNet {
    pub fn new(actions: usize, obs_scale: f64) -> Self {
        Self {
            actions,
            obs_scale,
            head: QHead::new(3, actions),
            layout: ParamLayout::from_shapes([
                ("embed", (EMBED_PARAMS, 1)),
                ("wq", (actions, 3)),
                ("bq", (actions, 1)),
            ]),
        }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut p = init_layout(&self.layout, rng);
        for v in &mut p.0[..EMBED_PARAMS] {
            *v = rng.random_range(-PI..PI);
        }
        p
    }

    pub fn features(&self, params: &ParamVector, obs: &[f64]) -> [f64; 3] {
        quantum_embed(obs, &params.0[..EMBED_PARAMS], self.obs_scale)
    }

    pub fn q_values(&self, params: &ParamVector, obs: &[f64]) -> Result<Vec<f64>> {
        self.layout.check(params)?;
        let f = self.features(params, obs);
        self.head.q_forward(&params.0[EMBED_PARAMS..], &f)
    }

    /// Mean squared TD error against `target` parameters and its gradient
    /// with respect to `params` (the target is held fixed).
    pub fn td_loss_and_grad(
        &self,
        params: &ParamVector,
        target: &ParamVector,
        batch: &[&Transition],
        gamma: f64,
    ) -> Result<(f64, Vec<f64>)> {
        self.layout.check(params)?;
        if batch.is_empty() {
            return Err(Error::domain("empty TD batch"));
        }
        let mut grad = vec![0.0; self.layout.total()];
        let mut loss = 0.0;
        let inv_b = 1.0 / batch.len() as f64;
        let nf = 3;
        for t in batch {
            let y = if t.done {
                t.reward
            } else {
                let next = self.q_values(target, &t.next_obs)?;
                t.reward + gamma * next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            };
            let f = self.features(params, &t.obs);
            let q = self.head.q_forward(&params.0[EMBED_PARAMS..], &f)?;
            let err = y - q[t.action];
            loss += err * err * inv_b;
            // dL/dQ(s,a)
            let dq = -2.0 * err * inv_b;
            let wq_start = EMBED_PARAMS + t.action * nf;
            let bq_start = EMBED_PARAMS + self.actions * nf + t.action;
            for c in 0..nf {
                grad[wq_start + c] += dq * f[c];
            }
            grad[bq_start] += dq;
            let jac = embed_jacobian(&t.obs, &params.0[..EMBED_PARAMS], self.obs_scale);
            for k in 0..EMBED_PARAMS {
                let dfk: f64 = (0..nf).map(|c| params.0[wq_start + c] * jac[c][k]).sum();
                grad[k] += dq * dfk;
            }
        }
        Ok((loss, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_params<R: Rng>(rng: &mut R, d: usize) -> ParamVector {
        ParamVector((0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn fd_logp(net: &PolicyNet, p: &ParamVector, obs: &[f64], a: PolicyAction, i: usize, h: f64) -> f64 {
        let mut plus = p.clone();
        let mut minus = p.clone();
        plus.0[i] += h;
        minus.0[i] -= h;
        let lp = net.logprob_and_grad(&plus, obs, a).unwrap().0;
        let lm = net.logprob_and_grad(&minus, obs, a).unwrap().0;
        (lp - lm) / (2.0 * h)
    }

    #[test]
    fn zero_params_give_uniform_policy() {
        let net = PolicyNet::new(3, 8, 5, false).unwrap();
        let d = net.forward(&ParamVector::zeros(net.layout().total()), &[0.2, 0.8, 1.0]).unwrap();
        assert!(d.probs.iter().all(|p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn softmax_reference_values() {
        let p = softmax(&[1.0, 1.0, 0.0, 0.0, 0.0]);
        let e = std::f64::consts::E;
        let z = 2.0 * e + 3.0;
        let want = [e / z, e / z, 1.0 / z, 1.0 / z, 1.0 / z];
        for (a, b) in p.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((p[0] - 0.32224).abs() < 5e-5 && (p[2] - 0.11854).abs() < 5e-5);
    }

    #[test]
    fn categorical_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = PolicyNet::new(3, 8, 5, true).unwrap();
        for _ in 0..1000 {
            let p = random_params(&mut rng, net.layout().total());
            let obs: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let d = net.forward(&p, &obs).unwrap();
            assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            assert!(d.gaussian.unwrap().std > 0.0);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let net = PolicyNet::new(3, 4, 2, false).unwrap();
        let p = ParamVector::zeros(net.layout().total());
        assert!(matches!(net.forward(&p, &[1.0]), Err(Error::Dimension { .. })));
        assert!(net.forward(&ParamVector::zeros(3), &[0.0; 3]).is_err());
    }

    #[test]
    fn single_action_policy_has_zero_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = PolicyNet::new(3, 4, 1, false).unwrap();
        let p = random_params(&mut rng, net.layout().total());
        let (lp, g) = net.logprob_and_grad(&p, &[0.1, 0.2, 0.3], PolicyAction::discrete(0)).unwrap();
        assert_eq!(lp, 0.0);
        assert!(g.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn score_function_has_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = PolicyNet::new(3, 4, 3, false).unwrap();
        let p = random_params(&mut rng, net.layout().total());
        let obs = [0.3, -0.5, 0.9];
        let dist = net.forward(&p, &obs).unwrap();
        let grads: Vec<Vec<f64>> = (0..3)
            .map(|a| net.logprob_and_grad(&p, &obs, PolicyAction::discrete(a)).unwrap().1)
            .collect();
        let n = 100_000;
        let d = net.layout().total();
        let mut sum = vec![0.0; d];
        let mut sumsq = vec![0.0; d];
        for _ in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let a = dist
                .probs
                .iter()
                .position(|p| {
                    acc += p;
                    u < acc
                })
                .unwrap_or(2);
            for i in 0..d {
                sum[i] += grads[a][i];
                sumsq[i] += grads[a][i] * grads[a][i];
            }
        }
        for i in 0..d {
            let mean = sum[i] / n as f64;
            let var = sumsq[i] / n as f64 - mean * mean;
            let se = (var / n as f64).sqrt();
            assert!(mean.abs() <= 3.0 * se + 1e-12, "param {i}: {mean} vs se {se}");
        }
    }

    #[test]
    fn hybrid_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = PolicyNet::new(9, 6, 3, true).unwrap();
        for _ in 0..20 {
            let p = random_params(&mut rng, net.layout().total());
            let obs: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = PolicyAction {
                choice: rng.random_range(0..3),
                continuous: Some(rng.random_range(-1.0..2.0)),
            };
            let (_, g) = net.logprob_and_grad(&p, &obs, a).unwrap();
            for i in 0..g.len() {
                let fd = fd_logp(&net, &p, &obs, a, i, 1e-6);
                assert!((fd - g[i]).abs() <= 1e-4 * fd.abs().max(1.0), "param {i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn logprob_rejects_mismatched_action() {
        let net = PolicyNet::new(3, 4, 2, true).unwrap();
        let p = ParamVector::zeros(net.layout().total());
        assert!(net.logprob_and_grad(&p, &[0.0; 3], PolicyAction::discrete(0)).is_err());
        assert!(net
            .logprob_and_grad(&p, &[0.0; 3], PolicyAction { choice: 5, continuous: Some(0.0) })
            .is_err());
    }

    #[test]
    fn q_head_examples() {
        let head = QHead::new(3, 2);
        assert_eq!(head.q_forward(&[0.0; 8], &[1.0, 2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        let params = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.5, -0.5];
        assert_eq!(head.q_forward(&params, &[0.0, 1.0, 0.0]).unwrap(), vec![2.5, 4.5]);
        assert!(head.q_forward(&params, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn embedding_of_zero_is_ground_state() {
        let f = quantum_embed(&[0.0, 0.0, 0.0], &[0.0; 4], PI);
        assert!(f[0].abs() < 1e-15 && f[1].abs() < 1e-15 && (f[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn parameter_shift_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let obs: Vec<f64> = (0..3).map(|_| rng.random()).collect();
            let embed: Vec<f64> = (0..4).map(|_| rng.random_range(-PI..PI)).collect();
            let jac = embed_jacobian(&obs, &embed, PI);
            for k in 0..4 {
                let h = 1e-6;
                let mut p = embed.clone();
                p[k] += h;
                let plus = quantum_embed(&obs, &p, PI);
                p[k] -= 2.0 * h;
                let minus = quantum_embed(&obs, &p, PI);
                for c in 0..3 {
                    let fd = (plus[c] - minus[c]) / (2.0 * h);
                    assert!((fd - jac[c][k]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn td_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = QuantumQNet::new(5, PI);
        let params = net.init(&mut rng);
        let target = net.init(&mut rng);
        let batch: Vec<Transition> = (0..8)
            .map(|i| Transition {
                obs: (0..3).map(|_| rng.random()).collect(),
                action: rng.random_range(0..5),
                reward: rng.random(),
                next_obs: (0..3).map(|_| rng.random()).collect(),
                done: i % 3 == 0,
            })
            .collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let (_, g) = net.td_loss_and_grad(&params, &target, &refs, 0.99).unwrap();
        for i in 0..g.len() {
            let h = 1e-6;
            let mut p = params.clone();
            p.0[i] += h;
            let lp = net.td_loss_and_grad(&p, &target, &refs, 0.99).unwrap().0;
            p.0[i] -= 2.0 * h;
            let lm = net.td_loss_and_grad(&p, &target, &refs, 0.99).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-5 * fd.abs().max(1.0), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn terminal_transition_uses_reward_only() {
        let net = QuantumQNet::new(2, PI);
        let mut params = ParamVector::zeros(net.layout().total());
        let t = Transition {
            obs: vec![0.0; 3],
            action: 1,
            reward: 0.7,
            next_obs: vec![0.0; 3],
            done: true,
        };
        // target with huge values must not leak into a terminal target
        let target = ParamVector(vec![100.0; net.layout().total()]);
        let (loss, _) = net.td_loss_and_grad(&params, &target, &[&t], 0.99).unwrap();
        assert!((loss - 0.49).abs() < 1e-12);
        // fit Q(s, 1) = 0.7 exactly → zero loss, zero gradient
        params.0[EMBED_PARAMS + 2 * 3 + 1] = 0.7;
        let (loss, g) = net.td_loss_and_grad(&params, &target, &[&t], 0.99).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn block_layout_follows_layers() {
        let net = PolicyNet::new(3, 4, 5, false).unwrap();
        let names: Vec<_> = net.layout().block_layout().blocks().iter().map(|b| b.name.clone()).collect();
        assert_eq!(names, ["w1", "b1", "w2", "b2", "w3", "b3"]);
        assert_eq!(net.layout().total(), 4 * 3 + 4 + 16 + 4 + 20 + 5);
    }

    proptest! {
        #[test]
        fn flatten_roundtrip(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = PolicyNet::new(3, 5, 4, true).unwrap();
            let p = random_params(&mut rng, net.layout().total());
            let parts = net.layout().unflatten(&p).unwrap();
            prop_assert_eq!(net.layout().flatten(&parts).unwrap(), p);
        }

        #[test]
        fn softmax_shift_invariance(logits in prop::collection::vec(-20.0f64..20.0, 1..8), c in -50.0f64..50.0) {
            let shifted: Vec<f64> = logits.iter().map(|l| l + c).collect();
            let (a, b) = (softmax(&logits), softmax(&shifted));
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn embedding_stays_in_bloch_ball(obs in prop::array::uniform3(-3.0f64..3.0), emb in prop::array::uniform4(-6.0f64..6.0)) {
            let f = quantum_embed(&obs, &emb, PI);
            let n = f.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(n <= 1.0 + 1e-12);
            prop_assert!(f.iter().all(|x| x.abs() <= 1.0 + 1e-12));
        }
    }
}

//! Exact single-qubit simulation on density matrices.
//!
//! States are 2×2 density matrices so that Kraus noise can produce mixed
//! states; a pure state |ψ⟩ is the rank-1 case |ψ⟩⟨ψ|. Rotations follow the
//! half-angle convention R_a(θ) = exp(−iθσ_a/2).

use std::fmt;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for the algebraic identities checked on states and channels.
pub const STATE_TOL: f64 = 1e-12;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I_UNIT: Complex64 = Complex64::new(0.0, 1.0);

/// Row-major 2×2 complex matrix.
#[derive(Clone, Copy, PartialEq)]
pub struct ComplexMatrix2(pub [[Complex64; 2]; 2]);

impl fmt::Debug for ComplexMatrix2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = &self.0;
        write!(
            f,
            "[[{}, {}], [{}, {}]]",
            m[0][0], m[0][1], m[1][0], m[1][1]
        )
    }
}

impl ComplexMatrix2 {
    pub const fn new(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> Self {
        Self([[a, b], [c, d]])
    }

    pub fn from_real(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self::new(a.into(), b.into(), c.into(), d.into())
    }

    pub const fn zero() -> Self {
        Self([[ZERO, ZERO], [ZERO, ZERO]])
    }

    pub const fn identity() -> Self {
        Self([[ONE, ZERO], [ZERO, ONE]])
    }

    pub const fn pauli_x() -> Self {
        Self([[ZERO, ONE], [ONE, ZERO]])
    }

    pub fn pauli_y() -> Self {
        Self([[ZERO, -I_UNIT], [I_UNIT, ZERO]])
    }

    pub fn pauli_z() -> Self {
        Self::from_real(1.0, 0.0, 0.0, -1.0)
    }

    pub fn hadamard() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Self::from_real(s, s, s, -s)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.0[row][col]
    }

    pub fn adjoint(&self) -> Self {
        let m = &self.0;
        Self::new(m[0][0].conj(), m[1][0].conj(), m[0][1].conj(), m[1][1].conj())
    }

    pub fn trace(&self) -> Complex64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn scale(&self, s: Complex64) -> Self {
        let m = &self.0;
        Self::new(m[0][0] * s, m[0][1] * s, m[1][0] * s, m[1][1] * s)
    }

    /// U ρ U†.
    pub fn conjugate_by(&self, u: &ComplexMatrix2) -> Self {
        *u * *self * u.adjoint()
    }

    pub fn apply(&self, v: [Complex64; 2]) -> [Complex64; 2] {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1],
            m[1][0] * v[0] + m[1][1] * v[1],
        ]
    }

    pub fn max_abs_diff(&self, other: &ComplexMatrix2) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..2 {
            for c in 0..2 {
                worst = worst.max((self.0[r][c] - other.0[r][c]).norm());
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// (M + M†)/2
    pub fn hermitian_part(&self) -> Self {
        (*self + self.adjoint()).scale(Complex64::new(0.5, 0.0))
    }
}

impl Add for ComplexMatrix2 {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let (a, b) = (&self.0, &rhs.0);
        Self::new(
            a[0][0] + b[0][0],
            a[0][1] + b[0][1],
            a[1][0] + b[1][0],
            a[1][1] + b[1][1],
        )
    }
}

impl Sub for ComplexMatrix2 {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let (a, b) = (&self.0, &rhs.0);
        Self::new(
            a[0][0] - b[0][0],
            a[0][1] - b[0][1],
            a[1][0] - b[1][0],
            a[1][1] - b[1][1],
        )
    }
}

impl Mul for ComplexMatrix2 {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let (a, b) = (&self.0, &rhs.0);
        Self::new(
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        )
    }
}

/// Eigenvalues of a Hermitian 2×2 matrix, ascending.
pub fn hermitian_eigenvalues(m: &ComplexMatrix2) -> [f64; 2] {
    let a = m.get(0, 0).re;
    let d = m.get(1, 1).re;
    let b = m.get(0, 1);
    let mean = 0.5 * (a + d);
    let radius = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
    [mean - radius, mean + radius]
}

/// Density matrix of a single qubit. Construction validates Hermiticity,
/// unit trace and positivity.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct QubitState {
    rho: ComplexMatrix2,
}

impl QubitState {
    pub fn new(rho: ComplexMatrix2) -> Result<Self> {
        let state = Self { rho };
        state.validate()?;
        Ok(state)
    }

    /// |0⟩⟨0|
    pub fn ground() -> Self {
        Self {
            rho: ComplexMatrix2::from_real(1.0, 0.0, 0.0, 0.0),
        }
    }

    /// |1⟩⟨1|
    pub fn excited() -> Self {
        Self {
            rho: ComplexMatrix2::from_real(0.0, 0.0, 0.0, 1.0),
        }
    }

    pub fn maximally_mixed() -> Self {
        Self {
            rho: ComplexMatrix2::from_real(0.5, 0.0, 0.0, 0.5),
        }
    }

    /// |ψ⟩⟨ψ| for a (not necessarily normalized) amplitude pair.
    pub fn from_amplitudes(psi: [Complex64; 2]) -> Result<Self> {
        let norm2 = psi[0].norm_sqr() + psi[1].norm_sqr();
        if !(norm2 > 0.0 && norm2.is_finite()) {
            return Err(Error::InvalidState("zero or non-finite amplitude vector".into()));
        }
        let mut rho = ComplexMatrix2::zero();
        for r in 0..2 {
            for c in 0..2 {
                rho.0[r][c] = psi[r] * psi[c].conj() / norm2;
            }
        }
        Self::new(rho)
    }

    /// State with Bloch vector `r` (|r| ≤ 1).
    pub fn from_bloch(r: [f64; 3]) -> Result<Self> {
        let rho = ComplexMatrix2::new(
            Complex64::new(0.5 * (1.0 + r[2]), 0.0),
            Complex64::new(0.5 * r[0], -0.5 * r[1]),
            Complex64::new(0.5 * r[0], 0.5 * r[1]),
            Complex64::new(0.5 * (1.0 - r[2]), 0.0),
        );
        Self::new(rho)
    }

    pub fn rho(&self) -> &ComplexMatrix2 {
        &self.rho
    }

    pub fn validate(&self) -> Result<()> {
        let rho = &self.rho;
        if !rho.is_finite() {
            return Err(Error::InvalidState("non-finite entries".into()));
        }
        let herm = rho.max_abs_diff(&rho.adjoint());
        if herm > STATE_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (deviation {herm:e})")));
        }
        let tr = rho.trace();
        if (tr - ONE).norm() > STATE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let [low, _] = hermitian_eigenvalues(rho);
        if low < -STATE_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {low:e}")));
        }
        Ok(())
    }

    /// Tr(ρ²)
    pub fn purity(&self) -> f64 {
        (self.rho * self.rho).trace().re
    }

    /// (⟨σx⟩, ⟨σy⟩, ⟨σz⟩)
    pub fn bloch_vector(&self) -> [f64; 3] {
        let off = self.rho.get(1, 0);
        [
            2.0 * off.re,
            2.0 * off.im,
            self.rho.get(0, 0).re - self.rho.get(1, 1).re,
        ]
    }

    /// Diagonal populations (ρ₀₀, ρ₁₁).
    pub fn populations(&self) -> [f64; 2] {
        [self.rho.get(0, 0).re, self.rho.get(1, 1).re]
    }

    // Exact Hermitian projection absorbs rounding from repeated products.
    fn from_product(rho: ComplexMatrix2) -> Self {
        Self {
            rho: rho.hermitian_part(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gate {
    Rx,
    Ry,
    Rz,
    H,
    I,
}

impl Gate {
    /// Index order used by the discrete action space.
    pub const ALL: [Gate; 5] = [Gate::Rx, Gate::Ry, Gate::Rz, Gate::H, Gate::I];

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::domain(format!("gate index {index} not in 0..5")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateAction {
    pub gate: Gate,
    /// Radians; ignored for `H` and `I`.
    pub angle: f64,
}

impl GateAction {
    pub fn new(gate: Gate, angle: f64) -> Self {
        Self { gate, angle }
    }
}

/// Rotation exp(−iθσ/2) = cos(θ/2)·I − i·sin(θ/2)·σ.
fn rotation(sigma: ComplexMatrix2, angle: f64) -> ComplexMatrix2 {
    let (s, c) = (0.5 * angle).sin_cos();
    ComplexMatrix2::identity().scale(c.into()) + sigma.scale(Complex64::new(0.0, -s))
}

pub fn gate_matrix(action: GateAction) -> ComplexMatrix2 {
    match action.gate {
        Gate::Rx => rotation(ComplexMatrix2::pauli_x(), action.angle),
        Gate::Ry => rotation(ComplexMatrix2::pauli_y(), action.angle),
        Gate::Rz => rotation(ComplexMatrix2::pauli_z(), action.angle),
        Gate::H => ComplexMatrix2::hadamard(),
        Gate::I => ComplexMatrix2::identity(),
    }
}

/// U ρ U†
pub fn apply_gate(state: &QubitState, action: GateAction) -> Result<QubitState> {
    if !action.angle.is_finite() {
        return Err(Error::domain("gate angle must be finite"));
    }
    state.validate()?;
    let u = gate_matrix(action);
    Ok(QubitState::from_product(state.rho.conjugate_by(&u)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Depolarizing,
    AmplitudeDamping,
    Dephasing,
}

impl std::str::FromStr for ChannelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "depolarizing" => Ok(Self::Depolarizing),
            "amplitude_damping" => Ok(Self::AmplitudeDamping),
            "dephasing" => Ok(Self::Dephasing),
            other => Err(Error::domain(format!("unknown channel kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct KrausChannel {
    kind: ChannelKind,
    rate: f64,
    ops: Vec<ComplexMatrix2>,
}

impl KrausChannel {
    pub fn kind(&self) -> ChannelKind {
        self.kind
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn ops(&self) -> &[ComplexMatrix2] {
        &self.ops
    }

    /// max |Σ K†K − I|
    pub fn completeness_error(&self) -> f64 {
        let sum = self
            .ops
            .iter()
            .fold(ComplexMatrix2::zero(), |acc, k| acc + k.adjoint() * *k);
        sum.max_abs_diff(&ComplexMatrix2::identity())
    }
}

pub fn make_channel(kind: ChannelKind, rate: f64) -> Result<KrausChannel> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::domain(format!("channel rate {rate} outside [0, 1]")));
    }
    let id = ComplexMatrix2::identity();
    let ops = match kind {
        ChannelKind::Depolarizing => {
            let s0 = (1.0 - 0.75 * rate).sqrt();
            let s = (0.25 * rate).sqrt();
            vec![
                id.scale(s0.into()),
                ComplexMatrix2::pauli_x().scale(s.into()),
                ComplexMatrix2::pauli_y().scale(s.into()),
                ComplexMatrix2::pauli_z().scale(s.into()),
            ]
        }
        ChannelKind::AmplitudeDamping => vec![
            ComplexMatrix2::from_real(1.0, 0.0, 0.0, (1.0 - rate).sqrt()),
            ComplexMatrix2::from_real(0.0, rate.sqrt(), 0.0, 0.0),
        ],
        ChannelKind::Dephasing => vec![
            id.scale((1.0 - rate).sqrt().into()),
            ComplexMatrix2::pauli_z().scale(rate.sqrt().into()),
        ],
    };
    Ok(KrausChannel { kind, rate, ops })
}

/// ρ ↦ Σ_k K_k ρ K_k†
pub fn apply_channel(state: &QubitState, channel: &KrausChannel) -> Result<QubitState> {
    state.validate()?;
    let out = channel
        .ops
        .iter()
        .fold(ComplexMatrix2::zero(), |acc, k| acc + state.rho.conjugate_by(k));
    Ok(QubitState::from_product(out))
}

/// Ordered composition of Kraus channels applied after every gate.
#[derive(Clone, Debug)]
pub struct NoiseModel {
    channels: Vec<KrausChannel>,
}

impl NoiseModel {
    /// Depolarizing → amplitude damping → dephasing, all at `level`.
    pub fn uniform(level: f64) -> Result<Self> {
        Self::with_order(
            level,
            &[
                ChannelKind::Depolarizing,
                ChannelKind::AmplitudeDamping,
                ChannelKind::Dephasing,
            ],
        )
    }

    pub fn with_order(level: f64, order: &[ChannelKind]) -> Result<Self> {
        let channels = order
            .iter()
            .map(|&kind| make_channel(kind, level))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { channels })
    }

    pub fn channels(&self) -> &[KrausChannel] {
        &self.channels
    }

    pub fn apply(&self, state: &QubitState) -> Result<QubitState> {
        self.channels
            .iter()
            .try_fold(*state, |s, ch| apply_channel(&s, ch))
    }
}

/// Projective computational-basis measurement. Returns the outcome and the
/// collapsed projector |outcome⟩⟨outcome|.
pub fn measure_collapse<R: Rng + ?Sized>(state: &QubitState, rng: &mut R) -> (u8, QubitState) {
    let p1 = state.rho.get(1, 1).re.clamp(0.0, 1.0);
    if rng.random::<f64>() < p1 {
        (1, QubitState::excited())
    } else {
        (0, QubitState::ground())
    }
}

/// ⟨1|ρ|1⟩
pub fn excited_population(state: &QubitState) -> f64 {
    state.rho.get(1, 1).re.clamp(0.0, 1.0)
}

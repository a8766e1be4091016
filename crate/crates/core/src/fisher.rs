//! Information geometry: classical Fisher information, quantum Fisher
//! information for pure states (Fubini–Study form) and mixed qubit states
//! (symmetric logarithmic derivative form), block-diagonal approximations,
//! and Tikhonov-regularized preconditioned solves.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::{hermitian_eigenvalues, ComplexMatrix2, QubitState};

/// Symmetry tolerance accepted on construction and before solving.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Pairs of eigenvalues with λ_k + λ_l below this are dropped from the SLD sum.
pub const DEFAULT_EIG_CUTOFF: f64 = 1e-10;
/// Dimension up to which `SolveMethod::Auto` factorizes densely.
pub const DENSE_SOLVE_MAX_DIM: usize = 1024;
pub const CG_RELATIVE_TOL: f64 = 1e-8;
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Dense real symmetric d×d matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FisherMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl FisherMatrix {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::Dimension {
                expected: dim * dim,
                got: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("matrix has non-finite entries"));
        }
        let m = Self { dim, data };
        let asym = m.asymmetry();
        if asym > SYMMETRY_TOL {
            return Err(Error::domain(format!("matrix not symmetric (deviation {asym:e})")));
        }
        Ok(m)
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, s: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = s;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn asymmetry(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in (i + 1)..d {
                worst = worst.max((self.data[i * d + j] - self.data[j * d + i]).abs());
            }
        }
        worst
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        self.data
            .chunks_exact(self.dim)
            .map(|row| dot(row, x))
            .collect()
    }

    pub fn max_abs_diff(&self, other: &FisherMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let m = DMatrix::from_row_slice(self.dim, self.dim, &self.data);
        let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    fn symmetrized(&self) -> Self {
        let d = self.dim;
        let mut out = self.clone();
        for i in 0..d {
            for j in (i + 1)..d {
                let avg = 0.5 * (self.data[i * d + j] + self.data[j * d + i]);
                out.data[i * d + j] = avg;
                out.data[j * d + i] = avg;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

/// Ordered partition of [0, d) into named contiguous blocks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    blocks: Vec<Block>,
}

impl BlockLayout {
    pub fn new(blocks: Vec<Block>) -> Result<Self> {
        let mut sorted: Vec<&Block> = blocks.iter().collect();
        sorted.sort_by_key(|b| b.start);
        let mut next = 0;
        for b in sorted {
            if b.start != next || b.len == 0 {
                return Err(Error::domain(format!(
                    "block {:?} breaks the partition at index {next}",
                    b.name
                )));
            }
            next += b.len;
        }
        Ok(Self { blocks })
    }

    pub fn single(dim: usize) -> Self {
        Self {
            blocks: vec![Block {
                name: "all".into(),
                start: 0,
                len: dim,
            }],
        }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.len).sum()
    }
}

/// A value and its partial derivatives with respect to each parameter.
#[derive(Clone, Debug)]
pub struct TangentBundle<T> {
    pub value: T,
    pub partials: Vec<T>,
}

pub type PureTangent = TangentBundle<Vec<Complex64>>;
pub type MixedTangent = TangentBundle<ComplexMatrix2>;

/// Central finite-difference tangent of a parameterized state vector.
pub fn pure_tangent_fd<F>(state: F, theta: &[f64], step: f64) -> PureTangent
where
    F: Fn(&[f64]) -> Vec<Complex64>,
{
    let value = state(theta);
    let partials = (0..theta.len())
        .map(|i| {
            let mut plus = theta.to_vec();
            let mut minus = theta.to_vec();
            plus[i] += step;
            minus[i] -= step;
            let (a, b) = (state(&plus), state(&minus));
            a.iter()
                .zip(&b)
                .map(|(x, y)| (x - y) / (2.0 * step))
                .collect()
        })
        .collect();
    TangentBundle { value, partials }
}

/// Central finite-difference tangent of a parameterized density matrix.
pub fn mixed_tangent_fd<F>(state: F, theta: &[f64], step: f64) -> MixedTangent
where
    F: Fn(&[f64]) -> ComplexMatrix2,
{
    let value = state(theta);
    let partials = (0..theta.len())
        .map(|i| {
            let mut plus = theta.to_vec();
            let mut minus = theta.to_vec();
            plus[i] += step;
            minus[i] -= step;
            (state(&plus) - state(&minus)).scale((0.5 / step).into())
        })
        .collect();
    TangentBundle { value, partials }
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Fubini–Study metric 4·Re[⟨∂ᵢψ|∂ⱼψ⟩ − ⟨∂ᵢψ|ψ⟩⟨ψ|∂ⱼψ⟩].
pub fn qfi_pure(bundle: &PureTangent) -> Result<FisherMatrix> {
    let psi = &bundle.value;
    let norm = inner(psi, psi).re.sqrt();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::domain(format!("state vector norm {norm} is not 1")));
    }
    for p in &bundle.partials {
        if p.len() != psi.len() {
            return Err(Error::Dimension {
                expected: psi.len(),
                got: p.len(),
            });
        }
    }
    let d = bundle.partials.len();
    let overlaps: Vec<Complex64> = bundle.partials.iter().map(|p| inner(p, psi)).collect();
    let mut data = vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            let g = inner(&bundle.partials[i], &bundle.partials[j]) - overlaps[i] * overlaps[j].conj();
            let v = 4.0 * g.re;
            data[i * d + j] = v;
            data[j * d + i] = v;
        }
    }
    FisherMatrix::new(d, data)
}

/// Orthonormal eigenvectors (columns) of a Hermitian 2×2 matrix matching
/// the ascending eigenvalues.
fn hermitian_eigenvectors(m: &ComplexMatrix2, eig: [f64; 2]) -> ComplexMatrix2 {
    let a = m.get(0, 0).re;
    let d = m.get(1, 1).re;
    let b = m.get(0, 1);
    let scale = 1.0 + a.abs().max(d.abs());
    if b.norm() <= 1e-15 * scale {
        // already diagonal: order columns to match ascending eigenvalues
        return if a <= d {
            ComplexMatrix2::identity()
        } else {
            ComplexMatrix2::pauli_x()
        };
    }
    let vec_for = |lambda: f64| -> [Complex64; 2] {
        let v1 = [b, Complex64::new(lambda - a, 0.0)];
        let v2 = [Complex64::new(lambda - d, 0.0), b.conj()];
        let n1 = (v1[0].norm_sqr() + v1[1].norm_sqr()).sqrt();
        let n2 = (v2[0].norm_sqr() + v2[1].norm_sqr()).sqrt();
        if n1 >= n2 {
            [v1[0] / n1, v1[1] / n1]
        } else {
            [v2[0] / n2, v2[1] / n2]
        }
    };
    let u = vec_for(eig[0]);
    let v = vec_for(eig[1]);
    ComplexMatrix2::new(u[0], v[0], u[1], v[1])
}

/// Mixed-state QFI via the SLD spectral formula
/// Σ_{k,l} 2·Re[(∂ᵢρ)_{kl}(∂ⱼρ)_{lk}]/(λ_k + λ_l) in the eigenbasis of ρ.
pub fn qfi_sld(bundle: &MixedTangent, eig_cutoff: f64) -> Result<FisherMatrix> {
    let rho = &bundle.value;
    QubitState::new(*rho).map_err(|e| Error::domain(format!("ρ is not a density matrix: {e}")))?;
    for (i, p) in bundle.partials.iter().enumerate() {
        if p.max_abs_diff(&p.adjoint()) > 1e-10 || p.trace().norm() > 1e-10 {
            return Err(Error::domain(format!(
                "partial {i} is not Hermitian and traceless"
            )));
        }
    }
    let eig = hermitian_eigenvalues(rho);
    let basis = hermitian_eigenvectors(rho, eig);
    let rotated: Vec<ComplexMatrix2> = bundle
        .partials
        .iter()
        .map(|p| basis.adjoint() * *p * basis)
        .collect();
    let d = rotated.len();
    let mut data = vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            let mut acc = 0.0;
            for k in 0..2 {
                for l in 0..2 {
                    let denom = eig[k] + eig[l];
                    if denom > eig_cutoff {
                        acc += 2.0 * (rotated[i].get(k, l) * rotated[j].get(l, k)).re / denom;
                    }
                }
            }
            data[i * d + j] = acc;
            data[j * d + i] = acc;
        }
    }
    FisherMatrix::new(d, data)
}

/// Empirical E[g gᵀ] over score samples.
pub fn classical_fim(samples: &[Vec<f64>]) -> Result<FisherMatrix> {
    let first = samples
        .first()
        .ok_or_else(|| Error::domain("classical_fim needs at least one sample"))?;
    let d = first.len();
    let mut data = vec![0.0; d * d];
    for g in samples {
        if g.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: g.len(),
            });
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("non-finite score sample"));
        }
        for i in 0..d {
            if g[i] == 0.0 {
                continue;
            }
            let row = &mut data[i * d..(i + 1) * d];
            for (dst, gj) in row.iter_mut().zip(g) {
                *dst += g[i] * gj;
            }
        }
    }
    let inv_n = 1.0 / samples.len() as f64;
    data.iter_mut().for_each(|x| *x *= inv_n);
    FisherMatrix::new(d, data)
}

/// Square-root embedding p ↦ (√p_a). Under it the pure-state QFI of the
/// embedded family equals the classical Fisher information of p.
pub fn amplitude_embed(probs: &[f64]) -> Result<Vec<Complex64>> {
    if let Some(p) = probs.iter().find(|p| !(**p >= 0.0)) {
        return Err(Error::domain(format!("negative or NaN probability {p}")));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::domain(format!("probabilities sum to {total}")));
    }
    Ok(probs.iter().map(|p| Complex64::new(p.sqrt(), 0.0)).collect())
}

pub fn block_diagonal_of(m: &FisherMatrix, layout: &BlockLayout) -> Result<FisherMatrix> {
    if layout.dim() != m.dim {
        return Err(Error::Dimension {
            expected: m.dim,
            got: layout.dim(),
        });
    }
    let d = m.dim;
    let mut out = FisherMatrix::zeros(d);
    for b in layout.blocks() {
        for i in b.start..b.start + b.len {
            let row = i * d;
            out.data[row + b.start..row + b.start + b.len]
                .copy_from_slice(&m.data[row + b.start..row + b.start + b.len]);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Dense,
    ConjugateGradient,
    /// Dense up to `DENSE_SOLVE_MAX_DIM`, conjugate gradient above.
    Auto,
}

/// Solve (M + ξI)x = g.
pub fn precondition_solve(
    m: &FisherMatrix,
    xi: f64,
    g: &[f64],
    method: SolveMethod,
) -> Result<Vec<f64>> {
    if !(xi > 0.0 && xi.is_finite()) {
        return Err(Error::domain(format!("Tikhonov strength must be positive, got {xi}")));
    }
    if g.len() != m.dim {
        return Err(Error::Dimension {
            expected: m.dim,
            got: g.len(),
        });
    }
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("gradient has non-finite entries"));
    }
    let asym = m.asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(Error::domain(format!("matrix not symmetric (deviation {asym:e})")));
    }
    let mut reg = m.symmetrized();
    for i in 0..reg.dim {
        reg.data[i * reg.dim + i] += xi;
    }
    let method = match method {
        SolveMethod::Auto if m.dim <= DENSE_SOLVE_MAX_DIM => SolveMethod::Dense,
        SolveMethod::Auto => SolveMethod::ConjugateGradient,
        other => other,
    };
    match method {
        SolveMethod::Dense => cholesky_solve(&reg, g),
        _ => conjugate_gradient(|v| reg.matvec(v), g, CG_RELATIVE_TOL, 10 * m.dim.max(1)),
    }
}

/// In-place Cholesky factorization A = LLᵀ followed by two triangular solves.
fn cholesky_solve(a: &FisherMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.dim;
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s = a.data[i * n + j] - dot(&l[i * n..i * n + j], &l[j * n..j * n + j]);
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::domain(format!(
                        "matrix is not positive definite (pivot {s:e} at {i})"
                    )));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    // forward: L y = b
    let mut y = b.to_vec();
    for i in 0..n {
        let row = &l[i * n..i * n + i];
        y[i] = (y[i] - dot(row, &y[..i])) / l[i * n + i];
    }
    // backward: Lᵀ x = y
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    Ok(y)
}

/// Conjugate gradient using only matrix-vector products.
pub fn conjugate_gradient<F>(apply: F, b: &[f64], rel_tol: f64, max_iter: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let b_norm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    for _ in 0..max_iter {
        if rs.sqrt() <= rel_tol * b_norm {
            return Ok(x);
        }
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let step = rs / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let rs_next = dot(&r, &r);
        let beta = rs_next / rs;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_next;
    }
    let residual = rs.sqrt() / b_norm;
    if residual <= rel_tol {
        Ok(x)
    } else {
        Err(Error::NonConvergence {
            iterations: max_iter,
            residual,
        })
    }
}

/// x = F̂⁺ g for the empirical FIM F̂ = (1/T) Σ sₜsₜᵀ of the score samples,
/// computed through the T×T Gram matrix K = SᵀS:
/// pinv(SSᵀ) = S·(K⁺)²·Sᵀ. No Tikhonov term.
pub fn pseudo_inverse_solve(samples: &[Vec<f64>], g: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::domain("pseudo-inverse needs at least one sample"));
    }
    let t = samples.len();
    let d = g.len();
    if let Some(s) = samples.iter().find(|s| s.len() != d) {
        return Err(Error::Dimension {
            expected: d,
            got: s.len(),
        });
    }
    let mut gram = DMatrix::<f64>::zeros(t, t);
    for i in 0..t {
        for j in i..t {
            let v = dot(&samples[i], &samples[j]);
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(gram);
    let largest = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let cutoff = largest * 1e-10;
    // c = (K⁺)² Sᵀ g
    let stg: Vec<f64> = samples.iter().map(|s| dot(s, g)).collect();
    let mut coeff = vec![0.0; t];
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda <= cutoff {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        let proj: f64 = (0..t).map(|i| v[i] * stg[i]).sum::<f64>() / (lambda * lambda);
        for i in 0..t {
            coeff[i] += proj * v[i];
        }
    }
    let mut x = vec![0.0; d];
    for (s, c) in samples.iter().zip(&coeff) {
        for (xi, si) in x.iter_mut().zip(s) {
            *xi += c * si;
        }
    }
    // F̂ = SSᵀ/T so F̂⁺ = T·pinv(SSᵀ)
    x.iter_mut().for_each(|v| *v *= t as f64);
    Ok(x)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

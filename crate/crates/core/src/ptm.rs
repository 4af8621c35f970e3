//! Pauli transfer matrix algebra for single-qubit maps.
//!
//! Index 0 of every row and column is the identity Pauli, indices 1..=3 are
//! X, Y, Z. A trace-preserving map has the block form
//!
//! ```text
//! [ 1  0ᵀ ]
//! [ k  E  ]
//! ```
//!
//! with `E` the unital block and `k` the non-unital vector.

use std::fmt;

use nalgebra::{Matrix2, Matrix3, Matrix4, Vector3, SVD};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub type Unitary = Matrix2<C64>;

/// The 3×3 unital block `E`.
pub type UnitalBlock = Matrix3<f64>;

/// The non-unital vector `k`.
pub type NonUnitalVector = Vector3<f64>;

const UNITARITY_TOL: f64 = 1e-10;

pub fn pauli(index: usize) -> Matrix2<C64> {
    let o = C64::new(0.0, 0.0);
    let l = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    match index {
        0 => Matrix2::new(l, o, o, l),
        1 => Matrix2::new(o, l, l, o),
        2 => Matrix2::new(o, -i, i, o),
        3 => Matrix2::new(l, o, o, -l),
        _ => panic!("pauli index {index} out of range"),
    }
}

/// `exp(-i θ n̂·σ)` for a unit axis `n̂`.
pub fn rotation_unitary(axis: [f64; 3], theta: f64) -> Unitary {
    let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let mut gen = Matrix2::<C64>::zeros();
    for (a, &c) in axis.iter().enumerate() {
        gen += pauli(a + 1) * C64::new(c / norm, 0.0);
    }
    pauli(0) * C64::new(theta.cos(), 0.0) - gen * C64::new(0.0, theta.sin())
}

/// Pauli transfer matrix of a trace-preserving single-qubit map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ptm(Matrix4<f64>);

impl Ptm {
    pub fn identity() -> Self {
        Ptm(Matrix4::identity())
    }

    /// Wraps a raw matrix. No physicality checks are made: estimates coming
    /// out of a noisy measurement are allowed to be unphysical.
    pub fn from_matrix(m: Matrix4<f64>) -> Self {
        Ptm(m)
    }

    pub fn from_blocks(k: &NonUnitalVector, e: &UnitalBlock) -> Self {
        let mut m = Matrix4::zeros();
        m[(0, 0)] = 1.0;
        m.fixed_view_mut::<3, 1>(1, 0).copy_from(k);
        m.fixed_view_mut::<3, 3>(1, 1).copy_from(e);
        Ptm(m)
    }

    /// Row-major 16 reals.
    pub fn from_row_slice(v: &[f64]) -> Self {
        assert_eq!(v.len(), 16, "a PTM has 16 entries");
        Ptm(Matrix4::from_row_slice(v))
    }

    pub fn to_row_vec(&self) -> Vec<f64> {
        self.0.transpose().iter().copied().collect()
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn unital(&self) -> UnitalBlock {
        self.0.fixed_view::<3, 3>(1, 1).into_owned()
    }

    pub fn nonunital(&self) -> NonUnitalVector {
        self.0.fixed_view::<3, 1>(1, 0).into_owned()
    }

    /// True when row 0 is exactly `(1, 0, 0, 0)`.
    pub fn is_trace_preserving(&self) -> bool {
        self.0[(0, 0)] == 1.0 && (1..4).all(|c| self.0[(0, c)] == 0.0)
    }

    pub fn compose(&self, other: &Ptm) -> Ptm {
        Ptm(self.0 * other.0)
    }

    /// `self^n` by repeated squaring.
    pub fn power(&self, n: u64) -> Ptm {
        Ptm(matrix_power(&self.0, n))
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Similarity transform `T · self · T⁻¹`.
    pub fn conjugate(&self, t: &Matrix4<f64>, t_inv: &Matrix4<f64>) -> Ptm {
        Ptm(t * self.0 * t_inv)
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.0.amax()
    }
}

impl fmt::Display for Ptm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.to_row_vec();
        let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        f.write_str(&parts.join(" "))
    }
}

/// Product of a gate sequence, leftmost factor first.
pub fn product<'a>(maps: impl IntoIterator<Item = &'a Ptm>) -> Ptm {
    maps.into_iter().fold(Ptm::identity(), |acc, m| acc.compose(m))
}

pub fn matrix_power<const N: usize>(
    m: &nalgebra::SMatrix<f64, N, N>,
    mut n: u64,
) -> nalgebra::SMatrix<f64, N, N> {
    let mut result = nalgebra::SMatrix::<f64, N, N>::identity();
    let mut base = *m;
    while n > 0 {
        if n & 1 == 1 {
            result = result * base;
        }
        n >>= 1;
        if n > 0 {
            base = base * base;
        }
    }
    result
}

pub fn ptm_from_unitary(u: &Unitary) -> Result<Ptm> {
    let dev = (u.adjoint() * u - Matrix2::identity()).norm();
    if !(dev <= UNITARITY_TOL) {
        return Err(Error::NotUnitary(dev));
    }
    let ud = u.adjoint();
    let mut m = Matrix4::zeros();
    for tau in 0..4 {
        let image = u * pauli(tau) * ud;
        for sigma in 0..4 {
            m[(sigma, tau)] = 0.5 * (pauli(sigma) * image).trace().re;
        }
    }
    // Exact block structure for unitary conjugation.
    m[(0, 0)] = 1.0;
    for c in 1..4 {
        m[(0, c)] = 0.0;
        m[(c, 0)] = 0.0;
    }
    Ok(Ptm(m))
}

/// Smallest `m ≤ cap` with `M^m = I` (entrywise within 1e-9).
pub fn period(ptm: &Ptm, cap: u64) -> Option<u64> {
    let mut acc = *ptm.matrix();
    for m in 1..=cap {
        if (acc - Matrix4::identity()).amax() < 1e-9 {
            return Some(m);
        }
        acc *= ptm.matrix();
    }
    None
}

/// Three complex eigenvalues of a unital block, in a canonical order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenTriple(pub [C64; 3]);

impl EigenTriple {
    pub fn new(mut vals: [C64; 3]) -> Self {
        sort_eigenvalues(&mut vals);
        EigenTriple(vals)
    }

    pub fn sum(&self) -> C64 {
        self.0.iter().sum()
    }

    pub fn product(&self) -> C64 {
        self.0.iter().product()
    }

    pub fn powi(&self, n: u64) -> [C64; 3] {
        self.0.map(|z| z.powu(n as u32))
    }

    pub fn max_modulus(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Half the matched distance between the multiset and its complex conjugate.
    pub fn conjugation_residual(&self) -> f64 {
        self.distance(&EigenTriple(self.0.map(|z| z.conj()))) / 2.0
    }

    /// Projects onto the nearest conjugation-closed triple: either three real
    /// values or one real value and a conjugate pair.
    pub fn symmetrized(&self) -> Self {
        let all_real = self.0.map(|z| C64::new(z.re, 0.0));
        let (real_idx, a, b) = self.split_pair();
        let mut v = self.0;
        v[real_idx] = C64::new(v[real_idx].re, 0.0);
        let mid = (v[a] + v[b].conj()) * 0.5;
        v[a] = mid;
        v[b] = mid.conj();
        let paired = EigenTriple::new(v);
        let all_real = EigenTriple::new(all_real);
        if all_real.distance(self) <= paired.distance(self) {
            all_real
        } else {
            paired
        }
    }

    /// The entry closest to the real axis, plus the remaining two, ordered so
    /// that the first has the larger imaginary part.
    fn split_pair(&self) -> (usize, usize, usize) {
        let real_idx = (0..3)
            .min_by(|&i, &j| self.0[i].im.abs().total_cmp(&self.0[j].im.abs()))
            .unwrap();
        let mut rest: Vec<usize> = (0..3).filter(|&i| i != real_idx).collect();
        rest.sort_by(|&i, &j| self.0[j].im.total_cmp(&self.0[i].im));
        (real_idx, rest[0], rest[1])
    }

    /// Max elementwise distance between two triples after optimal matching.
    pub fn distance(&self, other: &EigenTriple) -> f64 {
        PERMUTATIONS
            .iter()
            .map(|p| {
                (0..3)
                    .map(|i| (self.0[i] - other.0[p[i]]).norm())
                    .fold(0.0, f64::max)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

pub(crate) const PERMUTATIONS: [[usize; 3]; 6] =
    [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// Descending real part, then descending imaginary part.
pub fn sort_eigenvalues(vals: &mut [C64]) {
    vals.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
}

pub fn unital_eigenvalues(e: &UnitalBlock) -> EigenTriple {
    EigenTriple::new(eigenvalues3(e))
}

/// Eigenvalues of a 3×3 matrix; NaN when the input is not finite or the
/// Schur iteration fails to converge.
pub fn eigenvalues3(m: &Matrix3<f64>) -> [C64; 3] {
    let nan = [C64::new(f64::NAN, f64::NAN); 3];
    if m.iter().any(|v| !v.is_finite()) {
        return nan;
    }
    match nalgebra::Schur::try_new(*m, f64::EPSILON, 10_000) {
        Some(schur) => {
            let ev = schur.complex_eigenvalues();
            [ev[0], ev[1], ev[2]]
        }
        None => nan,
    }
}

/// Slack in the complete-positivity bound on `‖k‖²`; non-negative for CP maps.
pub fn cp_bound_margin(e: &UnitalBlock, k: &NonUnitalVector) -> f64 {
    let l = unital_eigenvalues(e).0;
    let prod = l[0] * l[1] * l[2];
    debug_assert!(
        prod.im.abs() <= 1e-10 * prod.norm().max(1.0),
        "eigenvalue product has imaginary residue {}",
        prod.im
    );
    let bound = 1.0 - l.iter().map(|z| z.norm_sqr()).sum::<f64>() + 2.0 * prod.re;
    bound - k.norm_squared()
}

/// Choi operator `(1/4) Σ M_{στ} τᵀ ⊗ σ` (unit trace).
pub fn choi_matrix(a: &Ptm) -> Matrix4<C64> {
    let mut j = Matrix4::<C64>::zeros();
    for sigma in 0..4 {
        for tau in 0..4 {
            let w = a.matrix()[(sigma, tau)];
            if w != 0.0 {
                j += pauli(tau).transpose().kronecker(&pauli(sigma)) * C64::new(0.25 * w, 0.0);
            }
        }
    }
    j
}

/// Minimum eigenvalue of the Choi operator; non-negative iff the map is CP.
pub fn choi_psd_check(a: &Ptm) -> f64 {
    let j = choi_matrix(a);
    let herm = (j + j.adjoint()) * C64::new(0.5, 0.0);
    herm.symmetric_eigenvalues().min()
}

/// Entanglement fidelity `Tr(Mᵢᵀ M) / 4`.
pub fn process_fidelity(noisy: &Ptm, ideal: &Ptm) -> f64 {
    (ideal.matrix().transpose() * noisy.matrix()).trace() / 4.0
}

/// `1 − F` with `F` the average gate fidelity `(2 F_pro + 1) / 3`.
pub fn error_rate(noisy: &Ptm, ideal: &Ptm) -> f64 {
    let f_pro = process_fidelity(noisy, ideal);
    let f = (2.0 * f_pro + 1.0) / 3.0;
    1.0 - f
}

/// Spectral norm of the difference.
pub fn spectral_distance(a: &Ptm, b: &Ptm) -> f64 {
    spectral_norm4(&(a.matrix() - b.matrix()))
}

pub fn spectral_norm4(m: &Matrix4<f64>) -> f64 {
    SVD::new(*m, false, false).singular_values.max()
}

/// A gate of the set: ideal unitary, its PTM, the hidden noisy PTM.
#[derive(Clone, Debug)]
pub struct GateRecord {
    pub id: usize,
    pub ideal_unitary: Unitary,
    pub ideal_ptm: Ptm,
    pub noisy_ptm: Ptm,
    pub error_rate: f64,
    pub period: u64,
}

impl GateRecord {
    /// Builds a noiseless record; the period is searched up to 1024.
    pub fn ideal(id: usize, u: Unitary) -> Result<Self> {
        let ideal_ptm = ptm_from_unitary(&u)?;
        let period = period(&ideal_ptm, 1024)
            .ok_or_else(|| Error::Invalid(format!("gate {id} has no period ≤ 1024")))?;
        Ok(GateRecord {
            id,
            ideal_unitary: u,
            ideal_ptm,
            noisy_ptm: ideal_ptm,
            error_rate: 0.0,
            period,
        })
    }

    pub fn with_noisy(mut self, noisy: Ptm) -> Self {
        self.error_rate = error_rate(&noisy, &self.ideal_ptm);
        self.noisy_ptm = noisy;
        self
    }
}

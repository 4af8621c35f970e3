//! Similarity transforms between gate-set frames, and the benchmark distances.
//!
//! A frame change `T = [[1, 0ᵀ], [a, B]]` acts on a trace-preserving map as
//! `T M T⁻¹ = [[1, 0ᵀ], [a + B k − B E B⁻¹ a, B E B⁻¹]]`.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};
use crate::lsq::{numerical_rank, pinv_solve, LinearSystem, Truncation};
use crate::ptm::{spectral_distance, Ptm, UnitalBlock};

/// Right-hand side of the linearized similarity equations `δB·X − X·δB = ·`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RhsForm {
    /// `Y − X`, the first-order expansion of `(I + δB) X (I + δB)⁻¹ = Y`.
    #[default]
    Difference,
    /// `Y` alone, kept for comparison; single step only.
    StrictPaper,
}

#[derive(Clone, Copy, Debug)]
pub struct SimilarityOptions {
    pub rhs: RhsForm,
    /// 1 gives the plain first-order solve.
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for SimilarityOptions {
    fn default() -> Self {
        SimilarityOptions { rhs: RhsForm::Difference, max_iterations: 50, tolerance: 1e-13 }
    }
}

impl SimilarityOptions {
    pub fn first_order() -> Self {
        SimilarityOptions { max_iterations: 1, ..Default::default() }
    }
}

#[derive(Clone, Debug)]
pub struct SimilarityFit {
    /// `B` with `B·X_j·B⁻¹ ≈ Y_j`.
    pub b: Matrix3<f64>,
    /// Singular values of the first linear system, descending.
    pub singular_values: Vec<f64>,
    pub rank: usize,
    pub iterations: usize,
    /// `(Σ_j ‖B X_j B⁻¹ − Y_j‖_F²)^{1/2}` at the returned `B`.
    pub residual: f64,
}

/// The 9·J × 9 matrix of `δB ↦ (δB·X_j − X_j·δB)_j`, row-major in both.
pub fn commutator_matrix(x: &[UnitalBlock]) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(9 * x.len(), 9);
    for (j, xj) in x.iter().enumerate() {
        for idx in 0..9 {
            let mut db = Matrix3::zeros();
            db[(idx / 3, idx % 3)] = 1.0;
            let img = db * xj - xj * db;
            for r in 0..9 {
                a[(9 * j + r, idx)] = img[(r / 3, r % 3)];
            }
        }
    }
    a
}

fn conj_residual(b: &Matrix3<f64>, b_inv: &Matrix3<f64>, x: &[UnitalBlock], y: &[UnitalBlock]) -> f64 {
    x.iter().zip(y).map(|(xj, yj)| (b * xj * b_inv - yj).norm_squared()).sum::<f64>().sqrt()
}

/// Finds `B` close to the identity with `B·X_j·B⁻¹ ≈ Y_j` by repeated
/// first-order solves, each re-linearized at the current frame.
pub fn similarity_fit(x: &[UnitalBlock], y: &[UnitalBlock], opts: &SimilarityOptions) -> Result<SimilarityFit> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Invalid(format!("{} source and {} target blocks", x.len(), y.len())));
    }
    let labels: Vec<String> = (0..9).map(|i| format!("dB_{}{}", i / 3 + 1, i % 3 + 1)).collect();
    let iterations = if opts.rhs == RhsForm::StrictPaper { 1 } else { opts.max_iterations.max(1) };

    let mut b = Matrix3::identity();
    let mut b_inv = Matrix3::identity();
    let mut best = (b, conj_residual(&b, &b_inv, x, y));
    let mut first_sv = Vec::new();
    let mut rank = 0;
    let mut done = 0;
    for it in 0..iterations {
        let cur: Vec<UnitalBlock> = x.iter().map(|xj| b * xj * b_inv).collect();
        let rhs = DVector::from_iterator(
            9 * x.len(),
            cur.iter().zip(y).flat_map(|(c, yj)| {
                let r = match opts.rhs {
                    RhsForm::Difference => yj - c,
                    RhsForm::StrictPaper => *yj,
                };
                r.transpose().iter().copied().collect::<Vec<_>>()
            }),
        );
        let sys = LinearSystem::new(commutator_matrix(&cur), rhs, labels.clone())?;
        let sol = pinv_solve(&sys, Truncation::Relative(1e-6))?;
        if it == 0 {
            rank = numerical_rank(&sol.singular_values, 1e-6);
            first_sv = sol.singular_values.clone();
            if rank < 8 {
                return Err(Error::Rank { expected: 8, found: rank, context: "similarity system".into() });
            }
        }
        let db = Matrix3::from_row_slice(sol.x.as_slice());
        let next = (Matrix3::identity() + db) * b;
        let next_inv = next
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("similarity update is singular".into()))?;
        done = it + 1;
        let res = conj_residual(&next, &next_inv, x, y);
        if opts.rhs == RhsForm::Difference && res > best.1 && it > 0 {
            break;
        }
        b = next;
        b_inv = next_inv;
        if res <= best.1 || opts.rhs == RhsForm::StrictPaper || it == 0 {
            best = (b, res);
        }
        if db.norm() < opts.tolerance {
            break;
        }
    }
    Ok(SimilarityFit { b: best.0, singular_values: first_sv, rank, iterations: done, residual: best.1 })
}

/// `T = [[1, 0ᵀ], [a, B]]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaugeTransform {
    pub a: Vector3<f64>,
    pub b: Matrix3<f64>,
}

impl GaugeTransform {
    pub fn identity() -> Self {
        GaugeTransform { a: Vector3::zeros(), b: Matrix3::identity() }
    }

    /// Reads `a` and `B` from a matrix whose first row is `(1, 0, 0, 0)`.
    pub fn from_matrix(t: &Matrix4<f64>) -> Self {
        GaugeTransform { a: t.fixed_view::<3, 1>(1, 0).into_owned(), b: t.fixed_view::<3, 3>(1, 1).into_owned() }
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut t = Matrix4::identity();
        t.fixed_view_mut::<3, 1>(1, 0).copy_from(&self.a);
        t.fixed_view_mut::<3, 3>(1, 1).copy_from(&self.b);
        t
    }

    pub fn inverse_matrix(&self) -> Result<Matrix4<f64>> {
        let b_inv = self.b.try_inverse().ok_or_else(|| Error::Degenerate("gauge block B is singular".into()))?;
        let mut t = Matrix4::identity();
        t.fixed_view_mut::<3, 1>(1, 0).copy_from(&(-b_inv * self.a));
        t.fixed_view_mut::<3, 3>(1, 1).copy_from(&b_inv);
        Ok(t)
    }

    /// `T M T⁻¹`.
    pub fn apply(&self, m: &Ptm) -> Result<Ptm> {
        Ok(m.conjugate(&self.matrix(), &self.inverse_matrix()?))
    }

    /// `‖B − I‖_F`; the perturbative fit is questionable above 0.5.
    pub fn deviation(&self) -> f64 {
        (self.b - Matrix3::identity()).norm()
    }
}

#[derive(Clone, Debug)]
pub struct GaugeFit {
    pub transform: GaugeTransform,
    pub similarity: SimilarityFit,
    /// True when the fitted transform made things worse and the identity was kept.
    pub fell_back: bool,
    pub large_deviation: bool,
}

/// Transform `T` with `T M_jʳ T⁻¹ ≈ M_j`.
pub fn fit_gauge(reconstructed: &[Ptm], truth: &[Ptm], opts: &SimilarityOptions) -> Result<GaugeFit> {
    if reconstructed.len() != truth.len() {
        return Err(Error::Invalid(format!("{} reconstructed vs {} true maps", reconstructed.len(), truth.len())));
    }
    let er: Vec<UnitalBlock> = reconstructed.iter().map(|m| m.unital()).collect();
    let e: Vec<UnitalBlock> = truth.iter().map(|m| m.unital()).collect();
    let sim = similarity_fit(&er, &e, opts)?;
    let b = sim.b;
    let b_inv = b.try_inverse().ok_or_else(|| Error::Degenerate("fitted B is singular".into()))?;

    // (I − B Eʳ B⁻¹) a + c·B kʳ = k; the overall scale c of B is invisible to the unital blocks.
    let mut a_mat = DMatrix::zeros(3 * truth.len(), 4);
    let mut rhs = DVector::zeros(3 * truth.len());
    for (j, (mr, m)) in reconstructed.iter().zip(truth).enumerate() {
        let lhs = Matrix3::identity() - b * mr.unital() * b_inv;
        let bk = b * mr.nonunital();
        for row in 0..3 {
            for col in 0..3 {
                a_mat[(3 * j + row, col)] = lhs[(row, col)];
            }
            a_mat[(3 * j + row, 3)] = bk[row];
            rhs[3 * j + row] = m.nonunital()[row];
        }
    }
    let labels = vec!["a1".into(), "a2".into(), "a3".into(), "c".into()];
    let sol = pinv_solve(&LinearSystem::new(a_mat, rhs, labels)?, Truncation::default())?.x;
    // A vanishing kʳ leaves c undetermined; keep the similarity scale then.
    let c = if sol[3].is_finite() && sol[3].abs() > 1e-12 { sol[3] } else { 1.0 };
    let transform = GaugeTransform { a: Vector3::new(sol[0], sol[1], sol[2]), b: b * c };

    let before: f64 = reconstructed.iter().zip(truth).map(|(r, t)| spectral_distance(r, t)).sum();
    let after: f64 = reconstructed
        .iter()
        .zip(truth)
        .map(|(r, t)| transform.apply(r).map(|x| spectral_distance(&x, t)))
        .sum::<Result<f64>>()?;
    let fell_back = !(after <= before);
    let transform = if fell_back { GaugeTransform::identity() } else { transform };
    Ok(GaugeFit { large_deviation: transform.deviation() > 0.5, transform, similarity: sim, fell_back })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistanceRow {
    pub gate_id: usize,
    /// `‖M_j − M_jⁱ‖₂`.
    pub d: f64,
    /// `‖T M_jʳ T⁻¹ − M_j‖₂`.
    pub d_r: f64,
}

pub fn distances(reconstructed: &[Ptm], t: &GaugeTransform, truth: &[Ptm], ideal: &[Ptm]) -> Result<Vec<DistanceRow>> {
    reconstructed
        .iter()
        .zip(truth)
        .zip(ideal)
        .enumerate()
        .map(|(j, ((r, m), mi))| {
            Ok(DistanceRow { gate_id: j + 1, d: spectral_distance(m, mi), d_r: spectral_distance(&t.apply(r)?, m) })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub points: usize,
}

/// Least-squares line through `(log₁₀ D, log₁₀ Dʳ)`.
pub fn fit_scaling(rows: &[DistanceRow]) -> Result<ScalingFit> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.d > 0.0 && r.d_r > 0.0)
        .map(|r| (r.d.log10(), r.d_r.log10()))
        .collect();
    if pts.len() < 10 {
        return Err(Error::Invalid(format!("scaling fit needs at least 10 points, got {}", pts.len())));
    }
    let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.0), h.max(p.0)));
    if hi - lo < 2.0 {
        return Err(Error::Invalid(format!("scaling fit needs two decades in D, got {:.2}", hi - lo)));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    Ok(ScalingFit { slope, intercept: my - slope * mx, points: pts.len() })
}

/// Spearman rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

//! Second-stage reconstruction of the non-unital vectors.
//!
//! Repeating a double map `M_i M_j` n times multiplies its non-unital vector
//! by `E⁽ⁿ⁾ = Σ_{q<n} E^q`, whose largest singular value grows like `1/p`.
//! Projecting the measured `k⁽ⁿ⁾` on the top singular pair gives one well
//! amplified equation per pair.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::gauge::{similarity_fit, SimilarityFit, SimilarityOptions};
use crate::gateset::double_pairs;
use crate::lsq::{pinv_solve, LinearSystem, Solution, Truncation};
use crate::oracle::{Measurements, SequenceSpec};
use crate::ptm::{matrix_power, NonUnitalVector, Ptm, UnitalBlock};

/// Pairs `(i, j)`, `i < j`, with repetition `n = ⌊1/p_ij⌋`.
#[derive(Clone, Debug, PartialEq)]
pub struct DoubleMapPlan {
    pub pairs: Vec<(usize, usize)>,
    pub repetitions: Vec<u64>,
}

impl DoubleMapPlan {
    /// Sizes every pair with `p_ij = p_i + p_j`.
    pub fn from_hints(p_hints: &[f64]) -> Result<Self> {
        if let Some(p) = p_hints.iter().find(|p| !(**p > 0.0)) {
            return Err(Error::Invalid(format!("error-rate hint {p} must be positive")));
        }
        let pairs = double_pairs();
        if let Some(&(_, j)) = pairs.iter().find(|&&(_, j)| j > p_hints.len()) {
            return Err(Error::Invalid(format!("no error-rate hint for gate {j}")));
        }
        let repetitions = pairs
            .iter()
            .map(|&(i, j)| ((1.0 / (p_hints[i - 1] + p_hints[j - 1])).floor() as u64).max(1))
            .collect();
        Ok(DoubleMapPlan { pairs, repetitions })
    }

    pub fn sequences(&self) -> Vec<SequenceSpec> {
        self.pairs
            .iter()
            .zip(&self.repetitions)
            .map(|(&(i, j), &n)| SequenceSpec::new(vec![i, j], n))
            .collect()
    }
}

/// `Σ_{q=0}^{n−1} E^q` by doubling.
pub fn geometric_sum(e: &UnitalBlock, n: u64) -> UnitalBlock {
    assert!(n >= 1);
    let mut sum = Matrix3::identity();
    let mut pow = *e;
    let bits = 64 - n.leading_zeros();
    for b in (0..bits - 1).rev() {
        // S(2m) = S(m) + E^m S(m)
        sum += pow * sum;
        pow *= pow;
        if (n >> b) & 1 == 1 {
            sum = Matrix3::identity() + e * sum;
            pow *= e;
        }
    }
    sum
}

/// Top singular value with its left and right singular vectors.
pub fn largest_singular_triplet(m: &UnitalBlock) -> (f64, Vector3<f64>, Vector3<f64>) {
    let svd = m.svd(true, true);
    let idx = svd.singular_values.imax();
    let u = svd.u.unwrap().column(idx).into_owned();
    let v = svd.v_t.unwrap().row(idx).transpose();
    (svd.singular_values[idx], u, v)
}

/// Measured `(M_i M_j)ⁿ` for every pair of the plan, in plan order.
pub fn measure_double_maps<M: Measurements>(meas: &mut M, plan: &DoubleMapPlan) -> Result<Vec<Ptm>> {
    plan.sequences()
        .iter()
        .map(|s| {
            let m = meas.ptm(s).map_err(|e| e.in_stage("double-map tomography", s.to_string()))?;
            if m.matrix().iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid(format!("non-finite PTM estimate for {s}")));
            }
            Ok(m)
        })
        .collect()
}

/// Aligns measured unital blocks `X_ij` with `Y_ij = (Ê_i Ê_j)ⁿ`.
pub fn gauge_align(
    blocks: &[UnitalBlock],
    plan: &DoubleMapPlan,
    measured: &[Ptm],
    opts: &SimilarityOptions,
) -> Result<SimilarityFit> {
    let y: Vec<UnitalBlock> = plan
        .pairs
        .iter()
        .zip(&plan.repetitions)
        .map(|(&(i, j), &n)| matrix_power(&(blocks[i - 1] * blocks[j - 1]), n))
        .collect();
    let x: Vec<UnitalBlock> = measured.iter().map(|m| m.unital()).collect();
    similarity_fit(&x, &y, opts).map_err(|e| e.in_stage("gauge alignment", "all double maps"))
}

#[derive(Clone, Debug)]
pub struct PairDiagnostics {
    pub pair: (usize, usize),
    pub n: u64,
    pub lambda_max: f64,
}

#[derive(Clone, Debug)]
pub struct NonUnitalReconstruction {
    pub vectors: Vec<NonUnitalVector>,
    pub solution: Solution,
    /// Singular values of the projected system, descending.
    pub spectrum: Vec<f64>,
    pub pairs: Vec<PairDiagnostics>,
    /// Ratio of the 18th to the 19th singular value.
    pub separation: f64,
}

/// Number of smallest singular values removed from the non-unital system.
pub const NONUNITAL_TRUNCATION: usize = 3;

/// How the three near-null gauge directions of the system are removed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NonUnitalSolve {
    /// Solve modulo the exact family `k_j + (I − Ê_j)α`. The frame offset
    /// carried by the measured vectors lies in that family, so none of it
    /// leaks into the result.
    #[default]
    GaugeProjected,
    /// Zero the three smallest singular values.
    Truncated,
}

/// Solves `v₁·k_i + (v₁ᵀ Ê_i)·k_j = u₁·k̂⁽ⁿ⁾ / λ_max` over all pairs, where the
/// `aligned` vectors are already in the frame of `blocks`.
pub fn reconstruct_nonunital(
    plan: &DoubleMapPlan,
    aligned: &[NonUnitalVector],
    blocks: &[UnitalBlock],
    mode: NonUnitalSolve,
) -> Result<NonUnitalReconstruction> {
    let g = blocks.len();
    let rows = plan.pairs.len();
    if aligned.len() != rows {
        return Err(Error::Invalid(format!("{} aligned vectors for {rows} pairs", aligned.len())));
    }
    let mut a = DMatrix::zeros(rows, 3 * g);
    let mut rhs = DVector::zeros(rows);
    let mut pairs = Vec::with_capacity(rows);
    for (r, ((&(i, j), &n), k_hat)) in plan.pairs.iter().zip(&plan.repetitions).zip(aligned).enumerate() {
        let e_ij = blocks[i - 1] * blocks[j - 1];
        let (lmax, u, v) = largest_singular_triplet(&geometric_sum(&e_ij, n));
        let vi = blocks[i - 1].transpose() * v;
        for c in 0..3 {
            a[(r, 3 * (i - 1) + c)] += v[c];
            a[(r, 3 * (j - 1) + c)] += vi[c];
        }
        rhs[r] = u.dot(k_hat) / lmax;
        pairs.push(PairDiagnostics { pair: (i, j), n, lambda_max: lmax });
    }
    let labels = (1..=g).flat_map(|j| (1..=3).map(move |c| format!("k{j}_{c}"))).collect();
    let sys = LinearSystem::new(a, rhs, labels)?;
    let truncated = pinv_solve(&sys, Truncation::DropSmallest(NONUNITAL_TRUNCATION))?;
    let solution = match mode {
        NonUnitalSolve::Truncated => truncated.clone(),
        NonUnitalSolve::GaugeProjected => gauge_projected_solve(&sys, blocks)?,
    };
    let sv = &truncated.singular_values;
    let keep = sv.len().saturating_sub(NONUNITAL_TRUNCATION);
    let separation = if keep > 0 && keep < sv.len() { sv[keep - 1] / sv[keep].max(f64::MIN_POSITIVE) } else { f64::INFINITY };
    if keep == 0 || separation < 2.0 {
        let spectrum: Vec<String> = sv.iter().map(|s| format!("{s:.3e}")).collect();
        return Err(Error::Rank {
            expected: keep,
            found: sv.iter().filter(|&&s| s > 0.5 * sv[keep.saturating_sub(1)]).count(),
            context: format!("non-unital system lacks a clear gap; spectrum [{}]", spectrum.join(", ")),
        });
    }
    let vectors = solution.x.as_slice().chunks(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect();
    Ok(NonUnitalReconstruction { vectors, solution, spectrum: truncated.singular_values, pairs, separation })
}

// Minimises ‖A(P y) + (A G) α − b‖ with P the projector off the gauge
// columns G, and returns k = P y.
fn gauge_projected_solve(sys: &LinearSystem, blocks: &[UnitalBlock]) -> Result<Solution> {
    let n = 3 * blocks.len();
    let mut gm = DMatrix::zeros(n, 3);
    for (j, e) in blocks.iter().enumerate() {
        let d = Matrix3::identity() - e;
        gm.view_mut((3 * j, 0), (3, 3)).copy_from(&d);
    }
    let q = gm.clone().qr().q();
    let p = DMatrix::identity(n, n) - &q * q.transpose();
    let a = &sys.coefficients;
    let mut c = DMatrix::zeros(a.nrows(), n + 3);
    c.view_mut((0, 0), (a.nrows(), n)).copy_from(&(a * &p));
    c.view_mut((0, n), (a.nrows(), 3)).copy_from(&(a * &gm));
    let mut labels = sys.labels.clone();
    labels.extend(["alpha1", "alpha2", "alpha3"].map(String::from));
    let ext = LinearSystem::new(c, sys.rhs.clone(), labels)?;
    let mut sol = pinv_solve(&ext, Truncation::Relative(1e-13))?;
    sol.x = &p * sol.x.rows(0, n);
    sol.residual_norm = (a * &sol.x - &sys.rhs).norm();
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateset::reference_gates;
    use crate::noise::noisy_gate_with;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ideal_blocks() -> Vec<UnitalBlock> {
        reference_gates().iter().map(|g| g.ideal_ptm.unital()).collect()
    }

    #[test]
    fn geometric_sum_examples() {
        let e = Matrix3::from_diagonal(&Vector3::new(0.99, 0.5, 0.5));
        assert_eq!(geometric_sum(&e, 1), Matrix3::identity());
        let s = geometric_sum(&e, 100);
        assert!((s[(0, 0)] - (1.0 - 0.99f64.powi(100)) / 0.01).abs() < 1e-10);
        assert!((s[(0, 0)] - 63.39676587).abs() < 1e-6);
        let (l, _, _) = largest_singular_triplet(&geometric_sum(&Matrix3::identity(), 50));
        assert!((l - 50.0).abs() < 1e-12);
        let g = 1e-3;
        let e = Matrix3::from_diagonal(&Vector3::new(1.0 - g, 0.5, 0.5));
        let (l, _, _) = largest_singular_triplet(&geometric_sum(&e, 100_000));
        assert!((l - 1.0 / g).abs() < 1e-6);
    }

    #[test]
    fn doubling_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = Matrix3::from_fn(|_, _| rng.random::<f64>() - 0.5);
        let mut direct = Matrix3::zeros();
        let mut pow = Matrix3::identity();
        for n in 1..=64 {
            direct += pow;
            pow *= e;
            assert!((geometric_sum(&e, n) - direct).amax() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn rotation_sum_grows_linearly() {
        let e = ideal_blocks()[1];
        let l1 = largest_singular_triplet(&geometric_sum(&e, 301)).0;
        let l2 = largest_singular_triplet(&geometric_sum(&e, 601)).0;
        assert!((l2 / l1 - 601.0 / 301.0).abs() < 0.02);
    }

    #[test]
    fn plan_shape() {
        let plan = DoubleMapPlan::from_hints(&[1e-3; 7]).unwrap();
        assert_eq!(plan.pairs.len(), 21);
        assert!(plan.repetitions.iter().all(|&n| n == 500));
        assert_eq!(plan.sequences()[0], SequenceSpec::new(vec![1, 2], 500));
        assert!(DoubleMapPlan::from_hints(&[0.0; 7]).is_err());
    }

    #[test]
    fn projection_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for e in ideal_blocks() {
            // Rotation axis: null vector of E − I.
            let svd = (e - Matrix3::identity()).svd(false, true);
            let idx = svd.singular_values.imin();
            let axis: Vector3<f64> = svd.v_t.unwrap().row(idx).transpose();
            let p = axis * axis.transpose();
            let k = Vector3::from_fn(|_, _| rng.random::<f64>());
            let a = Vector3::from_fn(|_, _| rng.random::<f64>() - 0.5);
            assert!((p * (k + a - e * a) - p * k).amax() < 1e-10);
        }
    }

    fn synthetic(p: f64, seed: u64) -> (Vec<Ptm>, DoubleMapPlan, Vec<NonUnitalVector>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gates: Vec<Ptm> = reference_gates().iter().map(|g| noisy_gate_with(g, p, &mut rng).unwrap().0.noisy_ptm).collect();
        let plan = DoubleMapPlan::from_hints(&[p; 7]).unwrap();
        let k_hat = plan
            .sequences()
            .iter()
            .map(|s| s.base_map(&gates).power(s.repetitions).nonunital())
            .collect();
        (gates, plan, k_hat)
    }

    #[test]
    fn zero_vectors_give_zero() {
        let plan = DoubleMapPlan::from_hints(&[1e-3; 7]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noisy: Vec<UnitalBlock> = reference_gates()
            .iter()
            .map(|g| noisy_gate_with(g, 1e-3, &mut rng).unwrap().0.noisy_ptm.unital())
            .collect();
        let rec = reconstruct_nonunital(&plan, &vec![Vector3::zeros(); 21], &noisy, NonUnitalSolve::default()).unwrap();
        assert!(rec.vectors.iter().all(|k| k.amax() < 1e-10));
    }

    #[test]
    fn singular_profile_has_three_small_values() {
        for seed in 0..5 {
            let (gates, plan, k_hat) = synthetic(1e-3, 10 + seed);
            let blocks: Vec<UnitalBlock> = gates.iter().map(|m| m.unital()).collect();
            let rec = reconstruct_nonunital(&plan, &k_hat, &blocks, NonUnitalSolve::default()).unwrap();
            assert_eq!(rec.solution.singular_values.len(), 21);
            assert!(rec.separation >= 1e2, "seed {seed}: {:?}", rec.spectrum);
        }
    }

    /// Residual of `k_rec − k_true ≈ (I − E_j) a` after the best `a`.
    fn gauge_residual(reference: &[UnitalBlock], rec: &[NonUnitalVector], truth: &[NonUnitalVector]) -> f64 {
        let mut a_mat = DMatrix::zeros(21, 3);
        let mut rhs = DVector::zeros(21);
        for (j, e) in reference.iter().enumerate() {
            let l = Matrix3::identity() - e;
            let d = rec[j] - truth[j];
            for r in 0..3 {
                for c in 0..3 {
                    a_mat[(3 * j + r, c)] = l[(r, c)];
                }
                rhs[3 * j + r] = d[r];
            }
        }
        let sys = LinearSystem::new(a_mat, rhs, vec!["a".into(); 3]).unwrap();
        pinv_solve(&sys, Truncation::default()).unwrap().residual_norm
    }

    #[test]
    fn injected_k_recovered_up_to_gauge() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let blocks = ideal_blocks();
        let k_true: Vec<NonUnitalVector> = (0..7).map(|_| Vector3::from_fn(|_, _| 1e-3 * (rng.random::<f64>() - 0.5))).collect();
        let maps: Vec<Ptm> = blocks.iter().zip(&k_true).map(|(e, k)| Ptm::from_blocks(k, e)).collect();
        let plan = DoubleMapPlan::from_hints(&[1e-3; 7]).unwrap();
        let k_hat: Vec<_> = plan.sequences().iter().map(|s| s.base_map(&maps).power(s.repetitions).nonunital()).collect();
        let rec = reconstruct_nonunital(&plan, &k_hat, &blocks, NonUnitalSolve::default()).unwrap();
        assert!(gauge_residual(&blocks, &rec.vectors, &k_true) <= 1e-8);
    }

    #[test]
    fn noisy_blocks_recover_k_to_first_order() {
        let (gates, plan, k_hat) = synthetic(1e-3, 4);
        let blocks: Vec<UnitalBlock> = gates.iter().map(|m| m.unital()).collect();
        let rec = reconstruct_nonunital(&plan, &k_hat, &blocks, NonUnitalSolve::default()).unwrap();
        let truth: Vec<_> = gates.iter().map(|m| m.nonunital()).collect();
        let k_scale = truth.iter().map(|k| k.norm()).fold(0.0, f64::max);
        // The truncated directions tilt away from the gauge family by O(p).
        assert!(gauge_residual(&ideal_blocks(), &rec.vectors, &truth) <= 1e-2 * k_scale);
    }

    #[test]
    fn alignment_recovers_frame() {
        let (gates, plan, _) = synthetic(1e-3, 5);
        let blocks: Vec<UnitalBlock> = gates.iter().map(|m| m.unital()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let db0 = Matrix3::from_fn(|_, _| 0.01 * (rng.random::<f64>() - 0.5));
        let b0 = Matrix3::identity() + db0;
        let b0_inv = b0.try_inverse().unwrap();
        let measured: Vec<Ptm> = plan
            .sequences()
            .iter()
            .map(|s| {
                let m = s.base_map(&gates).power(s.repetitions);
                Ptm::from_blocks(&(b0_inv * m.nonunital()), &(b0_inv * m.unital() * b0))
            })
            .collect();
        let fit = gauge_align(&blocks, &plan, &measured, &SimilarityOptions::default()).unwrap();
        assert_eq!(fit.rank, 8);
        assert!(fit.singular_values[8] <= 1e-6 * fit.singular_values[0]);
        // B agrees with B₀ up to a scalar factor.
        let ratio = fit.b * b0_inv;
        let s = ratio.trace() / 3.0;
        assert!((ratio / s - Matrix3::identity()).amax() < 1e-8, "{ratio}");
    }
}

//! First-stage reconstruction of the unital blocks from quadruple-sequence traces.
//!
//! To first order in `δE_j = E_j − E_jⁱ`,
//!
//! ```text
//! Tr(E_i E_j E_k E_l) − Tr(E_iⁱ E_jⁱ E_kⁱ E_lⁱ) ≈ Σ_positions Tr(Q · δE)
//! ```
//!
//! where `Q` is the cyclic product of the other three reference blocks. The
//! 63 unknowns are the entries of `δE_1..δE_7`, row-major, gate by gate.

use nalgebra::{DMatrix, DVector, Matrix3};

use crate::error::{Error, Result};
use crate::lsq::{pinv_solve, LinearSystem, Solution, Truncation};
use crate::oracle::Measurements;
use crate::ptm::{product, GateRecord, Ptm, UnitalBlock};
use crate::spectral::{estimate_trace, TrackOptions};

/// Column of entry `(a, b)` of `δE_g` (1-based `g`, 0-based `a`, `b`).
pub fn unknown_index(g: usize, a: usize, b: usize) -> usize {
    9 * (g - 1) + 3 * a + b
}

pub fn unknown_labels(num_gates: usize) -> Vec<String> {
    (1..=num_gates)
        .flat_map(|g| (0..3).flat_map(move |a| (0..3).map(move |b| format!("dE{g}_{}{}", a + 1, b + 1))))
        .collect()
}

pub fn flatten(blocks: &[UnitalBlock]) -> DVector<f64> {
    DVector::from_iterator(blocks.len() * 9, blocks.iter().flat_map(|m| m.transpose().iter().copied().collect::<Vec<_>>()))
}

pub fn unflatten(x: &DVector<f64>) -> Vec<UnitalBlock> {
    x.as_slice().chunks(9).map(Matrix3::from_row_slice).collect()
}

/// Trace of `E_{q0} E_{q1} ...` over 1-based ids.
pub fn sequence_unital_trace(blocks: &[UnitalBlock], seq: &[usize]) -> f64 {
    seq.iter().fold(Matrix3::identity(), |acc, &g| acc * blocks[g - 1]).trace()
}

/// Linearized row of `Tr(E_{q0} E_{q1} E_{q2} E_{q3})` around `reference`.
pub fn quadruple_row(reference: &[UnitalBlock], q: &[usize; 4]) -> Vec<f64> {
    let mut row = vec![0.0; reference.len() * 9];
    for pos in 0..4 {
        let g = q[pos];
        let others = (1..4).map(|s| &reference[q[(pos + s) % 4] - 1]);
        let qm = others.fold(Matrix3::identity(), |acc, e| acc * e);
        for a in 0..3 {
            for b in 0..3 {
                row[unknown_index(g, a, b)] += qm[(b, a)];
            }
        }
    }
    row
}

/// The first-order system for the given quadruples; `measured` are full
/// traces `Tr(M_{ijkl})` including the identity contribution.
pub fn build_quadruple_system(reference: &[UnitalBlock], quads: &[[usize; 4]], measured: &[f64]) -> Result<LinearSystem> {
    if measured.len() != quads.len() {
        return Err(Error::Invalid(format!("{} traces for {} quadruples", measured.len(), quads.len())));
    }
    let cols = reference.len() * 9;
    let mut a = DMatrix::zeros(quads.len(), cols);
    let mut rhs = DVector::zeros(quads.len());
    for (r, q) in quads.iter().enumerate() {
        if let Some(&g) = q.iter().find(|&&g| g == 0 || g > reference.len()) {
            return Err(Error::InvalidSequence(format!("quadruple {q:?}: gate id {g}")));
        }
        for (c, v) in quadruple_row(reference, q).into_iter().enumerate() {
            a[(r, c)] = v;
        }
        rhs[r] = measured[r] - 1.0 - sequence_unital_trace(reference, q);
    }
    LinearSystem::new(a, rhs, unknown_labels(reference.len()))
}

/// Minimal least-squares `δB` with `diff_j ≈ δB·E_jⁱ − E_jⁱ·δB` and the remaining
/// per-gate residual norms.
pub fn fit_unital_gauge(reference: &[UnitalBlock], diff: &[UnitalBlock]) -> (Matrix3<f64>, Vec<f64>) {
    let mut a = DMatrix::zeros(9 * reference.len(), 9);
    for (j, e) in reference.iter().enumerate() {
        for idx in 0..9 {
            let mut db = Matrix3::zeros();
            db[(idx / 3, idx % 3)] = 1.0;
            let img = db * e - e * db;
            for r in 0..9 {
                a[(9 * j + r, idx)] = img[(r / 3, r % 3)];
            }
        }
    }
    let b = flatten(diff);
    let sys = LinearSystem::new(a, b, (0..9).map(|i| format!("dB{i}")).collect()).expect("shape is consistent");
    let sol = pinv_solve(&sys, Truncation::default()).expect("commutator map is nonzero");
    let db = Matrix3::from_row_slice(sol.x.as_slice());
    let residuals = reference
        .iter()
        .zip(diff)
        .map(|(e, d)| (d - (db * e - e * db)).norm())
        .collect();
    (db, residuals)
}

#[derive(Clone, Debug)]
pub struct UnitalReconstruction {
    /// Reconstructed blocks `Ê_j`, index `j − 1`.
    pub blocks: Vec<UnitalBlock>,
    /// Measured `Λ` per quadruple, in list order.
    pub traces: Vec<f64>,
    pub quadruples: Vec<[usize; 4]>,
    pub solution: Solution,
    /// Set when a refinement step was rejected for increasing the residual.
    pub diverged: bool,
    pub iterations: usize,
}

impl UnitalReconstruction {
    /// Norm of measured minus predicted quadruple traces under the current blocks.
    pub fn trace_residual(&self) -> f64 {
        trace_residual(&self.blocks, &self.quadruples, &self.traces)
    }
}

fn trace_residual(blocks: &[UnitalBlock], quads: &[[usize; 4]], traces: &[f64]) -> f64 {
    quads
        .iter()
        .zip(traces)
        .map(|(q, t)| (t - 1.0 - sequence_unital_trace(blocks, q)).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Solves the first-order system around `reference` with already measured traces.
pub fn solve_from_traces(reference: &[UnitalBlock], quads: &[[usize; 4]], traces: Vec<f64>) -> Result<UnitalReconstruction> {
    let sys = build_quadruple_system(reference, quads, &traces)?;
    let solution = pinv_solve(&sys, Truncation::default())?;
    let blocks = reference.iter().zip(unflatten(&solution.x)).map(|(e, d)| e + d).collect();
    Ok(UnitalReconstruction { blocks, traces, quadruples: quads.to_vec(), solution, diverged: false, iterations: 0 })
}

/// Measures every quadruple trace with the spectral protocol and solves.
/// `p_hints[j]` sizes the schedule of sequences containing gate `j + 1`.
pub fn reconstruct_unital<M: Measurements>(
    meas: &mut M,
    gates: &[GateRecord],
    quads: &[[usize; 4]],
    p_hints: &[f64],
    opts: &TrackOptions,
) -> Result<UnitalReconstruction> {
    if p_hints.len() != gates.len() {
        return Err(Error::Invalid(format!("{} error-rate hints for {} gates", p_hints.len(), gates.len())));
    }
    let ideal: Vec<Ptm> = gates.iter().map(|g| g.ideal_ptm).collect();
    let mut traces = Vec::with_capacity(quads.len());
    for q in quads {
        let ideal_product = product(q.iter().map(|&g| &ideal[g - 1]));
        let p: f64 = q.iter().map(|&g| p_hints[g - 1]).sum();
        let est = estimate_trace(meas, q, &ideal_product, p, opts)
            .map_err(|e| e.in_stage("unital trace", format!("{q:?}")))?;
        traces.push(est.lambda);
    }
    let reference: Vec<UnitalBlock> = ideal.iter().map(|m| m.unital()).collect();
    solve_from_traces(&reference, quads, traces)
}

/// One relinearization around the current blocks, rejected if it increases
/// the trace residual.
pub fn iterate_refinement(prev: &UnitalReconstruction) -> Result<UnitalReconstruction> {
    let mut next = solve_from_traces(&prev.blocks, &prev.quadruples, prev.traces.clone())?;
    next.iterations = prev.iterations + 1;
    if next.trace_residual() > prev.trace_residual() {
        let mut kept = prev.clone();
        kept.diverged = true;
        return Ok(kept);
    }
    Ok(next)
}

/// Unital block of an external map `M′` from `Tr(M_j M′)` over nine probes.
pub fn external_unital(probes: &[UnitalBlock], traces: &[f64]) -> Result<UnitalBlock> {
    if probes.len() != 9 || traces.len() != 9 {
        return Err(Error::Invalid(format!("need 9 probes and traces, got {} and {}", probes.len(), traces.len())));
    }
    // Tr(E_j E′) = Σ_ab (E_j)_{ba} E′_{ab}
    let a = DMatrix::from_fn(9, 9, |j, c| probes[j][(c % 3, c / 3)]);
    // Rows of `a` are the probes, so a dependent probe combination is a null vector of aᵀ.
    let svd = a.transpose().svd(false, true);
    let max = svd.singular_values.max();
    let found = svd.singular_values.iter().filter(|&&s| s > 1e-10 * max).count();
    if found < 9 {
        let idx = svd.singular_values.iter().position(|&s| s <= 1e-10 * max).unwrap();
        let null = svd.v_t.as_ref().unwrap().row(idx).transpose();
        let combo: Vec<String> = (0..9)
            .filter(|&r| null[r].abs() > 1e-6)
            .map(|r| format!("{:+.3}·probe{}", null[r], r + 1))
            .collect();
        return Err(Error::Rank {
            expected: 9,
            found,
            context: format!("external-map probes; dependent combination {}", combo.join(" ")),
        });
    }
    let rhs = DVector::from_iterator(9, traces.iter().map(|t| t - 1.0));
    let x = a.lu().solve(&rhs).ok_or_else(|| Error::Degenerate("probe matrix singular".into()))?;
    Ok(Matrix3::from_fn(|r, c| x[3 * r + c]))
}

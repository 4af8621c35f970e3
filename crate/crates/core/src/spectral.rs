//! Trace estimation from amplified power sums.
//!
//! For a repeated sequence with unital eigenvalues λ₁, λ₂, λ₃ the traces
//! `t_l = Tr(M^l) − 1` at `l = n, 2n, 3n` fix the values `λᵢⁿ`. Their n-th
//! roots are ambiguous up to a phase `2π/n`; the estimate is refined along a
//! growing schedule of `n`, each time picking the branch closest to the
//! previous step.

use std::f64::consts::PI;

use nalgebra::Matrix3;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::oracle::{Measurements, SequenceSpec, TraceCache};
use crate::ptm::{eigenvalues3, period, unital_eigenvalues, EigenTriple, Ptm, PERMUTATIONS};

/// Repetition counts `n = m⌊2^k/m⌋ + 1`, `k = 0..=k_max`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceSchedule {
    pub period: u64,
    pub values: Vec<u64>,
    pub k_max: i32,
}

pub fn build_schedule(m: u64, p: f64) -> TraceSchedule {
    assert!(m >= 1, "period must be positive");
    assert!(p > 0.0 && p < 0.5, "error rate {p} outside (0, 0.5)");
    let k_max = (0.4 / p).log2().floor() as i32;
    let mut values: Vec<u64> = (0..=k_max.max(0))
        .map(|k| m * ((1u64 << k) / m) + 1)
        .collect();
    if m == 1 || k_max < 0 {
        values.insert(0, 1);
    }
    values.sort_unstable();
    values.dedup();
    TraceSchedule { period: m, values, k_max }
}

/// Roots of `x³ − e₁x² + e₂x − e₃` built from power sums via Newton's identities.
pub fn power_sums_to_candidates(t_n: f64, t_2n: f64, t_3n: f64) -> [C64; 3] {
    let e1 = t_n;
    let e2 = (t_n * t_n - t_2n) / 2.0;
    let e3 = (t_n.powi(3) - 3.0 * t_n * t_2n + 2.0 * t_3n) / 6.0;
    #[rustfmt::skip]
    let companion = Matrix3::new(
        e1, -e2, e3,
        1.0, 0.0, 0.0,
        0.0, 1.0, 0.0,
    );
    eigenvalues3(&companion)
}

/// The n-th root of `mu` closest to `prev`.
pub fn nearest_root(mu: C64, prev: C64, n: u64) -> C64 {
    if n == 1 {
        return mu;
    }
    let nf = n as f64;
    let j = ((nf * prev.arg() - mu.arg()) / (2.0 * PI)).round();
    C64::from_polar(mu.norm().powf(1.0 / nf), (mu.arg() + 2.0 * PI * j) / nf)
}

/// Tolerances for [`track_step`] and [`estimate_trace`].
#[derive(Clone, Copy, Debug)]
pub struct TrackOptions {
    /// Relative gap between the two best assignments below which tracking is ambiguous.
    pub ambiguity_ratio: f64,
    /// Residual below which a non-closed triple is symmetrized instead of rejected.
    pub conjugation_tol: f64,
    /// Roots closer than this at some `n` make that `n` unusable.
    pub collision_tol: f64,
    /// Search cap for the period of the ideal sequence.
    pub period_cap: u64,
    /// Largest `n` the schedule may use; larger values are dropped.
    pub max_n: Option<u64>,
    pub final_step: FinalStep,
}

impl Default for TrackOptions {
    fn default() -> Self {
        TrackOptions {
            ambiguity_ratio: 0.1,
            conjugation_tol: 1e-6,
            collision_tol: 1e-3,
            period_cap: 1024,
            max_n: None,
            final_step: FinalStep::default(),
        }
    }
}

/// Which tracked step supplies the reported `Λ`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FinalStep {
    /// The step with the smallest modelled variance. The model scales with
    /// the trace variance, so the choice needs no noise level.
    #[default]
    MinVariance,
    /// The largest scheduled `n` that was tracked.
    Last,
}

#[derive(Clone, Debug)]
pub struct TrackStep {
    pub n: u64,
    /// `t_n, t_2n, t_3n` with the identity contribution removed.
    pub t: [f64; 3],
    pub mu: [C64; 3],
    pub lambda: EigenTriple,
    pub radius: f64,
}

impl TrackStep {
    /// `1 + λ₁ + λ₂ + λ₃`.
    pub fn trace_estimate(&self) -> f64 {
        1.0 + self.lambda.sum().re
    }
}

#[derive(Clone, Debug)]
pub struct TrackState {
    pub current: EigenTriple,
    pub history: Vec<TrackStep>,
}

impl TrackState {
    pub fn new(initial: EigenTriple) -> Self {
        TrackState { current: initial, history: Vec::new() }
    }
}

struct Assignment {
    total: f64,
    worst: f64,
    lambda: [C64; 3],
}

/// Advances the tracked eigenvalues with the roots `mu` measured at `n`.
pub fn track_step(state: &mut TrackState, t: [f64; 3], mu: [C64; 3], n: u64, opts: &TrackOptions) -> Result<()> {
    let prev = state.current.0;
    let mut assignments: Vec<Assignment> = PERMUTATIONS
        .iter()
        .map(|perm| {
            let lambda = [0, 1, 2].map(|i| nearest_root(mu[perm[i]], prev[i], n));
            let d = [0, 1, 2].map(|i| (lambda[i] - prev[i]).norm());
            Assignment { total: d.iter().sum(), worst: d.iter().copied().fold(0.0, f64::max), lambda }
        })
        .collect();
    assignments.sort_by(|a, b| a.total.total_cmp(&b.total));

    let radius = PI / n as f64;
    let best = &assignments[0];
    let best_triple = EigenTriple::new(best.lambda);
    let residual = best_triple.conjugation_residual();
    if residual > opts.conjugation_tol {
        return Err(Error::NotConjugationClosed { n, residual });
    }
    if n > 1 {
        if let Some(rival) = assignments[1..]
            .iter()
            .find(|a| {
                // Only spectra a real map can have compete.
                let t = EigenTriple::new(a.lambda);
                t.conjugation_residual() <= opts.conjugation_tol && t.distance(&best_triple) > 0.5 * a.total.max(1e-9)
            })
        {
            let close = rival.total - best.total < opts.ambiguity_ratio * rival.total;
            if close && best.worst < radius && rival.worst < radius {
                return Err(Error::TrackingAmbiguity { n, best: best.total, second: rival.total });
            }
        }
    }

    let lambda = best_triple.symmetrized();
    state.current = lambda;
    state.history.push(TrackStep { n, t, mu, lambda, radius });
    Ok(())
}

fn min_gap(v: &[C64; 3]) -> f64 {
    [(0, 1), (0, 2), (1, 2)]
        .iter()
        .map(|&(i, j)| (v[i] - v[j]).norm())
        .fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Debug)]
pub struct TraceEstimate {
    /// `Λ = 1 + λ₁ + λ₂ + λ₃` from the last usable step.
    pub lambda: f64,
    pub eigenvalues: EigenTriple,
    pub schedule: TraceSchedule,
    pub steps: Vec<TrackStep>,
    /// Index into `steps` of the step reported.
    pub selected: usize,
    /// Scheduled `n` dropped because two roots collided or split off the
    /// conjugate-closed set.
    pub skipped: Vec<u64>,
}

impl TraceEstimate {
    pub fn final_n(&self) -> u64 {
        self.steps.get(self.selected).map(|s| s.n).unwrap_or(1)
    }
}

/// Schedule for one sequence under `opts`, honouring the `max_n` cap.
pub fn schedule_for(ideal: &Ptm, p_hint: f64, opts: &TrackOptions) -> TraceSchedule {
    let mut schedule = build_schedule(sequence_period(ideal, opts.period_cap), p_hint.clamp(1e-12, 0.4));
    if let Some(cap) = opts.max_n {
        schedule.values.retain(|&n| n <= cap.max(1));
        if schedule.values.is_empty() {
            schedule.values.push(1);
        }
    }
    schedule
}

/// Period of the ideal sequence, or 1 when it has none within the cap.
pub fn sequence_period(ideal: &Ptm, cap: u64) -> u64 {
    period(ideal, cap).unwrap_or(1)
}

/// Runs the trace protocol on `gate_ids`; `ideal` is the noiseless product of
/// one application and `p_hint` sizes the schedule.
pub fn estimate_trace<M: Measurements>(
    meas: &mut M,
    gate_ids: &[usize],
    ideal: &Ptm,
    p_hint: f64,
    opts: &TrackOptions,
) -> Result<TraceEstimate> {
    let schedule = schedule_for(ideal, p_hint, opts);
    let mut cache = TraceCache::new(meas);
    let mut state = TrackState::new(unital_eigenvalues(&ideal.unital()));
    let mut skipped = Vec::new();
    let mut var: Vec<f64> = Vec::new();
    let mut best: Option<usize> = None;
    for &n in &schedule.values {
        let mut t = [0.0; 3];
        for (i, l) in [n, 2 * n, 3 * n].into_iter().enumerate() {
            let spec = SequenceSpec::new(gate_ids.to_vec(), l);
            let v = cache.trace(&spec)?;
            if !v.is_finite() {
                return Err(Error::Invalid(format!("non-finite trace estimate for {spec}")));
            }
            t[i] = v - 1.0;
        }
        let mu = power_sums_to_candidates(t[0], t[1], t[2]);
        if mu.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Degenerate(format!("root finding failed at n = {n} for sequence {gate_ids:?}")));
        }
        if let (FinalStep::MinVariance, Some(b)) = (opts.final_step, best) {
            // Track from the most reliable step so far, not a noisy neighbour.
            state.current = state.history[b].lambda;
        }
        // Roots can collide at one power while the eigenvalues stay apart;
        // only then is dropping the step safe.
        let distinct = min_gap(&state.current.0) > opts.collision_tol;
        if n > 1 && min_gap(&mu) < opts.collision_tol && distinct {
            skipped.push(n);
            continue;
        }
        match track_step(&mut state, t, mu, n, opts) {
            // Sampling noise can split a near-collision into two real roots
            // that no conjugate-closed assignment matches.
            Err(Error::NotConjugationClosed { .. }) if n > 1 && distinct => skipped.push(n),
            // A near-real root pair makes its two conjugate assignments
            // nearly equal; under noise that step is dropped, not fatal.
            Err(Error::TrackingAmbiguity { .. }) if n > 1 && distinct && opts.final_step == FinalStep::MinVariance => {
                skipped.push(n)
            }
            Err(e) => return Err(e),
            Ok(()) => {
                let step = state.history.last().expect("step just pushed");
                let v = variance_model(&step.lambda, step.n, 1.0).variance;
                // Later steps win ties.
                if best.is_none_or(|b| v <= var[b]) {
                    best = Some(var.len());
                }
                var.push(v);
            }
        }
    }
    let Some(best) = best else {
        return Err(Error::Degenerate(format!("no usable repetition count for sequence {gate_ids:?}")));
    };
    let selected = match opts.final_step {
        FinalStep::Last => state.history.len() - 1,
        FinalStep::MinVariance => best,
    };
    let step = &state.history[selected];
    Ok(TraceEstimate {
        lambda: step.trace_estimate(),
        eigenvalues: step.lambda,
        schedule,
        selected,
        steps: state.history,
        skipped,
    })
}

/// `t_n, t_2n, t_3n` of an exact eigenvalue triple.
pub fn exact_power_sums(l: &[C64; 3], n: u64) -> [f64; 3] {
    [n, 2 * n, 3 * n].map(|k| l.iter().map(|z| z.powu(k as u32)).sum::<C64>().re)
}

/// `Λ` as a function of the three traces, with each root matched to the
/// nearest power of `reference` and its branch taken next to `reference`.
pub fn solve_trace_map(reference: &EigenTriple, n: u64, t: [f64; 3]) -> f64 {
    let mu = power_sums_to_candidates(t[0], t[1], t[2]);
    let prev = reference.0;
    let best = PERMUTATIONS
        .iter()
        .min_by(|p, q| {
            let cost = |p: &[usize; 3]| (0..3).map(|i| (mu[p[i]] - prev[i].powu(n as u32)).norm()).sum::<f64>();
            cost(p).total_cmp(&cost(q))
        })
        .expect("six permutations");
    (0..3).map(|i| nearest_root(mu[best[i]], prev[i], n)).sum::<C64>().re + 1.0
}

/// Central differences of [`solve_trace_map`] at the exact traces.
pub fn finite_difference_gradient(l: &EigenTriple, n: u64, h: f64) -> [f64; 3] {
    let t0 = exact_power_sums(&l.0, n);
    [0, 1, 2].map(|i| {
        let mut up = t0;
        let mut dn = t0;
        up[i] += h;
        dn[i] -= h;
        (solve_trace_map(l, n, up) - solve_trace_map(l, n, dn)) / (2.0 * h)
    })
}

/// Which closed form the variance model used.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Degeneracy {
    General,
    Pair,
    Full,
}

#[derive(Clone, Copy, Debug)]
pub struct VarianceModel {
    pub variance: f64,
    /// `(∂Λ/∂t_n, ∂Λ/∂t_2n, ∂Λ/∂t_3n)`.
    pub gradient: [f64; 3],
    pub regime: Degeneracy,
    /// Set when the general formula's denominator is tiny or the powers
    /// collide for distinct eigenvalues.
    pub ill_conditioned: bool,
}

const DEGENERACY_TOL: f64 = 1e-6;
/// Spread of the three powers, relative to the largest, below which the full
/// limit is used. The general formula divides by the cube of the spread; the
/// limit's error is second order in it.
const FULL_SPREAD_TOL: f64 = 1e-3;

/// First-order propagation of i.i.d. trace noise of variance `var_t` into `Λ`.
pub fn variance_model(lambda: &EigenTriple, n: u64, var_t: f64) -> VarianceModel {
    assert!(n >= 1);
    let l = lambda.0;
    let pw = l.map(|z| z.powu(n as u32));
    // Decayed powers are compared on their own scale.
    let scale = pw.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let close = [(0, 1, 2), (0, 2, 1), (1, 2, 0)].map(|(i, j, k)| ((pw[i] - pw[j]).norm() < DEGENERACY_TOL * scale, i, j, k));
    let n_close = close.iter().filter(|c| c.0).count();
    let spread = [(0, 1), (0, 2), (1, 2)].map(|(i, j)| (pw[i] - pw[j]).norm()).into_iter().fold(0.0, f64::max);
    let nf = n as f64;

    let (grad, regime, mut ill) = if n_close >= 2 || spread < FULL_SPREAD_TOL * scale {
        let a = (l[0] + l[1] + l[2]) / 3.0;
        (full_gradient(a, nf), Degeneracy::Full, false)
    } else if n_close == 1 {
        let &(_, i, j, k) = close.iter().find(|c| c.0).unwrap();
        let c = (l[i] + l[j]) * 0.5;
        (pair_gradient(l[k], c, nf), Degeneracy::Pair, false)
    } else {
        let (g, denom) = general_gradient(l, pw, nf);
        (g, Degeneracy::General, denom.norm() < DEGENERACY_TOL)
    };
    if regime != Degeneracy::General {
        // Powers coincide but the eigenvalues themselves do not.
        ill |= [(0, 1), (0, 2), (1, 2)]
            .iter()
            .any(|&(i, j)| (pw[i] - pw[j]).norm() < FULL_SPREAD_TOL * scale && (l[i] - l[j]).norm() > FULL_SPREAD_TOL);
    }
    let gradient = grad.map(|z| z.re);
    let variance = gradient.iter().map(|g| g * g).sum::<f64>() * var_t;
    VarianceModel { variance, gradient, regime, ill_conditioned: ill }
}

fn general_gradient(l: [C64; 3], pw: [C64; 3], n: f64) -> ([C64; 3], C64) {
    let [a, b, c] = l;
    let [pa, pb, pc] = pw;
    let vander = (pa - pb) * (pa - pc) * (pb - pc);
    let denom = pa * pb * pc * vander * n;
    let g1 = a * pb * pb * pc * pc * (pb - pc)
        + pa.powu(3) * (pb * pb * c - b * pc * pc)
        + pa * pa * (-pb.powu(3) * c + b * pc.powu(3));
    let g2 = pa.powu(3) * (-pb * c + b * pc) + pa * (pb.powu(3) * c - b * pc.powu(3)) + a * (-pb.powu(3) * pc + pb * pc.powu(3));
    let g3 = a * pb * pc * (pb - pc) + pa * pa * (pb * c - b * pc) + pa * (-pb * pb * c + b * pc * pc);
    ([g1 / denom, g2 / (denom * 2.0), g3 / (denom * 3.0)], vander)
}

/// `a` is the simple eigenvalue, `c` the double one.
fn pair_gradient(a: C64, c: C64, n: f64) -> [C64; 3] {
    let pa = a.powf(n);
    let pc = c.powf(n);
    let sq = (pa - pc) * (pa - pc) * n * n;
    let g1 = (pa * pa * c * pc * (1.0 - 3.0 * n) + a * pc.powu(3) * n + pa.powu(3) * c * (2.0 * n - 1.0)) / (pa * pc * sq);
    let g2 = (-pa.powu(3) * c * (n - 1.0) + pa * c * pc * pc * (3.0 * n - 1.0) - a * pc.powu(3) * (2.0 * n))
        / (pa * pc * pc * sq * 2.0);
    let g3 = (pa * c * pc * (1.0 - 2.0 * n) + pa * pa * c * (n - 1.0) + a * pc * pc * n) / (pa * pc * pc * sq * 3.0);
    [g1, g2, g3]
}

fn full_gradient(a: C64, n: f64) -> [C64; 3] {
    let n3 = n * n * n;
    [
        a.powf(1.0 - n) * ((1.0 - 5.0 * n + 6.0 * n * n) / (2.0 * n3)),
        a.powf(1.0 - 2.0 * n) * (-(1.0 - 4.0 * n + 3.0 * n * n) / (2.0 * n3)),
        a.powf(1.0 - 3.0 * n) * ((n - 1.0) * (2.0 * n - 1.0) / (6.0 * n3)),
    ]
}

/// Minimizer of the modelled variance over the schedule, refined on the
/// `n ≡ 1 (mod m)` grid around the coarse minimum.
pub fn optimal_n(lambda: &EigenTriple, var_t: f64, schedule: &TraceSchedule) -> u64 {
    let var = |n: u64| variance_model(lambda, n, var_t).variance;
    let vals = &schedule.values;
    let coarse = (0..vals.len())
        .min_by(|&i, &j| var(vals[i]).total_cmp(&var(vals[j])))
        .expect("schedule is never empty");
    let m = schedule.period;
    let lo = if coarse > 0 { vals[coarse - 1] } else { 1 };
    let hi = if coarse + 1 < vals.len() { vals[coarse + 1] } else { 2 * vals[coarse] };
    let count = (hi - lo) / m + 1;
    let stride = count.div_ceil(4096).max(1) * m;
    let mut best = (vals[coarse], var(vals[coarse]));
    let mut n = lo;
    while n <= hi {
        let v = var(n);
        if v < best.1 {
            best = (n, v);
        }
        n += stride;
    }
    best.0
}

pub const DIAGNOSTIC_COLUMNS: [&str; 12] = [
    "n",
    "t_n",
    "t_2n",
    "t_3n",
    "lambda1_re",
    "lambda1_im",
    "lambda2_re",
    "lambda2_im",
    "lambda3_re",
    "lambda3_im",
    "Lambda",
    "predicted_var",
];

/// One diagnostics row per tracked step, matching [`DIAGNOSTIC_COLUMNS`].
pub fn diagnostic_rows(est: &TraceEstimate, var_t: f64) -> Vec<[f64; 12]> {
    est.steps
        .iter()
        .map(|s| {
            let l = s.lambda.0;
            [
                s.n as f64,
                s.t[0],
                s.t[1],
                s.t[2],
                l[0].re,
                l[0].im,
                l[1].re,
                l[1].im,
                l[2].re,
                l[2].im,
                s.trace_estimate(),
                variance_model(&s.lambda, s.n, var_t).variance,
            ]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ptm::{pauli, ptm_from_unitary};
    use crate::gateset::reference_gates;
    use crate::noise::noisy_gate_with;
    use crate::oracle::GstContext;
    use nalgebra::Matrix4;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }


    fn assert_same_multiset(got: [C64; 3], want: [C64; 3], tol: f64) {
        let d = EigenTriple(got).distance(&EigenTriple(want));
        assert!(d < tol, "{got:?} vs {want:?}: {d}");
    }



    fn rel_err(a: [f64; 3], b: [f64; 3]) -> f64 {
        let scale = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
        (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt() / scale
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(build_schedule(6, 1e-3).values, vec![1, 7, 13, 31, 61, 127, 253]);
        let s = build_schedule(2, 0.2);
        assert_eq!(s.values, vec![1, 3]);
        assert_eq!(s.k_max, 1);
        let s = build_schedule(1, 1e-2);
        assert_eq!(s.values, vec![1, 2, 3, 5, 9, 17, 33]);
        for m in 1..9 {
            assert!(build_schedule(m, 3e-5).values.iter().all(|n| n % m == 1 % m));
        }
    }

    #[test]
    fn schedule_cap_drops_long_sequences() {
        let opts = TrackOptions { max_n: Some(100), ..Default::default() };
        let z = ptm_from_unitary(&pauli(3)).unwrap();
        assert_eq!(schedule_for(&z, 1e-4, &opts).values, vec![1, 3, 5, 9, 17, 33, 65]);
        let tight = TrackOptions { max_n: Some(0), ..Default::default() };
        assert_eq!(schedule_for(&z, 1e-4, &tight).values, vec![1]);
    }

    #[test]
    fn candidate_examples() {
        assert_same_multiset(power_sums_to_candidates(3.0, 3.0, 3.0), [c(1.0, 0.0); 3], 1e-4);
        let w = C64::from_polar(1.0, PI / 3.0);
        assert_same_multiset(power_sums_to_candidates(2.0, 0.0, -1.0), [c(1.0, 0.0), w, w.conj()], 1e-12);
        assert_same_multiset(
            power_sums_to_candidates(-1.0, 3.0, -1.0),
            [c(-1.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0)],
            1e-7,
        );
    }

    #[test]
    fn tracking_from_truth_recovers_large_n() {
        let truth = EigenTriple::new([c(0.9999, 0.0), C64::from_polar(0.99995, 2.1), C64::from_polar(0.99995, -2.1)]);
        for n in [1, 10, 1000, 100_000] {
            let t = exact_power_sums(&truth.0, n);
            let mut st = TrackState::new(truth);
            let mu = power_sums_to_candidates(t[0], t[1], t[2]);
            track_step(&mut st, t, mu, n, &TrackOptions::default()).unwrap();
            assert!(st.current.distance(&truth) < 1e-9, "n={n}: {:?}", st.current);
        }
    }

    #[test]
    fn branch_stable_under_small_phase_error() {
        let truth = EigenTriple::new([c(1.0, 0.0), C64::from_polar(0.999, 0.7), C64::from_polar(0.999, -0.7)]);
        let n = 101;
        let t = exact_power_sums(&truth.0, n);
        let mu = power_sums_to_candidates(t[0], t[1], t[2]);
        let shift = 0.45 * PI / n as f64;
        let off = EigenTriple::new([truth.0[0], truth.0[1] * C64::from_polar(1.0, shift), truth.0[2] * C64::from_polar(1.0, -shift)]);
        let mut st = TrackState::new(off);
        track_step(&mut st, t, mu, n, &TrackOptions::default()).unwrap();
        assert!(st.current.distance(&truth) < 1e-9);
    }

    #[test]
    fn n_one_takes_the_root_itself() {
        let mu = C64::from_polar(0.9, 3.0);
        assert_eq!(nearest_root(mu, C64::from_polar(1.0, -3.1), 1), mu);
    }

    #[test]
    fn noiseless_pauli_z_and_table_gate() {
        let z = crate::GateRecord::ideal(1, crate::ptm::pauli(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (zn, _) = noisy_gate_with(&z, 1e-3, &mut rng).unwrap();
        let mut ctx = GstContext::new(vec![zn.clone()], Matrix4::identity(), 0.0, 0).unwrap();
        let est = estimate_trace(&mut ctx, &[1], &z.ideal_ptm, 1e-3, &TrackOptions::default()).unwrap();
        assert!((est.lambda - zn.noisy_ptm.trace()).abs() < 1e-8, "{} vs {}", est.lambda, zn.noisy_ptm.trace());

        let g2 = reference_gates()[1].clone();
        let mut ctx = GstContext::new(vec![g2.clone()], Matrix4::identity(), 0.0, 0).unwrap();
        let est = estimate_trace(&mut ctx, &[1], &g2.ideal_ptm, 1e-3, &TrackOptions::default()).unwrap();
        assert!((est.lambda - 1.0).abs() < 1e-9);
    }

    #[test]
    fn noiseless_reference_gates_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for g in reference_gates() {
            for _ in 0..4 {
                let p = 10f64.powf(rng.random_range(-6.0..-2.0));
                let (noisy, _) = noisy_gate_with(&g, p, &mut rng).unwrap();
                let mut ctx = GstContext::new(vec![noisy.clone()], Matrix4::identity(), 0.0, 0).unwrap();
                let est = estimate_trace(&mut ctx, &[1], &g.ideal_ptm, p, &TrackOptions::default()).unwrap();
                assert!((est.lambda - noisy.noisy_ptm.trace()).abs() < 1e-8, "gate {} p={p}", g.id);
            }
        }
    }

    #[test]
    fn gradient_n_one() {
        let l = EigenTriple::new([c(0.9, 0.0), C64::from_polar(0.95, 1.0), C64::from_polar(0.95, -1.0)]);
        let v = variance_model(&l, 1, 2.0);
        assert!(rel_err(v.gradient, [1.0, 0.0, 0.0]) < 1e-12, "{:?}", v.gradient);
        assert!((v.variance - 2.0).abs() < 1e-12);
    }

    #[test]
    fn full_degeneracy_value() {
        let v = variance_model(&EigenTriple([c(1.0, 0.0); 3]), 2, 1.0);
        assert_eq!(v.regime, Degeneracy::Full);
        assert!((v.gradient[0] - 0.9375).abs() < 1e-15);
        // The t_2n component is negative: raising t_2n at fixed t_n spreads the roots.
        assert!((v.gradient[1] + 5.0 / 16.0).abs() < 1e-15);
    }

    /// Root sensitivities `∂μ/∂e` combined with `∂e/∂t` from Newton's identities.
    fn chain_rule_gradient(l: &EigenTriple, n: u64) -> [f64; 3] {
        let t = exact_power_sums(&l.0, n);
        let mu = l.0.map(|z| z.powu(n as u32));
        let de = [[1.0, 0.0, 0.0], [t[0], -0.5, 0.0], [(t[0] * t[0] - t[1]) / 2.0, -t[0] / 2.0, 1.0 / 3.0]];
        let mut g = [C64::new(0.0, 0.0); 3];
        for i in 0..3 {
            let dp: C64 = (0..3).filter(|&j| j != i).map(|j| mu[i] - mu[j]).product();
            let dmu_de = [mu[i] * mu[i] / dp, -mu[i] / dp, C64::new(1.0, 0.0) / dp];
            let dlam_dmu = l.0[i] / (mu[i] * n as f64);
            for (k, gk) in g.iter_mut().enumerate() {
                let dmu_dt: C64 = (0..3).map(|r| dmu_de[r] * de[r][k]).sum();
                *gk += dlam_dmu * dmu_dt;
            }
        }
        g.map(|z| z.re)
    }

    #[test]
    fn general_gradient_matches_chain_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let r = rng.random_range(0.9..1.0);
            let th = rng.random_range(0.1..3.0);
            let l = EigenTriple::new([c(rng.random_range(0.9..1.0), 0.0), C64::from_polar(r, th), C64::from_polar(r, -th)]);
            let n = rng.random_range(1..40);
            let v = variance_model(&l, n, 1.0);
            if v.regime == Degeneracy::General && !v.ill_conditioned {
                assert!(rel_err(v.gradient, chain_rule_gradient(&l, n)) < 1e-8);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let r = rng.random_range(0.9..1.0);
            let th = rng.random_range(0.2..1.4);
            let l = EigenTriple::new([c(rng.random_range(0.9..1.0), 0.0), C64::from_polar(r, th), C64::from_polar(r, -th)]);
            let n = [1, 2, 3, 5][rng.random_range(0..4)];
            let v = variance_model(&l, n, 1.0);
            assert!(rel_err(v.gradient, finite_difference_gradient(&l, n, 1e-6)) < 1e-4, "{l:?} n={n}");
        }
    }

    #[test]
    fn degenerate_limits_match_finite_differences() {
        // Real pair splitting, then a triple about to merge.
        for gap in [1e-3, 1e-8] {
            let l = EigenTriple::new([c(0.97, 0.0), c(0.99 + gap, 0.0), c(0.99, 0.0)]);
            let v = variance_model(&l, 3, 1.0);
            assert!(rel_err(v.gradient, finite_difference_gradient(&l, 3, 1e-6)) < 1e-4, "gap {gap}: {:?}", v.regime);
            let l = EigenTriple::new([c(0.99, 0.0), C64::new(0.99, gap), C64::new(0.99, -gap)]);
            let v = variance_model(&l, 2, 1.0);
            assert!(rel_err(v.gradient, finite_difference_gradient(&l, 2, 1e-6)) < 1e-4, "gap {gap}: {:?} {:?} {:?}", v.regime, v.gradient, finite_difference_gradient(&l, 2, 1e-6));
        }
        let l = EigenTriple::new([c(0.97, 0.0), c(0.99, 0.0), c(0.99, 0.0)]);
        assert_eq!(variance_model(&l, 4, 1.0).regime, Degeneracy::Pair);
    }

    #[test]
    fn nearly_full_triples_use_the_limit() {
        for gap in [1e-4, 1e-5, 3e-6] {
            let l = EigenTriple::new([c(0.97 + gap, 0.0), c(0.97, 0.0), c(0.97 - 0.3 * gap, 0.0)]);
            let v = variance_model(&l, 4, 1.0);
            assert_eq!(v.regime, Degeneracy::Full);
            assert!(!v.ill_conditioned);
            assert!(rel_err(v.gradient, finite_difference_gradient(&l, 4, 1e-9)) < 1e-4, "gap {gap}");
        }
    }

    #[test]
    fn decayed_powers_are_not_a_full_collision() {
        let l = EigenTriple::new([c(0.99378, 0.0), C64::from_polar(0.99345, PI - 3.7e-4), C64::from_polar(0.99345, 3.7e-4 - PI)]);
        for n in [1243, 1445] {
            let v = variance_model(&l, n, 1.0);
            assert_eq!(v.regime, Degeneracy::General);
            assert!(v.variance.is_finite());
        }
    }

    #[test]
    fn general_formula_continuous_into_pair_limit() {
        let a = c(0.97, 0.0);
        let cc = c(0.99, 0.0);
        let general = variance_model(&EigenTriple::new([a, cc + 1e-3, cc]), 5, 1.0);
        assert_eq!(general.regime, Degeneracy::General);
        let limit = pair_gradient(a, cc, 5.0).map(|z| z.re);
        assert!(rel_err(general.gradient, limit) < 1e-2);
    }

    #[test]
    fn optimal_n_invariant_to_var_t_scale() {
        let g = 1e-3;
        let l = EigenTriple::new([c(1.0 - g, 0.0), C64::from_polar(1.0 - g, 1.0), C64::from_polar(1.0 - g, -1.0)]);
        let s = build_schedule(1, g);
        let a = optimal_n(&l, 1e-4, &s);
        assert_eq!(a, optimal_n(&l, 7.0, &s));
        assert!((a as f64) * g > 0.1 && (a as f64) * g < 1.6, "{a}");
    }

    #[test]
    fn diagnostics_have_one_row_per_step() {
        let g = reference_gates()[0].clone();
        let mut ctx = GstContext::new(vec![g.clone()], Matrix4::identity(), 0.0, 0).unwrap();
        let est = estimate_trace(&mut ctx, &[1], &g.ideal_ptm, 1e-2, &TrackOptions::default()).unwrap();
        let rows = diagnostic_rows(&est, 1e-4);
        assert_eq!(rows.len(), est.steps.len());
        assert_eq!(rows.last().unwrap()[0] as u64, est.final_n());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn round_trip_from_truth(
            r0 in 0.9f64..1.0, r1 in 0.9f64..1.0, th in 0.0f64..PI, neg in any::<bool>(), ni in 0usize..4,
        ) {
            let n = [1u64, 5, 17, 101][ni];
            let real = if neg { -r0 } else { r0 };
            let truth = EigenTriple::new([c(real, 0.0), C64::from_polar(r1, th), C64::from_polar(r1, -th)]);
            let t = exact_power_sums(&truth.0, n);
            let mu = power_sums_to_candidates(t[0], t[1], t[2]);
            // Colliding powers have no unique preimage; those draws say nothing.
            prop_assume!(min_gap(&mu) > 1e-3);
            let mut st = TrackState::new(truth);
            track_step(&mut st, t, mu, n, &TrackOptions::default()).unwrap();
            prop_assert!(st.current.distance(&truth) < 1e-9, "{:?} vs {:?}", st.current, truth);
        }
    }
}

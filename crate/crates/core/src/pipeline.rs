//! The two-stage reconstruction end to end, plus simulated benchmark sets.

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gateset::{quadruples, reference_gates};
use crate::gauge::{distances, fit_gauge, DistanceRow, GaugeFit, SimilarityFit, SimilarityOptions};
use crate::noise::{log_uniform, noisy_gate_with, random_gauge_transform, CalibratedNoise};
use crate::nonunital::{gauge_align, measure_double_maps, reconstruct_nonunital, DoubleMapPlan, NonUnitalReconstruction, NonUnitalSolve};
use crate::oracle::{GstContext, MeasurementKind, Measurements, SequenceSpec};
use crate::ptm::{product, GateRecord, Ptm};
use crate::spectral::{schedule_for, TrackOptions};
use crate::unital::{iterate_refinement, reconstruct_unital, UnitalReconstruction};

#[derive(Clone, Debug)]
pub struct PipelineOptions {
    pub track: TrackOptions,
    pub similarity: SimilarityOptions,
    /// Relinearizations of the unital system after the first solve.
    pub unital_iterations: usize,
    pub nonunital: NonUnitalSolve,
    pub quadruples: Vec<[usize; 4]>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            track: TrackOptions::default(),
            similarity: SimilarityOptions::default(),
            unital_iterations: 0,
            nonunital: NonUnitalSolve::default(),
            quadruples: quadruples().to_vec(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    /// Reconstructed maps `M_jʳ`, index `j − 1`.
    pub gates: Vec<Ptm>,
    pub unital: UnitalReconstruction,
    pub plan: DoubleMapPlan,
    pub alignment: SimilarityFit,
    pub nonunital: NonUnitalReconstruction,
}

/// Runs both stages against any measurement source. `ideal` supplies the
/// ideal maps, `p_hints` the per-gate error-rate guesses used for sizing.
pub fn reconstruct<M: Measurements>(
    meas: &mut M,
    ideal: &[GateRecord],
    p_hints: &[f64],
    opts: &PipelineOptions,
) -> Result<Reconstruction> {
    let mut unital = reconstruct_unital(meas, ideal, &opts.quadruples, p_hints, &opts.track)?;
    for _ in 0..opts.unital_iterations {
        unital = iterate_refinement(&unital)?;
        if unital.diverged {
            break;
        }
    }
    let plan = DoubleMapPlan::from_hints(p_hints)?;
    let measured = measure_double_maps(meas, &plan)?;
    let alignment = gauge_align(&unital.blocks, &plan, &measured, &opts.similarity)?;
    let aligned: Vec<Vector3<f64>> = measured.iter().map(|m| alignment.b * m.nonunital()).collect();
    let nonunital = reconstruct_nonunital(&plan, &aligned, &unital.blocks, opts.nonunital)
        .map_err(|e| e.in_stage("non-unital solve", "all double maps"))?;
    let gates = unital.blocks.iter().zip(&nonunital.vectors).map(|(e, k)| Ptm::from_blocks(k, e)).collect();
    Ok(Reconstruction { gates, unital, plan, alignment, nonunital })
}

/// Every measurement [`reconstruct`] asks for, in query order.
pub fn required_measurements(
    ideal: &[GateRecord],
    p_hints: &[f64],
    opts: &PipelineOptions,
) -> Result<Vec<(MeasurementKind, SequenceSpec)>> {
    if p_hints.len() != ideal.len() {
        return Err(Error::Invalid(format!("{} error-rate hints for {} gates", p_hints.len(), ideal.len())));
    }
    let maps: Vec<Ptm> = ideal.iter().map(|g| g.ideal_ptm).collect();
    let mut out = Vec::new();
    for q in &opts.quadruples {
        let m = product(q.iter().map(|&g| &maps[g - 1]));
        let p: f64 = q.iter().map(|&g| p_hints[g - 1]).sum();
        let schedule = schedule_for(&m, p, &opts.track);
        let mut seen = std::collections::BTreeSet::new();
        for n in schedule.values {
            for l in [n, 2 * n, 3 * n] {
                if seen.insert(l) {
                    out.push((MeasurementKind::Trace, SequenceSpec::new(q.to_vec(), l)));
                }
            }
        }
    }
    for s in DoubleMapPlan::from_hints(p_hints)?.sequences() {
        out.push((MeasurementKind::Ptm, s));
    }
    Ok(out)
}

/// A simulated gate set with its hidden tomography frame.
#[derive(Clone, Debug)]
pub struct SimulatedSet {
    pub gates: Vec<GateRecord>,
    pub noise: Vec<CalibratedNoise>,
    pub gauge: CalibratedNoise,
    /// Log-uniform set-level error rate; each gate is drawn at `p_set · 2^u`, `u ∈ [−1, 1]`.
    pub p_set: f64,
}

impl SimulatedSet {
    pub fn error_rates(&self) -> Vec<f64> {
        self.gates.iter().map(|g| g.error_rate).collect()
    }

    pub fn noisy_maps(&self) -> Vec<Ptm> {
        self.gates.iter().map(|g| g.noisy_ptm).collect()
    }

    pub fn ideal_maps(&self) -> Vec<Ptm> {
        self.gates.iter().map(|g| g.ideal_ptm).collect()
    }

    pub fn context(&self, sigma: f64, oracle_seed: u64) -> Result<GstContext> {
        GstContext::new(self.gates.clone(), *self.gauge.channel.matrix(), sigma, oracle_seed)
    }
}

/// Draws the reference gates with noise, error rates clustered around a
/// log-uniform set-level rate in `[p_lo, p_hi]`.
pub fn simulate_gate_set(seed: u64, p_lo: f64, p_hi: f64) -> Result<SimulatedSet> {
    if !(p_lo > 0.0 && p_lo < p_hi && p_hi < 0.5) {
        return Err(Error::Invalid(format!("error-rate range [{p_lo}, {p_hi}] invalid")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p_set = log_uniform(&mut rng, p_lo, p_hi);
    let mut gates = Vec::new();
    let mut noise = Vec::new();
    for g in reference_gates() {
        let p = p_set * 2f64.powf(rng.random_range(-1.0..=1.0));
        let (noisy, n) = noisy_gate_with(&g, p, &mut rng).map_err(|e| e.in_stage("noise generation", format!("gate {}", g.id)))?;
        gates.push(noisy);
        noise.push(n);
    }
    let gauge = random_gauge_transform(&mut rng)?;
    Ok(SimulatedSet { gates, noise, gauge, p_set })
}

#[derive(Clone, Debug)]
pub struct BenchOutcome {
    pub rows: Vec<DistanceRow>,
    pub fit: GaugeFit,
    pub reconstruction: Reconstruction,
}

/// Reconstructs a simulated set with its true error rates as hints and
/// scores it against the truth.
pub fn benchmark_set(set: &SimulatedSet, sigma: f64, oracle_seed: u64, opts: &PipelineOptions) -> Result<BenchOutcome> {
    let mut ctx = set.context(sigma, oracle_seed)?;
    let reconstruction = reconstruct(&mut ctx, &set.gates, &set.error_rates(), opts)?;
    let truth = set.noisy_maps();
    let fit = fit_gauge(&reconstruction.gates, &truth, &opts.similarity)?;
    let rows = distances(&reconstruction.gates, &fit.transform, &truth, &set.ideal_maps())?;
    Ok(BenchOutcome { rows, fit, reconstruction })
}

//! Random Lindblad noise at a prescribed error rate, and random gauge frames.

use nalgebra::{Matrix2, Matrix3, Matrix4};
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::ptm::{error_rate, pauli, spectral_norm4, GateRecord, Ptm};

/// Single-qubit Lindblad generator: `H = Σ c_a σ_a` and a dissipator matrix `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct LindbladGenerator {
    pub hamiltonian: [f64; 3],
    pub dissipator: Matrix3<C64>,
}

#[derive(Clone, Copy, Debug)]
pub struct NoiseSpec {
    pub target_error_rate: f64,
    pub rng_seed: u64,
}

/// A noise channel `exp(G t*)` calibrated to a target error rate.
#[derive(Clone, Debug)]
pub struct CalibratedNoise {
    pub generator: LindbladGenerator,
    pub time: f64,
    pub target: f64,
    pub achieved: f64,
    pub channel: Ptm,
}

const GAUGE_ERROR_RATE: f64 = 0.1;
const MAX_DOUBLINGS: u32 = 20;

impl LindbladGenerator {
    pub fn zero() -> Self {
        LindbladGenerator { hamiltonian: [0.0; 3], dissipator: Matrix3::zeros() }
    }

    fn scaled(&self, s: f64) -> Self {
        LindbladGenerator {
            hamiltonian: self.hamiltonian.map(|c| c * s),
            dissipator: self.dissipator * C64::new(s, 0.0),
        }
    }

    /// Applies the Lindbladian to a 2×2 operator.
    pub fn apply(&self, rho: &Matrix2<C64>) -> Matrix2<C64> {
        let mut h = Matrix2::<C64>::zeros();
        for (a, &c) in self.hamiltonian.iter().enumerate() {
            h += pauli(a + 1) * C64::new(c, 0.0);
        }
        let mut out = (h * rho - rho * h) * C64::new(0.0, -1.0);
        for a in 0..3 {
            let sa = pauli(a + 1);
            for b in 0..3 {
                let w = self.dissipator[(a, b)];
                if w == C64::new(0.0, 0.0) {
                    continue;
                }
                let sb = pauli(b + 1);
                let ba = sb * sa;
                out += (sa * rho * sb - (ba * rho + rho * ba) * C64::new(0.5, 0.0)) * w;
            }
        }
        out
    }
}

/// Draws Gaussian Hamiltonian coefficients and a complex-Wishart dissipator,
/// then rescales both so the generator PTM has unit spectral norm.
pub fn random_generator<R: Rng + ?Sized>(rng: &mut R) -> LindbladGenerator {
    let hamiltonian = [0; 3].map(|_| rng.sample::<f64, _>(StandardNormal));
    let half = std::f64::consts::FRAC_1_SQRT_2;
    let g = Matrix3::<C64>::from_fn(|_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * half, im * half)
    });
    let raw = LindbladGenerator { hamiltonian, dissipator: g * g.adjoint() };
    let norm = spectral_norm4(&generator_ptm(&raw));
    raw.scaled(1.0 / norm)
}

/// PTM of the Lindbladian, entry `(σ, τ) = ½ Tr[σ L(τ)]`. Row 0 is zero.
pub fn generator_ptm(g: &LindbladGenerator) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    for tau in 0..4 {
        let image = g.apply(&pauli(tau));
        for sigma in 1..4 {
            m[(sigma, tau)] = 0.5 * (pauli(sigma) * image).trace().re;
        }
    }
    m
}

/// `exp(G t)` as a trace-preserving PTM.
pub fn evolve(generator: &Matrix4<f64>, t: f64) -> Ptm {
    let mut m = (generator * t).exp();
    m[(0, 0)] = 1.0;
    for c in 1..4 {
        m[(0, c)] = 0.0;
    }
    Ptm::from_matrix(m)
}

/// Finds `t*` such that `exp(G t*) · ideal` has the target error rate.
pub fn calibrate(generator: &LindbladGenerator, ideal: &Ptm, target: f64) -> Result<CalibratedNoise> {
    if !(target > 0.0 && target < 0.5) {
        return Err(Error::ErrorRateRange(target));
    }
    let gm = generator_ptm(generator);
    let rate = |t: f64| {
        let noisy = evolve(&gm, t).compose(ideal);
        error_rate(&noisy, ideal)
    };

    let mut hi = 1.0;
    let mut doublings = 0;
    while rate(hi) < target {
        if doublings == MAX_DOUBLINGS {
            return Err(Error::Calibration(format!(
                "error rate {:.3e} at t = {hi:.3e} never reaches {target:.3e}; hamiltonian {:?}, generator norm {:.3e}",
                rate(hi),
                generator.hamiltonian,
                spectral_norm4(&gm)
            )));
        }
        hi *= 2.0;
        doublings += 1;
    }
    // Move to the first dyadic bracket so the root found is the first crossing.
    while hi > f64::MIN_POSITIVE && rate(hi / 2.0) >= target {
        hi /= 2.0;
    }
    let mut lo = hi / 2.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if rate(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (p_lo, p_hi) = (rate(lo), rate(hi));
    let (time, achieved) = if (p_lo - target).abs() <= (p_hi - target).abs() { (lo, p_lo) } else { (hi, p_hi) };
    if (achieved - target).abs() > 1e-3 * target {
        return Err(Error::Calibration(format!(
            "bisection stalled at t = {time:.6e} with error rate {achieved:.6e} (target {target:.6e})"
        )));
    }
    Ok(CalibratedNoise {
        generator: generator.clone(),
        time,
        target,
        achieved,
        channel: evolve(&gm, time),
    })
}

/// Rebuilds a calibrated channel from stored generator and time.
pub fn replay(generator: &LindbladGenerator, time: f64) -> Ptm {
    evolve(&generator_ptm(generator), time)
}

/// Noisy version of an ideal gate at the target error rate.
pub fn noisy_gate_with<R: Rng + ?Sized>(
    ideal: &GateRecord,
    target: f64,
    rng: &mut R,
) -> Result<(GateRecord, CalibratedNoise)> {
    if !(target > 0.0 && target < 0.5) {
        return Err(Error::ErrorRateRange(target));
    }
    let generator = random_generator(rng);
    let noise = calibrate(&generator, &ideal.ideal_ptm, target)?;
    let noisy = noise.channel.compose(&ideal.ideal_ptm);
    Ok((ideal.clone().with_noisy(noisy), noise))
}

pub fn noisy_gate(ideal: &GateRecord, spec: &NoiseSpec) -> Result<(GateRecord, CalibratedNoise)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    noisy_gate_with(ideal, spec.target_error_rate, &mut rng)
}

/// Random frame `T = exp(G t)` at error rate 0.1 relative to the identity.
pub fn random_gauge_transform<R: Rng + ?Sized>(rng: &mut R) -> Result<CalibratedNoise> {
    let generator = random_generator(rng);
    calibrate(&generator, &Ptm::identity(), GAUGE_ERROR_RATE)
}

/// Log-uniform draw on `[lo, hi]`.
pub fn log_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.random();
    (lo.ln() + u * (hi.ln() - lo.ln())).exp()
}

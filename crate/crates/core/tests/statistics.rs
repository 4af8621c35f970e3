use nalgebra::Matrix4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tomolab_core::gateset::reference_gates;
use tomolab_core::noise::noisy_gate_with;
use tomolab_core::nonunital::{geometric_sum, largest_singular_triplet};
use tomolab_core::ptm::unital_eigenvalues;
use tomolab_core::spectral::{estimate_trace, variance_model, TrackOptions};
use tomolab_core::{GstContext, Measurements, SequenceSpec};

fn noisy_set(p: f64, seed: u64) -> Vec<tomolab_core::GateRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    reference_gates().iter().map(|g| noisy_gate_with(g, p, &mut rng).unwrap().0).collect()
}

#[test]
fn noisy_traces_stay_within_modelled_spread() {
    let p = 1e-3;
    let sigma = 0.01;
    let trials = 200;
    let mut inside = 0;
    for trial in 0..trials {
        let gates = noisy_set(p, 1000 + trial);
        let g = (trial % 7) as usize + 1;
        let rec = &gates[g - 1];
        let mut ctx = GstContext::new(gates.clone(), Matrix4::identity(), sigma, 5000 + trial).unwrap();
        let est = estimate_trace(&mut ctx, &[g], &rec.ideal_ptm, p, &TrackOptions::default()).unwrap();
        let truth = rec.noisy_ptm.trace();
        let model = variance_model(&unital_eigenvalues(&rec.noisy_ptm.unital()), est.final_n(), sigma * sigma);
        if (est.lambda - truth).abs() <= 10.0 * model.variance.sqrt() {
            inside += 1;
        }
    }
    assert!(inside as f64 >= 0.99 * trials as f64, "{inside} of {trials} within 10 sd");
}

#[test]
fn amplified_component_noise_scales_with_error_rate() {
    let p = 1e-3;
    let sigma = 0.01;
    let gates = noisy_set(p, 77);
    let g = 2;
    let m = gates[g - 1].noisy_ptm;
    let n = (1.0 / p).floor() as u64;
    let (lmax, u, _) = largest_singular_triplet(&geometric_sum(&m.unital(), n));
    let mut ctx = GstContext::new(gates.clone(), Matrix4::identity(), sigma, 3).unwrap();
    let spec = SequenceSpec::new(vec![g], n);
    let exact = u.dot(&m.power(n).nonunital()) / lmax;
    let draws = 2000;
    let mut sq = 0.0;
    for _ in 0..draws {
        let est = ctx.ptm(&spec).unwrap();
        let c = u.dot(&est.nonunital()) / lmax;
        sq += (c - exact).powi(2);
    }
    let sd = (sq / draws as f64).sqrt();
    let ratio = sd / (sigma * p);
    assert!((1.0 / 3.0..=3.0).contains(&ratio), "sd {sd:e}, ratio {ratio}");
}

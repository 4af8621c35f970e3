use tomolab_core::gauge::fit_scaling;
use tomolab_core::nonunital::NonUnitalSolve;
use tomolab_core::oracle::{parse_estimates, write_estimates, EstimateTable, Recorder};
use tomolab_core::pipeline::{benchmark_set, reconstruct, required_measurements, simulate_gate_set, PipelineOptions};
use tomolab_core::ptm::spectral_distance;

#[test]
fn noiseless_errors_shrink_quadratically() {
    let opts = PipelineOptions::default();
    let mut rows = Vec::new();
    for s in 0..6 {
        let set = simulate_gate_set(40 + s, 1e-6, 1e-3).unwrap();
        rows.extend(benchmark_set(&set, 0.0, s, &opts).unwrap().rows);
    }
    let fit = fit_scaling(&rows).unwrap();
    assert!((fit.slope - 2.0).abs() < 0.4, "{fit:?}");
}

#[test]
fn truncated_solve_leaks_the_frame_offset() {
    let set = simulate_gate_set(9, 1e-4, 1.0001e-4).unwrap();
    let projected = benchmark_set(&set, 0.0, 1, &PipelineOptions::default()).unwrap();
    let truncated = PipelineOptions { nonunital: NonUnitalSolve::Truncated, ..Default::default() };
    let truncated = benchmark_set(&set, 0.0, 1, &truncated).unwrap();
    let worst = |rows: &[tomolab_core::gauge::DistanceRow]| rows.iter().map(|r| r.d_r).fold(0.0, f64::max);
    assert!(worst(&projected.rows) * 10.0 < worst(&truncated.rows));
    assert_eq!(truncated.reconstruction.nonunital.spectrum, projected.reconstruction.nonunital.spectrum);
}

#[test]
fn noisy_reconstruction_beats_the_error_itself() {
    let opts = PipelineOptions::default();
    for s in 0..4 {
        let set = simulate_gate_set(60 + s, 1e-4, 1e-3).unwrap();
        let out = benchmark_set(&set, 0.01, 100 + s, &opts).unwrap();
        for r in out.rows.iter().filter(|r| r.d >= 1e-4) {
            assert!(r.d_r < r.d, "set {s}: {r:?}");
        }
    }
}

#[test]
fn estimate_file_round_trip_reproduces_reconstruction() {
    let set = simulate_gate_set(21, 1e-4, 1e-3).unwrap();
    let opts = PipelineOptions::default();
    let hints = set.error_rates();
    let mut rec = Recorder::new(set.context(0.01, 8).unwrap());
    let direct = reconstruct(&mut rec, &set.gates, &hints, &opts).unwrap();
    let (_, records) = rec.into_parts();

    let mut buf = Vec::new();
    write_estimates(&mut buf, &records).unwrap();
    let parsed = parse_estimates(std::str::from_utf8(&buf).unwrap()).unwrap();
    let table = EstimateTable::new(parsed);
    table.check_complete(&required_measurements(&set.gates, &hints, &opts).unwrap()).unwrap();
    let mut table = table;
    let replay = reconstruct(&mut table, &set.gates, &hints, &opts).unwrap();
    for (a, b) in direct.gates.iter().zip(&replay.gates) {
        assert!(spectral_distance(a, b) < 1e-12);
    }
}

#[test]
fn missing_estimates_are_listed() {
    let set = simulate_gate_set(22, 1e-4, 1e-3).unwrap();
    let opts = PipelineOptions::default();
    let hints = set.error_rates();
    let mut rec = Recorder::new(set.context(0.0, 1).unwrap());
    reconstruct(&mut rec, &set.gates, &hints, &opts).unwrap();
    let (_, mut records) = rec.into_parts();
    let dropped = records.remove(3);
    let table = EstimateTable::new(records);
    let err = table.check_complete(&required_measurements(&set.gates, &hints, &opts).unwrap()).unwrap_err();
    assert!(err.to_string().contains(&dropped.spec().to_string()), "{err}");
}

#[test]
fn pair_split_by_noise_near_minus_one_is_skipped() {
    use tomolab_core::seed::derive;
    let set = simulate_gate_set(derive(2, &[2, 1, 6]), 1e-6, 1e-3).unwrap();
    benchmark_set(&set, 0.01, derive(2, &[3, 1, 6]), &PipelineOptions::default()).unwrap();
}

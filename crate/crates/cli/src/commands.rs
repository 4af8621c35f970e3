//! The subcommands. Each one builds a [`Bundle`] in memory; writing it out is
//! left to the caller.

use std::path::{Path, PathBuf};

use nalgebra::Matrix4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use tomolab_core::gateset::{reference_gates, variance_study_gates};
use tomolab_core::gauge::{distances, fit_gauge, fit_scaling, spearman, DistanceRow};
use tomolab_core::noise::{log_uniform, noisy_gate_with};
use tomolab_core::nonunital::{geometric_sum, largest_singular_triplet};
use tomolab_core::oracle::{ingest_estimates, write_estimates, EstimateTable, Recorder};
use tomolab_core::pipeline::{benchmark_set, reconstruct as run_pipeline, required_measurements, simulate_gate_set, BenchOutcome, Reconstruction};
use tomolab_core::ptm::{unital_eigenvalues, EigenTriple, GateRecord, Ptm};
use tomolab_core::seed::derive;
use tomolab_core::spectral::{build_schedule, optimal_n, solve_trace_map, exact_power_sums, variance_model};
use tomolab_core::GstContext;

use crate::config::{ExperimentConfig, BENCHMARK_P_RANGE, FIGURE_P_RANGE};
use crate::error::{CliError, Result};
use crate::output::{num, parse_csv, Bundle, Table};

// Stream tags for seed derivation.
const GEN: u64 = 1;
const BENCH: u64 = 2;
const ORACLE: u64 = 3;
const VARIANCE: u64 = 4;
const SINGULAR: u64 = 5;
const MONTE_CARLO: u64 = 6;

const PTM_COLUMNS: [&str; 16] = [
    "m00", "m01", "m02", "m03", "m10", "m11", "m12", "m13", "m20", "m21", "m22", "m23", "m30", "m31", "m32", "m33",
];

/// Runs `f` on a pool capped by the configured worker count.
pub fn in_pool<T: Send>(cfg: &ExperimentConfig, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.worker_threads()? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Failed(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn ptm_cells(m: &Ptm) -> Vec<String> {
    m.to_row_vec().into_iter().map(num).collect()
}

fn columns_with_ptm(lead: &[&'static str]) -> Vec<&'static str> {
    lead.iter().copied().chain(PTM_COLUMNS).collect()
}

/// Roughly log-spaced integers in `[1, max]`, snapped to `n ≡ 1 (mod stride)`.
pub fn log_grid(max: u64, points: usize, stride: u64) -> Vec<u64> {
    let top = (max.max(1) as f64).ln();
    let mut out: Vec<u64> = (0..points)
        .map(|i| {
            let x = (top * i as f64 / (points - 1).max(1) as f64).exp().round() as u64;
            stride * ((x.max(1) - 1 + stride / 2) / stride) + 1
        })
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

// ---------------------------------------------------------------- gen-gateset

/// One gate set as stored in a gate-set file.
#[derive(Clone, Debug)]
pub struct LoadedSet {
    pub set: usize,
    pub set_seed: u64,
    pub p_set: f64,
    pub gates: Vec<GateRecord>,
    pub gauge: Matrix4<f64>,
}

#[derive(Clone, Debug)]
pub struct GateSetFile {
    pub p_range: (f64, f64),
    pub sets: Vec<LoadedSet>,
}

impl LoadedSet {
    /// True when the stored maps match a fresh simulation from the set seed.
    pub fn regenerates(&self, p_range: (f64, f64)) -> Result<bool> {
        let sim = simulate_gate_set(self.set_seed, p_range.0, p_range.1)?;
        Ok(sim.p_set == self.p_set
            && sim.gauge.channel.matrix() == &self.gauge
            && sim.gates.iter().zip(&self.gates).all(|(a, b)| a.noisy_ptm == b.noisy_ptm))
    }
}

pub fn gen_gateset(cfg: &ExperimentConfig) -> Result<Bundle> {
    let range = cfg.p_range(BENCHMARK_P_RANGE)?;
    let sets = cfg.num_gate_sets.unwrap_or(1);
    let sims = in_pool(cfg, || {
        (0..sets)
            .into_par_iter()
            .map(|s| {
                let seed = derive(cfg.master_seed, &[GEN, s as u64]);
                simulate_gate_set(seed, range.0, range.1).map(|sim| (seed, sim)).map_err(|e| e.in_stage("gate-set generation", format!("set {s}")))
            })
            .collect::<Vec<_>>()
    })?;
    let mut table = Table::new("gateset.csv", &columns_with_ptm(&["set", "set_seed", "p_set", "gate", "p"]));
    for (s, r) in sims.into_iter().enumerate() {
        let (seed, sim) = r?;
        let lead = |gate: usize, p: f64| vec![s.to_string(), seed.to_string(), num(sim.p_set), gate.to_string(), num(p)];
        let mut row = lead(0, sim.gauge.achieved);
        row.extend(ptm_cells(&sim.gauge.channel));
        table.push(row);
        for g in &sim.gates {
            let mut row = lead(g.id, g.error_rate);
            row.extend(ptm_cells(&g.noisy_ptm));
            table.push(row);
        }
    }
    let mut b = Bundle::new("gen-gateset", cfg)
        .with_meta("range_min", num(range.0))
        .with_meta("range_max", num(range.1));
    b.tables.push(table);
    Ok(b)
}

/// Parses a gate-set file; gate 0 of each set is the tomography frame.
pub fn load_gateset(text: &str) -> Result<GateSetFile> {
    let csv = parse_csv(text)?;
    let col = |name: &str| {
        csv.columns.iter().position(|c| c == name).ok_or_else(|| CliError::Failed(format!("gate-set file lacks column {name}")))
    };
    let (c_set, c_seed, c_pset, c_gate) = (col("set")?, col("set_seed")?, col("p_set")?, col("gate")?);
    let c_m0 = col("m00")?;
    let range_of = |k: &str| -> Result<f64> {
        let v = csv.meta(k).ok_or_else(|| CliError::Failed(format!("gate-set file lacks metadata {k}")))?;
        v.parse().map_err(|e| CliError::Failed(format!("metadata {k}: {e}")))
    };
    let p_range = (range_of("range_min")?, range_of("range_max")?);
    let reference = reference_gates();
    let bad = |line: usize, e: String| CliError::Failed(format!("gate-set row {line}: {e}"));
    let mut sets: Vec<LoadedSet> = Vec::new();
    for (i, row) in csv.rows.iter().enumerate() {
        let set: usize = row[c_set].parse().map_err(|e| bad(i + 1, format!("{e}")))?;
        let gate: usize = row[c_gate].parse().map_err(|e| bad(i + 1, format!("{e}")))?;
        let vals = row[c_m0..c_m0 + 16].iter().map(|v| v.parse::<f64>()).collect::<std::result::Result<Vec<_>, _>>().map_err(|e| bad(i + 1, format!("{e}")))?;
        let m = Ptm::from_row_slice(&vals);
        if sets.last().map(|s| s.set) != Some(set) {
            sets.push(LoadedSet {
                set,
                set_seed: row[c_seed].parse().map_err(|e| bad(i + 1, format!("{e}")))?,
                p_set: row[c_pset].parse().map_err(|e| bad(i + 1, format!("{e}")))?,
                gates: Vec::new(),
                gauge: Matrix4::identity(),
            });
        }
        let cur = sets.last_mut().unwrap();
        match gate {
            0 => cur.gauge = *m.matrix(),
            g if g == cur.gates.len() + 1 && g <= reference.len() => cur.gates.push(reference[g - 1].clone().with_noisy(m)),
            g => return Err(bad(i + 1, format!("gate {g} out of order in set {set}"))),
        }
    }
    if let Some(s) = sets.iter().find(|s| s.gates.len() != reference.len()) {
        return Err(CliError::Failed(format!("set {} has {} gates, expected {}", s.set, s.gates.len(), reference.len())));
    }
    Ok(GateSetFile { p_range, sets })
}

// ------------------------------------------------------------- trace-variance

#[derive(Clone, Debug)]
pub struct VarianceTrial {
    pub gate: &'static str,
    pub replica: usize,
    pub p: f64,
    pub eigenvalues: EigenTriple,
    pub n_opt: u64,
    /// Modelled `Var(Λ)` at `n_opt`.
    pub var_opt: f64,
    /// Sample variance of `Λ` at `n_opt` under Gaussian trace noise.
    pub mc_var: f64,
    /// `(n, Var(Λ))` along the grid.
    pub curve: Vec<(u64, f64)>,
}

/// Random noisy versions of I, Z and S; replica `r` of every gate shares one
/// error rate so the gates can be compared at matched `p`.
pub fn variance_study(cfg: &ExperimentConfig, p_range: (f64, f64), replicas: usize) -> Result<Vec<VarianceTrial>> {
    let gates = variance_study_gates();
    let var_t = cfg.sigma * cfg.sigma;
    let jobs: Vec<(usize, usize)> = (0..gates.len()).flat_map(|g| (0..replicas).map(move |r| (g, r))).collect();
    let out = in_pool(cfg, || {
        jobs.par_iter()
            .map(|&(gi, r)| -> Result<VarianceTrial> {
                let (name, rec) = &gates[gi];
                let p = log_uniform(&mut ChaCha8Rng::seed_from_u64(derive(cfg.master_seed, &[VARIANCE, 0, r as u64])), p_range.0, p_range.1);
                let mut rng = ChaCha8Rng::seed_from_u64(derive(cfg.master_seed, &[VARIANCE, 1 + gi as u64, r as u64]));
                let (noisy, _) = noisy_gate_with(rec, p, &mut rng).map_err(|e| e.in_stage("noise generation", format!("{name} replica {r}")))?;
                let l = unital_eigenvalues(&noisy.noisy_ptm.unital());
                let n_opt = optimal_n(&l, 1.0, &build_schedule(rec.period, p));
                // Off the period grid the powers of distinct eigenvalues coincide.
                let curve = log_grid((4.0 / p).ceil() as u64, 48, rec.period)
                    .into_iter()
                    .map(|n| (n, variance_model(&l, n, var_t).variance))
                    .collect();
                let mc_var = monte_carlo_variance(&l, n_opt, cfg.sigma, cfg.mc_samples, derive(cfg.master_seed, &[MONTE_CARLO, gi as u64, r as u64]));
                Ok(VarianceTrial {
                    gate: name,
                    replica: r,
                    p,
                    eigenvalues: l,
                    n_opt,
                    var_opt: variance_model(&l, n_opt, var_t).variance,
                    mc_var,
                    curve,
                })
            })
            .collect::<Vec<_>>()
    })?;
    out.into_iter().collect()
}

/// Sample variance of the trace-map output with i.i.d. `N(0, σ²)` added to
/// the three exact power sums.
pub fn monte_carlo_variance(l: &EigenTriple, n: u64, sigma: f64, samples: usize, seed: u64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exact = exact_power_sums(&l.0, n);
    let draws: Vec<f64> = (0..samples)
        .map(|_| solve_trace_map(l, n, exact.map(|t| t + normal.sample(&mut rng))))
        .collect();
    let mean = draws.iter().sum::<f64>() / samples as f64;
    draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (samples - 1) as f64
}

pub fn trace_variance(cfg: &ExperimentConfig) -> Result<Bundle> {
    let range = cfg.p_range(FIGURE_P_RANGE)?;
    let trials = variance_study(cfg, range, cfg.replicas.unwrap_or(20))?;
    let mut curve = Table::new("trace_variance.csv", &["gate", "replica", "p", "n", "variance", "n_opt"]);
    let mut summary = Table::new(
        "trace_variance_opt.csv",
        &["gate", "replica", "p", "n_opt", "n_opt_p", "variance_opt", "mc_variance", "mc_ratio"],
    );
    for t in &trials {
        for &(n, v) in &t.curve {
            curve.push(vec![t.gate.into(), t.replica.to_string(), num(t.p), n.to_string(), num(v), t.n_opt.to_string()]);
        }
        let ratio = if t.var_opt > 0.0 { t.mc_var / t.var_opt } else { f64::NAN };
        summary.push(vec![
            t.gate.into(),
            t.replica.to_string(),
            num(t.p),
            t.n_opt.to_string(),
            num(t.n_opt as f64 * t.p),
            num(t.var_opt),
            num(t.mc_var),
            num(ratio),
        ]);
    }
    let mut b = Bundle::new("trace-variance", cfg);
    b.tables.push(curve);
    b.tables.push(summary);
    Ok(b)
}

// ------------------------------------------------------------ singular-values

#[derive(Clone, Debug)]
pub struct SingularTrial {
    pub gate: usize,
    pub replica: usize,
    pub p: f64,
    /// `(n, λ_max)` along the grid, including `n = ⌊4/p⌋`.
    pub curve: Vec<(u64, f64)>,
    pub n_saturated: u64,
    pub lambda_saturated: f64,
}

/// Largest singular value of `Σ_{q<n} E^q` for random noisy reference gates.
pub fn singular_study(cfg: &ExperimentConfig, p_range: (f64, f64), replicas: usize) -> Result<Vec<SingularTrial>> {
    let gates = reference_gates();
    let out = in_pool(cfg, || {
        (0..replicas)
            .into_par_iter()
            .map(|r| -> Result<SingularTrial> {
                let rec = &gates[r % gates.len()];
                let mut rng = ChaCha8Rng::seed_from_u64(derive(cfg.master_seed, &[SINGULAR, r as u64]));
                let p = log_uniform(&mut rng, p_range.0, p_range.1);
                let (noisy, _) = noisy_gate_with(rec, p, &mut rng).map_err(|e| e.in_stage("noise generation", format!("gate {} replica {r}", rec.id)))?;
                let e = noisy.noisy_ptm.unital();
                let n_sat = (4.0 / p).floor() as u64;
                let mut ns = log_grid((64.0 / p).ceil() as u64, 40, 1);
                ns.push(n_sat);
                ns.sort_unstable();
                ns.dedup();
                let curve: Vec<(u64, f64)> = ns.into_iter().map(|n| (n, largest_singular_triplet(&geometric_sum(&e, n)).0)).collect();
                let lambda_saturated = curve.iter().find(|c| c.0 == n_sat).unwrap().1;
                Ok(SingularTrial { gate: rec.id, replica: r, p, curve, n_saturated: n_sat, lambda_saturated })
            })
            .collect::<Vec<_>>()
    })?;
    out.into_iter().collect()
}

pub fn singular_values(cfg: &ExperimentConfig) -> Result<Bundle> {
    let range = cfg.p_range(FIGURE_P_RANGE)?;
    let trials = singular_study(cfg, range, cfg.replicas.unwrap_or(30))?;
    let mut t = Table::new("singular_values.csv", &["gate", "replica", "p", "n", "n_p", "lambda_max", "lambda_max_p"]);
    for tr in &trials {
        for &(n, l) in &tr.curve {
            t.push(vec![
                tr.gate.to_string(),
                tr.replica.to_string(),
                num(tr.p),
                n.to_string(),
                num(n as f64 * tr.p),
                num(l),
                num(l * tr.p),
            ]);
        }
    }
    let mut b = Bundle::new("singular-values", cfg);
    b.tables.push(t);
    Ok(b)
}

// ---------------------------------------------------------------- reconstruct

#[derive(Clone, Debug)]
pub enum ReconstructInput {
    /// Set `set` of a gate-set file; the oracle is simulated from it.
    GateSet { path: PathBuf, set: usize },
    /// An estimates file; `p_hints` must be configured.
    Estimates { path: PathBuf },
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn reconstruction_tables(rec: &Reconstruction) -> Vec<Table> {
    let mut gates = Table::new("reconstruction.csv", &columns_with_ptm(&["gate"]));
    for (j, m) in rec.gates.iter().enumerate() {
        let mut row = vec![(j + 1).to_string()];
        row.extend(ptm_cells(m));
        gates.push(row);
    }
    let mut traces = Table::new("quadruple_traces.csv", &["quadruple", "lambda"]);
    for (q, l) in rec.unital.quadruples.iter().zip(&rec.unital.traces) {
        traces.push(vec![q.iter().map(|g| g.to_string()).collect::<Vec<_>>().join("-"), num(*l)]);
    }
    let mut diag = Table::new("diagnostics.csv", &["quantity", "index", "value"]);
    let mut put = |q: &str, i: usize, v: f64| diag.push(vec![q.into(), i.to_string(), num(v)]);
    put("unital_rank", 0, rec.unital.solution.rank as f64);
    put("unital_trace_residual", 0, rec.unital.trace_residual());
    put("unital_iterations", 0, rec.unital.iterations as f64);
    for (i, s) in rec.unital.solution.singular_values.iter().enumerate() {
        put("unital_singular_value", i, *s);
    }
    put("alignment_rank", 0, rec.alignment.rank as f64);
    put("alignment_residual", 0, rec.alignment.residual);
    for (i, s) in rec.alignment.singular_values.iter().enumerate() {
        put("alignment_singular_value", i, *s);
    }
    put("nonunital_separation", 0, rec.nonunital.separation);
    for (i, s) in rec.nonunital.spectrum.iter().enumerate() {
        put("nonunital_singular_value", i, *s);
    }
    for (i, p) in rec.nonunital.pairs.iter().enumerate() {
        put("pair_repetitions", i, p.n as f64);
        put("pair_lambda_max", i, p.lambda_max);
    }
    vec![gates, traces, diag]
}

fn distance_table(rows: &[DistanceRow], p: &[f64]) -> Table {
    let mut t = Table::new("distances.csv", &["gate", "p", "d", "d_r", "ratio"]);
    for (r, p) in rows.iter().zip(p) {
        t.push(vec![r.gate_id.to_string(), num(*p), num(r.d), num(r.d_r), num(r.d_r / r.d)]);
    }
    t
}

pub fn reconstruct(cfg: &ExperimentConfig, input: &ReconstructInput, emit_estimates: bool) -> Result<Bundle> {
    let opts = cfg.pipeline_options();
    let mut b = Bundle::new("reconstruct", cfg);
    let records = match input {
        ReconstructInput::GateSet { path, set } => {
            let file = load_gateset(&read(path)?)?;
            let loaded = file
                .sets
                .iter()
                .find(|s| s.set == *set)
                .ok_or_else(|| CliError::Config(format!("{} has no set {set}", path.display())))?;
            let truth_p: Vec<f64> = loaded.gates.iter().map(|g| g.error_rate).collect();
            let hints = cfg.p_hints.clone().unwrap_or_else(|| truth_p.clone());
            let ctx = GstContext::new(loaded.gates.clone(), loaded.gauge, cfg.sigma, derive(cfg.master_seed, &[ORACLE, *set as u64]))?;
            let mut rec = Recorder::new(ctx);
            let out = run_pipeline(&mut rec, &loaded.gates, &hints, &opts)?;
            let truth: Vec<Ptm> = loaded.gates.iter().map(|g| g.noisy_ptm).collect();
            let ideal: Vec<Ptm> = loaded.gates.iter().map(|g| g.ideal_ptm).collect();
            let fit = fit_gauge(&out.gates, &truth, &opts.similarity)?;
            let rows = distances(&out.gates, &fit.transform, &truth, &ideal)?;
            b.tables.extend(reconstruction_tables(&out));
            b.tables.push(distance_table(&rows, &truth_p));
            b = b.with_meta("set", set.to_string()).with_meta("set_seed", loaded.set_seed.to_string());
            rec.into_parts().1
        }
        ReconstructInput::Estimates { path } => {
            let hints = cfg.p_hints.clone().ok_or_else(|| CliError::Config("estimates input needs p_hints".into()))?;
            let ideal = reference_gates();
            if hints.len() != ideal.len() {
                return Err(CliError::Config(format!("p_hints has {} entries, expected {}", hints.len(), ideal.len())));
            }
            let table = EstimateTable::new(ingest_estimates(path)?);
            table.check_complete(&required_measurements(&ideal, &hints, &opts)?)?;
            let mut rec = Recorder::new(table);
            let out = run_pipeline(&mut rec, &ideal, &hints, &opts)?;
            b.tables.extend(reconstruction_tables(&out));
            rec.into_parts().1
        }
    };
    if emit_estimates {
        let mut buf = Vec::new();
        write_estimates(&mut buf, &records).expect("writing to memory");
        b.extras.push(("estimates.txt".into(), String::from_utf8(buf).expect("estimates are ASCII")));
    }
    Ok(b)
}

// ------------------------------------------------------------------ benchmark

#[derive(Clone, Debug)]
pub struct SetRun {
    pub sigma: f64,
    pub set: usize,
    pub set_seed: u64,
    pub p_set: f64,
    pub error_rates: Vec<f64>,
    pub outcome: std::result::Result<BenchOutcome, String>,
}

/// Noise levels the benchmark sweeps: noiseless, then the configured one.
pub fn benchmark_sigmas(cfg: &ExperimentConfig) -> Vec<f64> {
    if cfg.sigma == 0.0 {
        vec![0.0]
    } else {
        vec![0.0, cfg.sigma]
    }
}

/// Independent gate sets per noise level, reconstructed and scored in parallel.
pub fn benchmark_runs(cfg: &ExperimentConfig) -> Result<Vec<SetRun>> {
    let range = cfg.p_range(BENCHMARK_P_RANGE)?;
    let sets = cfg.num_gate_sets.unwrap_or(15);
    let opts = cfg.pipeline_options();
    let jobs: Vec<(usize, f64, usize)> =
        benchmark_sigmas(cfg).into_iter().enumerate().flat_map(|(k, s)| (0..sets).map(move |i| (k, s, i))).collect();
    in_pool(cfg, || {
        jobs.par_iter()
            .map(|&(k, sigma, s)| {
                let set_seed = derive(cfg.master_seed, &[BENCH, k as u64, s as u64]);
                match simulate_gate_set(set_seed, range.0, range.1) {
                    Ok(sim) => {
                        let outcome = benchmark_set(&sim, sigma, derive(cfg.master_seed, &[ORACLE, k as u64, s as u64]), &opts)
                            .map_err(|e| e.to_string());
                        SetRun { sigma, set: s, set_seed, p_set: sim.p_set, error_rates: sim.error_rates(), outcome }
                    }
                    Err(e) => SetRun { sigma, set: s, set_seed, p_set: f64::NAN, error_rates: Vec::new(), outcome: Err(e.to_string()) },
                }
            })
            .collect()
    })
}

/// The straight lines the scaling fits are compared against.
pub fn reference_line(sigma: f64) -> Option<(f64, f64)> {
    if sigma == 0.0 {
        Some((2.0, 0.1))
    } else if sigma == 0.01 {
        Some((1.2, -1.2))
    } else {
        None
    }
}

#[derive(Clone, Debug)]
pub struct SigmaSummary {
    pub sigma: f64,
    pub rows: Vec<DistanceRow>,
    pub slope: f64,
    pub intercept: f64,
    /// Spearman correlation of `Dʳ/D` against `D`.
    pub spearman: f64,
    pub sets_ok: usize,
    pub sets_failed: usize,
}

pub fn summarize(runs: &[SetRun], sigma: f64) -> SigmaSummary {
    let mine: Vec<&SetRun> = runs.iter().filter(|r| r.sigma == sigma).collect();
    let rows: Vec<DistanceRow> = mine.iter().filter_map(|r| r.outcome.as_ref().ok()).flat_map(|o| o.rows.iter().copied()).collect();
    let (slope, intercept) = fit_scaling(&rows).map(|f| (f.slope, f.intercept)).unwrap_or((f64::NAN, f64::NAN));
    let d: Vec<f64> = rows.iter().map(|r| r.d).collect();
    let ratio: Vec<f64> = rows.iter().map(|r| r.d_r / r.d).collect();
    let sets_ok = mine.iter().filter(|r| r.outcome.is_ok()).count();
    SigmaSummary {
        sigma,
        spearman: if rows.len() > 2 { spearman(&d, &ratio) } else { f64::NAN },
        rows,
        slope,
        intercept,
        sets_ok,
        sets_failed: mine.len() - sets_ok,
    }
}

pub fn benchmark(cfg: &ExperimentConfig) -> Result<Bundle> {
    let runs = benchmark_runs(cfg)?;
    let mut points = Table::new("benchmark.csv", &["sigma", "set", "set_seed", "p_set", "gate", "p", "d", "d_r", "ratio"]);
    let mut failures = Table::new("benchmark_failures.csv", &["sigma", "set", "set_seed", "error"]);
    let mut b = Bundle::new("benchmark", cfg);
    for r in &runs {
        match &r.outcome {
            Ok(o) => {
                for (row, p) in o.rows.iter().zip(&r.error_rates) {
                    points.push(vec![
                        num(r.sigma),
                        r.set.to_string(),
                        r.set_seed.to_string(),
                        num(r.p_set),
                        row.gate_id.to_string(),
                        num(*p),
                        num(row.d),
                        num(row.d_r),
                        num(row.d_r / row.d),
                    ]);
                }
            }
            Err(e) => {
                let msg = e.replace(['\n', ','], " ");
                failures.push(vec![num(r.sigma), r.set.to_string(), r.set_seed.to_string(), msg.clone()]);
                b.failures.push(format!("sigma {} set {}: {msg}", r.sigma, r.set));
            }
        }
    }
    let mut fits = Table::new(
        "benchmark_fit.csv",
        &["sigma", "points", "slope", "intercept", "spearman_ratio_vs_d", "reference_slope", "reference_intercept", "sets_ok", "sets_failed"],
    );
    for sigma in benchmark_sigmas(cfg) {
        let s = summarize(&runs, sigma);
        let (rs, ri) = reference_line(sigma).map(|(a, c)| (num(a), num(c))).unwrap_or_default();
        fits.push(vec![
            num(sigma),
            s.rows.len().to_string(),
            num(s.slope),
            num(s.intercept),
            num(s.spearman),
            rs,
            ri,
            s.sets_ok.to_string(),
            s.sets_failed.to_string(),
        ]);
    }
    b.tables.extend([points, fits, failures]);
    Ok(b)
}

//! Simulated gate-set-tomography measurements and externally supplied estimates.
//!
//! The oracle returns `Tr(M_seqⁿ) + ζ` for trace queries and
//! `T · M_seqⁿ · T⁻¹ + ζ` for matrix queries, with `T` a hidden frame shared by
//! every sequence and `ζ` Gaussian sampling noise of standard deviation σ.
//!
//! # Estimate file format
//!
//! One record per line, `#` starts a comment:
//!
//! ```text
//! TRACE <gate ids...> <n> <value>
//! PTM   <gate ids...> <n> <v00> <v01> ... <v33>
//! ```
//!
//! Gate ids are 1-based, `n` is the repetition count and PTM values are row-major.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::io::Write;
use std::path::Path;

use nalgebra::Matrix4;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::ptm::{product, GateRecord, Ptm};

/// A gate sequence `(M_{g1} M_{g2} ...)ⁿ`, gate ids 1-based.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SequenceSpec {
    pub gate_ids: Vec<usize>,
    pub repetitions: u64,
}

impl SequenceSpec {
    pub fn new(gate_ids: Vec<usize>, repetitions: u64) -> Self {
        SequenceSpec { gate_ids, repetitions }
    }

    pub fn with_repetitions(&self, n: u64) -> Self {
        SequenceSpec { gate_ids: self.gate_ids.clone(), repetitions: n }
    }

    pub fn validate(&self, num_gates: usize) -> Result<()> {
        if self.gate_ids.is_empty() {
            return Err(Error::InvalidSequence("empty gate list".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidSequence(format!("{self}: zero repetitions")));
        }
        if let Some(g) = self.gate_ids.iter().find(|&&g| g == 0 || g > num_gates) {
            return Err(Error::InvalidSequence(format!("{self}: gate id {g} outside 1..={num_gates}")));
        }
        Ok(())
    }

    /// Single-application product of the given maps.
    pub fn base_map(&self, maps: &[Ptm]) -> Ptm {
        product(self.gate_ids.iter().map(|&g| &maps[g - 1]))
    }
}

impl fmt::Display for SequenceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<String> = self.gate_ids.iter().map(|g| g.to_string()).collect();
        write!(f, "({})^{}", ids.join(","), self.repetitions)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MeasurementKind {
    Trace,
    Ptm,
}

/// Source of trace and matrix estimates for gate sequences.
pub trait Measurements {
    fn trace(&mut self, seq: &SequenceSpec) -> Result<f64>;
    fn ptm(&mut self, seq: &SequenceSpec) -> Result<Ptm>;
}

impl<M: Measurements + ?Sized> Measurements for &mut M {
    fn trace(&mut self, seq: &SequenceSpec) -> Result<f64> {
        (**self).trace(seq)
    }
    fn ptm(&mut self, seq: &SequenceSpec) -> Result<Ptm> {
        (**self).ptm(seq)
    }
}

/// Hidden truth behind the simulated measurements.
#[derive(Clone, Debug)]
pub struct GstContext {
    gates: Vec<GateRecord>,
    noisy: Vec<Ptm>,
    gauge: Matrix4<f64>,
    gauge_inv: Matrix4<f64>,
    sigma: f64,
    rng: ChaCha8Rng,
}

impl GstContext {
    pub fn new(gates: Vec<GateRecord>, gauge: Matrix4<f64>, sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(Error::Invalid(format!("sigma must be non-negative, got {sigma}")));
        }
        if gauge[(0, 0)] != 1.0 || (1..4).any(|c| gauge[(0, c)] != 0.0) {
            return Err(Error::Invalid("gauge transform must have first row (1, 0, 0, 0)".into()));
        }
        let gauge_inv = gauge
            .try_inverse()
            .ok_or_else(|| Error::Invalid("gauge transform is singular".into()))?;
        let noisy = gates.iter().map(|g| g.noisy_ptm).collect();
        Ok(GstContext { gates, noisy, gauge, gauge_inv, sigma, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn gates(&self) -> &[GateRecord] {
        &self.gates
    }

    pub fn gauge(&self) -> &Matrix4<f64> {
        &self.gauge
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Noiseless `M_seqⁿ` in the true frame.
    pub fn true_map(&self, seq: &SequenceSpec) -> Result<Ptm> {
        seq.validate(self.gates.len())?;
        Ok(seq.base_map(&self.noisy).power(seq.repetitions))
    }

    fn zeta(&mut self) -> f64 {
        if self.sigma == 0.0 {
            0.0
        } else {
            self.sigma * self.rng.sample::<f64, _>(StandardNormal)
        }
    }
}

impl Measurements for GstContext {
    fn trace(&mut self, seq: &SequenceSpec) -> Result<f64> {
        let m = self.true_map(seq)?;
        Ok(m.trace() + self.zeta())
    }

    fn ptm(&mut self, seq: &SequenceSpec) -> Result<Ptm> {
        let m = self.true_map(seq)?;
        let mut est = *m.conjugate(&self.gauge, &self.gauge_inv).matrix();
        // Row 0 stays exact.
        est[(0, 0)] = 1.0;
        for c in 1..4 {
            est[(0, c)] = 0.0;
        }
        for r in 1..4 {
            for c in 0..4 {
                est[(r, c)] += self.zeta();
            }
        }
        Ok(Ptm::from_matrix(est))
    }
}

/// One line of an estimate file.
#[derive(Clone, Debug, PartialEq)]
pub enum EstimateRecord {
    Trace(SequenceSpec, f64),
    Ptm(SequenceSpec, Ptm),
}

impl EstimateRecord {
    pub fn spec(&self) -> &SequenceSpec {
        match self {
            EstimateRecord::Trace(s, _) | EstimateRecord::Ptm(s, _) => s,
        }
    }

    pub fn kind(&self) -> MeasurementKind {
        match self {
            EstimateRecord::Trace(..) => MeasurementKind::Trace,
            EstimateRecord::Ptm(..) => MeasurementKind::Ptm,
        }
    }
}

impl fmt::Display for EstimateRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (tag, spec) = match self {
            EstimateRecord::Trace(s, _) => ("TRACE", s),
            EstimateRecord::Ptm(s, _) => ("PTM", s),
        };
        write!(f, "{tag}")?;
        for g in &spec.gate_ids {
            write!(f, " {g}")?;
        }
        write!(f, " {}", spec.repetitions)?;
        match self {
            EstimateRecord::Trace(_, v) => write!(f, " {v}"),
            EstimateRecord::Ptm(_, m) => write!(f, " {m}"),
        }
    }
}

pub fn parse_estimates(text: &str) -> Result<Vec<EstimateRecord>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let record_no = out.len() + 1;
        let err = |msg: String| Error::Parse { line: line_no, msg: format!("record {record_no}: {msg}") };
        let mut tokens = line.split_whitespace();
        let tag = tokens.next().unwrap();
        let rest: Vec<&str> = tokens.collect();
        let n_values = match tag {
            "TRACE" => 1,
            "PTM" => 16,
            other => return Err(err(format!("unknown record type {other:?}"))),
        };
        if rest.len() < n_values + 2 {
            return Err(err(format!("{tag} needs gate ids, a repetition count and {n_values} value(s)")));
        }
        let split = rest.len() - n_values;
        let values: Vec<f64> = rest[split..]
            .iter()
            .map(|t| t.parse::<f64>().map_err(|_| err(format!("bad numeric field {t:?}"))))
            .collect::<Result<_>>()?;
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(err(format!("non-finite value {v}")));
        }
        let n: u64 = rest[split - 1]
            .parse()
            .map_err(|_| err(format!("bad repetition count {:?}", rest[split - 1])))?;
        let ids: Vec<usize> = rest[..split - 1]
            .iter()
            .map(|t| t.parse::<usize>().map_err(|_| err(format!("bad gate id {t:?}"))))
            .collect::<Result<_>>()?;
        let spec = SequenceSpec::new(ids, n);
        if spec.gate_ids.iter().any(|&g| g == 0) || n == 0 {
            return Err(err(format!("invalid sequence {spec}")));
        }
        out.push(match tag {
            "TRACE" => EstimateRecord::Trace(spec, values[0]),
            _ => EstimateRecord::Ptm(spec, Ptm::from_row_slice(&values)),
        });
    }
    Ok(out)
}

pub fn ingest_estimates(path: &Path) -> Result<Vec<EstimateRecord>> {
    parse_estimates(&std::fs::read_to_string(path)?)
}

pub fn write_estimates<W: Write>(mut w: W, records: &[EstimateRecord]) -> std::io::Result<()> {
    writeln!(w, "# gate-sequence estimates: TRACE ids... n value | PTM ids... n v00..v33")?;
    for r in records {
        writeln!(w, "{r}")?;
    }
    Ok(())
}

/// Replays ingested estimates in place of oracle calls.
#[derive(Clone, Debug, Default)]
pub struct EstimateTable {
    entries: HashMap<(MeasurementKind, SequenceSpec), VecDeque<EstimateRecord>>,
}

impl EstimateTable {
    pub fn new(records: Vec<EstimateRecord>) -> Self {
        let mut entries: HashMap<_, VecDeque<_>> = HashMap::new();
        for r in records {
            entries.entry((r.kind(), r.spec().clone())).or_default().push_back(r);
        }
        EstimateTable { entries }
    }

    /// Errors with the full list of required sequences absent from the table.
    pub fn check_complete(&self, required: &[(MeasurementKind, SequenceSpec)]) -> Result<()> {
        let mut missing: Vec<SequenceSpec> = required
            .iter()
            .filter(|key| self.entries.get(key).map_or(true, |q| q.is_empty()))
            .map(|(_, s)| s.clone())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            missing.dedup();
            Err(Error::MissingSequences(missing))
        }
    }

    fn take(&mut self, kind: MeasurementKind, seq: &SequenceSpec) -> Result<EstimateRecord> {
        self.entries
            .get_mut(&(kind, seq.clone()))
            .and_then(|q| q.pop_front())
            .ok_or_else(|| Error::MissingMeasurement(seq.clone()))
    }
}

impl Measurements for EstimateTable {
    fn trace(&mut self, seq: &SequenceSpec) -> Result<f64> {
        match self.take(MeasurementKind::Trace, seq)? {
            EstimateRecord::Trace(_, v) => Ok(v),
            _ => unreachable!(),
        }
    }

    fn ptm(&mut self, seq: &SequenceSpec) -> Result<Ptm> {
        match self.take(MeasurementKind::Ptm, seq)? {
            EstimateRecord::Ptm(_, m) => Ok(m),
            _ => unreachable!(),
        }
    }
}

/// Logs every measurement passing through, in call order.
pub struct Recorder<M> {
    inner: M,
    log: Vec<EstimateRecord>,
}

impl<M: Measurements> Recorder<M> {
    pub fn new(inner: M) -> Self {
        Recorder { inner, log: Vec::new() }
    }

    pub fn records(&self) -> &[EstimateRecord] {
        &self.log
    }

    pub fn into_parts(self) -> (M, Vec<EstimateRecord>) {
        (self.inner, self.log)
    }
}

impl<M: Measurements> Measurements for Recorder<M> {
    fn trace(&mut self, seq: &SequenceSpec) -> Result<f64> {
        let v = self.inner.trace(seq)?;
        self.log.push(EstimateRecord::Trace(seq.clone(), v));
        Ok(v)
    }

    fn ptm(&mut self, seq: &SequenceSpec) -> Result<Ptm> {
        let m = self.inner.ptm(seq)?;
        self.log.push(EstimateRecord::Ptm(seq.clone(), m));
        Ok(m)
    }
}

/// Memoizes trace queries per `(sequence, l)` for the duration of one run.
pub struct TraceCache<M> {
    inner: M,
    traces: HashMap<SequenceSpec, f64>,
}

impl<M: Measurements> TraceCache<M> {
    pub fn new(inner: M) -> Self {
        TraceCache { inner, traces: HashMap::new() }
    }

    pub fn into_inner(self) -> M {
        self.inner
    }
}

impl<M: Measurements> Measurements for TraceCache<M> {
    fn trace(&mut self, seq: &SequenceSpec) -> Result<f64> {
        if let Some(&v) = self.traces.get(seq) {
            return Ok(v);
        }
        let v = self.inner.trace(seq)?;
        self.traces.insert(seq.clone(), v);
        Ok(v)
    }

    fn ptm(&mut self, seq: &SequenceSpec) -> Result<Ptm> {
        self.inner.ptm(seq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateset::reference_gates;
    use crate::noise::{noisy_gate_with, random_gauge_transform};

    fn noisy_context(sigma: f64, seed: u64, with_gauge: bool) -> GstContext {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gates: Vec<GateRecord> = reference_gates()
            .iter()
            .map(|g| noisy_gate_with(g, 1e-3, &mut rng).unwrap().0)
            .collect();
        let gauge = if with_gauge {
            *random_gauge_transform(&mut rng).unwrap().channel.matrix()
        } else {
            Matrix4::identity()
        };
        GstContext::new(gates, gauge, sigma, seed).unwrap()
    }

    #[test]
    fn noiseless_trace_of_pauli_z() {
        let z = GateRecord::ideal(1, crate::ptm::pauli(3)).unwrap();
        let mut ctx = GstContext::new(vec![z], Matrix4::identity(), 0.0, 0).unwrap();
        assert_eq!(ctx.trace(&SequenceSpec::new(vec![1], 1)).unwrap(), 0.0);
    }

    #[test]
    fn trace_is_gauge_independent() {
        let mut a = noisy_context(0.01, 3, false);
        let mut b = noisy_context(0.01, 3, true);
        assert_ne!(a.gauge(), b.gauge());
        for n in [1, 7, 100] {
            let s = SequenceSpec::new(vec![1, 2, 5], n);
            assert_eq!(a.trace(&s).unwrap(), b.trace(&s).unwrap());
        }
    }

    #[test]
    fn noiseless_ptm_matches_conjugated_truth() {
        let mut ctx = noisy_context(0.0, 4, true);
        let s = SequenceSpec::new(vec![3, 4], 250);
        let est = ctx.ptm(&s).unwrap();
        let truth = ctx.true_map(&s).unwrap();
        assert!((est.trace() - truth.trace()).abs() < 1e-9);
        let t = *ctx.gauge();
        let exact = truth.conjugate(&t, &t.try_inverse().unwrap());
        assert!((est.matrix() - exact.matrix()).amax() < 1e-12);
        let mut plain = noisy_context(0.0, 4, false);
        assert!((plain.ptm(&s).unwrap().matrix() - truth.matrix()).amax() < 1e-12);
    }

    #[test]
    fn trace_noise_statistics() {
        let mut ctx = noisy_context(0.01, 5, false);
        let s = SequenceSpec::new(vec![2], 31);
        let truth = ctx.true_map(&s).unwrap().trace();
        let draws: Vec<f64> = (0..10_000).map(|_| ctx.trace(&s).unwrap()).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        assert!((mean - truth).abs() < 4e-4);
        assert!((var.sqrt() - 0.01).abs() < 0.05 * 0.01);
    }

    #[test]
    fn ptm_noise_statistics() {
        let mut ctx = noisy_context(0.01, 6, true);
        let s = SequenceSpec::new(vec![6, 7], 3);
        let t = *ctx.gauge();
        let exact = ctx.true_map(&s).unwrap().conjugate(&t, &t.try_inverse().unwrap());
        let mut devs = Vec::new();
        for _ in 0..10_000 {
            let est = ctx.ptm(&s).unwrap();
            assert!(est.is_trace_preserving());
            devs.push(est.matrix()[(2, 1)] - exact.matrix()[(2, 1)]);
        }
        let sd = (devs.iter().map(|d| d * d).sum::<f64>() / devs.len() as f64).sqrt();
        assert!((sd - 0.01).abs() < 0.05 * 0.01);
    }

    #[test]
    fn estimate_file_round_trip() {
        let mut rec = Recorder::new(noisy_context(0.01, 8, true));
        let s1 = SequenceSpec::new(vec![5, 2, 3, 6], 17);
        let s2 = SequenceSpec::new(vec![1, 2], 400);
        let t = rec.trace(&s1).unwrap();
        let m = rec.ptm(&s2).unwrap();
        let mut buf = Vec::new();
        write_estimates(&mut buf, rec.records()).unwrap();
        let parsed = parse_estimates(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(parsed, rec.records());
        let mut table = EstimateTable::new(parsed);
        assert_eq!(table.trace(&s1).unwrap(), t);
        assert_eq!(table.ptm(&s2).unwrap(), m);
        assert!(matches!(table.trace(&s1), Err(Error::MissingMeasurement(_))));
    }

    #[test]
    fn empty_file_lists_everything_missing() {
        let table = EstimateTable::new(parse_estimates("# nothing\n").unwrap());
        let req = vec![
            (MeasurementKind::Trace, SequenceSpec::new(vec![1], 1)),
            (MeasurementKind::Ptm, SequenceSpec::new(vec![1, 2], 10)),
        ];
        match table.check_complete(&req) {
            Err(Error::MissingSequences(v)) => assert_eq!(v.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn corrupted_field_names_the_record() {
        let text = "TRACE 1 2 3 4 5 0.5\nTRACE 1 2 3 4 9 0.4x\n";
        match parse_estimates(text) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("record 2"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_estimates("PTM 1 2 1 0 0\n").is_err());
        assert!(parse_estimates("FOO 1 1 1\n").is_err());
    }

    #[test]
    fn cache_reuses_traces() {
        let mut cache = TraceCache::new(Recorder::new(noisy_context(0.01, 9, false)));
        let s = SequenceSpec::new(vec![1], 3);
        let a = cache.trace(&s).unwrap();
        let b = cache.trace(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(cache.into_inner().records().len(), 1);
    }

    #[test]
    fn invalid_sequences_rejected() {
        let mut ctx = noisy_context(0.0, 1, false);
        assert!(ctx.trace(&SequenceSpec::new(vec![], 1)).is_err());
        assert!(ctx.trace(&SequenceSpec::new(vec![8], 1)).is_err());
        assert!(ctx.trace(&SequenceSpec::new(vec![1], 0)).is_err());
    }
}

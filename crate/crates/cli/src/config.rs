//! Flat `key=value` experiment configuration.
//!
//! Keys (all optional):
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `seed` | master seed | 1 |
//! | `sigma` | standard deviation of every estimated PTM entry | 0.01 |
//! | `p_min`, `p_max` | log-uniform error-rate range | per command |
//! | `sets` | gate sets (benchmark, gen-gateset) | 15 / 1 |
//! | `replicas` | random gates per ideal (trace-variance, singular-values) | 20 / 30 |
//! | `schedule_cap` | largest sequence length used by the trace protocol | none |
//! | `out` | output directory | `out` |
//! | `strict_paper_rhs` | single-step similarity solve with the raw right-hand side | false |
//! | `iterate` | relinearize the unital stage | false |
//! | `unital_iterations` | relinearizations when `iterate` is set | 3 |
//! | `mc_samples` | Monte Carlo draws for the variance cross-check | 200 |
//! | `p_hints` | comma-separated per-gate error rates (estimates input) | none |
//! | `threads` | worker cap, overrides `PTM_TOMOLAB_THREADS` | all cores |
//!
//! Blank lines and lines starting with `#` are ignored.

use std::path::PathBuf;

use sha2::{Digest, Sha256};
use tomolab_core::gauge::{RhsForm, SimilarityOptions};
use tomolab_core::pipeline::PipelineOptions;

use crate::error::{CliError, Result};

pub const THREADS_ENV: &str = "PTM_TOMOLAB_THREADS";

pub const BENCHMARK_P_RANGE: (f64, f64) = (1e-6, 1e-3);
pub const FIGURE_P_RANGE: (f64, f64) = (1e-6, 1e-2);

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub sigma: f64,
    pub p_min: Option<f64>,
    pub p_max: Option<f64>,
    pub num_gate_sets: Option<usize>,
    pub replicas: Option<usize>,
    pub schedule_cap: Option<u64>,
    pub output_dir: PathBuf,
    pub strict_paper_rhs: bool,
    pub iterate_unital: bool,
    pub unital_iterations: usize,
    pub mc_samples: usize,
    pub p_hints: Option<Vec<f64>>,
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            master_seed: 1,
            sigma: 0.01,
            p_min: None,
            p_max: None,
            num_gate_sets: None,
            replicas: None,
            schedule_cap: None,
            output_dir: PathBuf::from("out"),
            strict_paper_rhs: false,
            iterate_unital: false,
            unital_iterations: 3,
            mc_samples: 200,
            p_hints: None,
            threads: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e| CliError::Config(format!("{key}={value}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::Config(format!("{key}={value}: expected true or false"))),
    }
}

impl ExperimentConfig {
    /// Parses a config file body on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key=value, got {line:?}", lineno + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.master_seed = parse(key, value)?,
            "sigma" => self.sigma = parse(key, value)?,
            "p_min" => self.p_min = Some(parse(key, value)?),
            "p_max" => self.p_max = Some(parse(key, value)?),
            "sets" => self.num_gate_sets = Some(parse(key, value)?),
            "replicas" => self.replicas = Some(parse(key, value)?),
            "schedule_cap" => self.schedule_cap = Some(parse(key, value)?),
            "out" => self.output_dir = PathBuf::from(value),
            "strict_paper_rhs" => self.strict_paper_rhs = parse_bool(key, value)?,
            "iterate" => self.iterate_unital = parse_bool(key, value)?,
            "unital_iterations" => self.unital_iterations = parse(key, value)?,
            "mc_samples" => self.mc_samples = parse(key, value)?,
            "p_hints" => {
                let hints = value.split(',').map(|v| parse::<f64>(key, v)).collect::<Result<Vec<_>>>()?;
                self.p_hints = Some(hints);
            }
            "threads" => self.threads = Some(parse(key, value)?),
            _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(CliError::Config(format!("sigma must be finite and non-negative, got {}", self.sigma)));
        }
        for (k, v) in [("p_min", self.p_min), ("p_max", self.p_max)] {
            if let Some(p) = v {
                if !(p > 0.0 && p < 0.5) {
                    return Err(CliError::Config(format!("{k} must lie in (0, 0.5), got {p}")));
                }
            }
        }
        if let (Some(lo), Some(hi)) = (self.p_min, self.p_max) {
            if lo >= hi {
                return Err(CliError::Config(format!("p_min {lo} must be below p_max {hi}")));
            }
        }
        if self.num_gate_sets == Some(0) || self.replicas == Some(0) {
            return Err(CliError::Config("sets and replicas must be positive".into()));
        }
        if self.mc_samples < 2 {
            return Err(CliError::Config("mc_samples must be at least 2".into()));
        }
        if self.threads == Some(0) {
            return Err(CliError::Config("threads must be positive".into()));
        }
        if let Some(h) = &self.p_hints {
            if h.iter().any(|p| !(*p > 0.0 && *p < 0.5)) {
                return Err(CliError::Config(format!("p_hints must lie in (0, 0.5), got {h:?}")));
            }
        }
        Ok(())
    }

    /// `(p_min, p_max)` with unset ends taken from `default`.
    pub fn p_range(&self, default: (f64, f64)) -> Result<(f64, f64)> {
        let lo = self.p_min.unwrap_or(default.0);
        let hi = self.p_max.unwrap_or(default.1);
        if lo >= hi {
            return Err(CliError::Config(format!("p range [{lo}, {hi}] is empty")));
        }
        Ok((lo, hi))
    }

    pub fn pipeline_options(&self) -> PipelineOptions {
        let mut opts = PipelineOptions::default();
        opts.track.max_n = self.schedule_cap;
        if self.iterate_unital {
            opts.unital_iterations = self.unital_iterations;
        }
        if self.strict_paper_rhs {
            opts.similarity = SimilarityOptions { rhs: RhsForm::StrictPaper, ..SimilarityOptions::first_order() };
        }
        opts
    }

    /// Worker cap: the `threads` key, else the environment variable.
    pub fn worker_threads(&self) -> Result<Option<usize>> {
        if self.threads.is_some() {
            return Ok(self.threads);
        }
        match std::env::var(THREADS_ENV) {
            Ok(v) => {
                let n: usize = parse(THREADS_ENV, &v)?;
                if n == 0 {
                    return Err(CliError::Config(format!("{THREADS_ENV} must be positive")));
                }
                Ok(Some(n))
            }
            Err(_) => Ok(None),
        }
    }

    /// Settings that can change results, in a fixed order. Output location
    /// and thread count are left out so they do not perturb the hash.
    pub fn canonical(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "default".into());
        vec![
            ("seed", self.master_seed.to_string()),
            ("sigma", format!("{:?}", self.sigma)),
            ("p_min", opt(self.p_min.map(|p| format!("{p:?}")))),
            ("p_max", opt(self.p_max.map(|p| format!("{p:?}")))),
            ("sets", opt(self.num_gate_sets.map(|s| s.to_string()))),
            ("replicas", opt(self.replicas.map(|s| s.to_string()))),
            ("schedule_cap", opt(self.schedule_cap.map(|s| s.to_string()))),
            ("strict_paper_rhs", self.strict_paper_rhs.to_string()),
            ("iterate", self.iterate_unital.to_string()),
            ("unital_iterations", self.unital_iterations.to_string()),
            ("mc_samples", self.mc_samples.to_string()),
            (
                "p_hints",
                opt(self.p_hints.as_ref().map(|h| h.iter().map(|p| format!("{p:?}")).collect::<Vec<_>>().join(","))),
            ),
        ]
    }

    /// First 16 hex digits of SHA-256 over [`Self::canonical`].
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.canonical() {
            h.update(format!("{k}={v}\n"));
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

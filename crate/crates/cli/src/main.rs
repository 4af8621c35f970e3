use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tomolab_cli::commands::{self, ReconstructInput};
use tomolab_cli::{validate, Bundle, CliError, ExperimentConfig, Result};

/// Perturbative gate-set tomography experiments.
#[derive(Parser)]
#[command(name = "ptm-tomolab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write simulated noisy gate sets with their hidden frames.
    GenGateset(Common),
    /// Modelled trace variance against sequence length for I, Z and S.
    TraceVariance(Common),
    /// Largest singular value of the geometric sum against sequence length.
    SingularValues(Common),
    /// Reconstruct one gate set from a gate-set file or an estimates file.
    Reconstruct(ReconstructArgs),
    /// Reconstruct many simulated sets and fit the distance scaling.
    Benchmark(Common),
    /// Run the acceptance criteria.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// Flat key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    p_min: Option<f64>,
    #[arg(long)]
    p_max: Option<f64>,
    #[arg(long)]
    sets: Option<usize>,
    #[arg(long)]
    replicas: Option<usize>,
    /// Largest sequence length for the trace protocol.
    #[arg(long)]
    schedule_cap: Option<u64>,
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Single-step frame alignment with the raw right-hand side.
    #[arg(long)]
    strict_paper_rhs: bool,
    /// Relinearize the unital stage.
    #[arg(long)]
    iterate: bool,
    /// Worker threads; overrides PTM_TOMOLAB_THREADS.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct ReconstructArgs {
    #[command(flatten)]
    common: Common,
    /// Gate-set file written by gen-gateset.
    #[arg(long, conflicts_with = "estimates", required_unless_present = "estimates")]
    gateset: Option<PathBuf>,
    /// Set index within the gate-set file.
    #[arg(long, default_value_t = 0)]
    set: usize,
    /// Estimates file (TRACE/PTM lines); needs --p-hints.
    #[arg(long)]
    estimates: Option<PathBuf>,
    /// Comma-separated per-gate error-rate hints.
    #[arg(long)]
    p_hints: Option<String>,
    /// Also write every estimate the run consumed.
    #[arg(long)]
    emit_estimates: bool,
}

impl Common {
    fn resolve(&self, extra: &[(&str, Option<String>)]) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                ExperimentConfig::from_text(&text)?
            }
            None => ExperimentConfig::default(),
        };
        let flags = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("sigma", self.sigma.map(|v| v.to_string())),
            ("p_min", self.p_min.map(|v| v.to_string())),
            ("p_max", self.p_max.map(|v| v.to_string())),
            ("sets", self.sets.map(|v| v.to_string())),
            ("replicas", self.replicas.map(|v| v.to_string())),
            ("schedule_cap", self.schedule_cap.map(|v| v.to_string())),
            ("mc_samples", self.mc_samples.map(|v| v.to_string())),
            ("out", self.out.as_ref().map(|v| v.display().to_string())),
            ("strict_paper_rhs", self.strict_paper_rhs.then(|| "true".into())),
            ("iterate", self.iterate.then(|| "true".into())),
            ("threads", self.threads.map(|v| v.to_string())),
        ];
        for (k, v) in flags.iter().chain(extra) {
            if let Some(v) = v {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn finish(cfg: &ExperimentConfig, bundle: Bundle) -> Result<()> {
    for path in bundle.write_to(&cfg.output_dir)? {
        eprintln!("wrote {}", path.display());
    }
    if bundle.failures.is_empty() {
        return Ok(());
    }
    for f in &bundle.failures {
        eprintln!("failed: {f}");
    }
    Err(CliError::Failed(format!("{} item(s) failed", bundle.failures.len())))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenGateset(c) => {
            let cfg = c.resolve(&[])?;
            finish(&cfg, commands::gen_gateset(&cfg)?)
        }
        Command::TraceVariance(c) => {
            let cfg = c.resolve(&[])?;
            finish(&cfg, commands::trace_variance(&cfg)?)
        }
        Command::SingularValues(c) => {
            let cfg = c.resolve(&[])?;
            finish(&cfg, commands::singular_values(&cfg)?)
        }
        Command::Reconstruct(r) => {
            let cfg = r.common.resolve(&[("p_hints", r.p_hints.clone())])?;
            let input = match (r.gateset, r.estimates) {
                (Some(path), _) => ReconstructInput::GateSet { path, set: r.set },
                (None, Some(path)) => ReconstructInput::Estimates { path },
                (None, None) => unreachable!("clap requires one input"),
            };
            finish(&cfg, commands::reconstruct(&cfg, &input, r.emit_estimates)?)
        }
        Command::Benchmark(c) => {
            let cfg = c.resolve(&[])?;
            finish(&cfg, commands::benchmark(&cfg)?)
        }
        Command::Validate(c) => {
            let cfg = c.resolve(&[])?;
            finish(&cfg, validate::validate(&cfg))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

use thiserror::Error;

use crate::oracle::SequenceSpec;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not unitary (deviation {0:.3e})")]
    NotUnitary(f64),

    #[error("error-rate calibration failed: {0}")]
    Calibration(String),

    #[error("target error rate {0} outside (0, 0.5)")]
    ErrorRateRange(f64),

    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    #[error("branch tracking ambiguous at n = {n}: best assignment {best:.3e}, runner-up {second:.3e}")]
    TrackingAmbiguity { n: u64, best: f64, second: f64 },

    #[error("eigenvalue triple not conjugation-closed at n = {n} (residual {residual:.3e})")]
    NotConjugationClosed { n: u64, residual: f64 },

    #[error("linear system is degenerate: {0}")]
    Degenerate(String),

    #[error("rank anomaly: expected {expected}, found {found} ({context})")]
    Rank { expected: usize, found: usize, context: String },

    #[error("missing measurement for {0}")]
    MissingMeasurement(SequenceSpec),

    #[error("estimate file lacks {} required sequence(s): {}", .0.len(), list_specs(.0))]
    MissingSequences(Vec<SequenceSpec>),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{0}")]
    Invalid(String),

    #[error("{stage}: sequence {sequence}: {source}")]
    Stage { stage: &'static str, sequence: String, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn list_specs(specs: &[SequenceSpec]) -> String {
    specs.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("; ")
}

impl Error {
    pub fn in_stage(self, stage: &'static str, sequence: impl Into<String>) -> Error {
        Error::Stage { stage, sequence: sequence.into(), source: Box::new(self) }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

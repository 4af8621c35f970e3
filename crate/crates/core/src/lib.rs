//! Perturbative reconstruction of high-fidelity single-qubit gate sets.
//!
//! Stage one recovers the unital blocks of every gate from amplified trace
//! measurements of quadruple sequences; stage two recovers the non-unital
//! vectors from repeated double sequences after aligning the tomography frame.
//! Everything runs against a simulated tomography oracle with sampling noise
//! and a hidden gauge, or against externally supplied estimate files.

pub mod error;
pub mod gateset;
pub mod gauge;
pub mod lsq;
pub mod noise;
pub mod nonunital;
pub mod oracle;
pub mod pipeline;
pub mod ptm;
pub mod seed;
pub mod spectral;
pub mod unital;

pub use error::{Error, Result};
pub use oracle::{GstContext, Measurements, SequenceSpec};
pub use ptm::{EigenTriple, GateRecord, NonUnitalVector, Ptm, UnitalBlock};

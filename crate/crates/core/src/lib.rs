//! Falsification of digital twins against confounded observational data.
//!
//! Observational trajectories yield identifiable lower and upper bounds on
//! the twin's target interventional mean. A twin whose simulated mean falls
//! outside these bounds, beyond sampling error, is provably incorrect.
//!
//! The pipeline runs [`trajectory`] ingestion, [`regions`] hypothesis
//! generation, [`bounds`] estimation, [`intervals`] construction and gated
//! [`testing`] with multiplicity control. [`synth`] provides a confounded
//! process with known ground truth and [`twinproto`] drives external twins.

pub mod bounds;
pub mod error;
pub mod intervals;
pub mod regions;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod testing;
pub mod trajectory;
pub mod twinproto;

pub use error::{Error, Result};

//! Certified randomness toolkit for a prepare-and-measure
//! semi-device-independent QRNG.
//!
//! The pipeline: build a state family with bounded pairwise overlap
//! ([`states`]), model or measure input-output correlations ([`detection`]),
//! assemble the adversary's guessing-probability SDP ([`assembly`]), solve
//! and verify a dual certificate ([`engine`]), convert to min-entropy and
//! sweep parameters ([`certify`]), and hash raw outcomes into nearly
//! uniform bits ([`extract`]).

pub mod assembly;
pub mod certify;
pub mod detection;
pub mod engine;
pub mod error;
pub mod extract;
pub mod states;
pub mod symmetry;

pub use error::{Error, Result};

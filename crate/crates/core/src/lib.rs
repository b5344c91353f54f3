//! Simulation and analysis of heralded biphoton sources: wavepacket model,
//! noise-purity corrections, conversion channel, event-level Monte Carlo and
//! coincidence correlators.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod convchan;
pub mod correlator;
pub mod error;
pub mod model;
pub mod purity;
pub mod simkit;
pub mod spectrum;

pub use error::{Error, Result};

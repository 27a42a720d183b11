//! Stochastic emulation of quantum circuits and lattice Schrödinger dynamics.
//!
//! Quantum states are carried by classical probability distributions over
//! gradient bits (grabits): every amplitude is the signed difference of two
//! probability masses. Gates become stochastic matrices, a non-linear
//! refreshment keeps each world interference-free, and quadratic (Born)
//! statistics emerge from coincidences between two independent replicas.
//!
//! Modules:
//! - [`state`]: configuration indexing, distributions, extraction.
//! - [`gates`]: stochastic gate matrices and the circuit IR.
//! - [`refresh`]: refreshment of distributions and finite ensembles.
//! - [`twin`]: twin-world runs and coincidence statistics.
//! - [`circuits`]: the phase-rotation and CHSH circuits.
//! - [`dynamics`]: lattice generators and propagation.
//! - [`oracle`]: exact quantum-mechanical reference.
//! - [`locality`]: factorization test for refreshment maps.
//! - [`experiment`]: config files, CSV output and the experiment runner.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod circuits;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod gates;
pub mod locality;
pub mod oracle;
pub mod refresh;
pub mod rng;
pub mod state;
pub mod twin;

pub use error::{Error, Result};

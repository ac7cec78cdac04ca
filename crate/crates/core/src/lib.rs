//! Simulation and learning core for survival control of a logical qubit under
//! drifting, long-memory noise.
//!
//! The crate is `no_std` and only needs `alloc`. Everything here is pure
//! numerics: noise synthesis, the latent regime model, the logical Pauli
//! channel, the episodic environment, a small reverse-mode kernel for the
//! recurrent Q-networks, the belief-state learner with its fractional
//! meta-update, baseline policies, and the Monte Carlo statistics. File
//! formats, the CLI and thread-level parallelism live in the `driftqec` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod agent;
pub mod baseline;
pub mod channel;
pub mod env;
pub mod error;
pub mod eval;
pub mod grad;
pub mod linalg;
pub mod math;
pub mod noise;
pub mod policy;
pub mod regime;
pub mod rng;

pub use error::{Error, Result};

//! Trust-region proposal updates for sampling-based model predictive control.
//!
//! The crate is organised around the per-time-step optimisation loop in [`mpc`]:
//! a Gaussian proposal over stacked control sequences is sampled through one of
//! the unit-sample sources in [`sampling`] (random, scrambled Sobol, scrambled
//! Halton, or precomputed deterministic [`lcd`] sets), rolled out on a plant from
//! [`envs`], and refined with either the KL/entropy-constrained update in
//! [`trust_region`] or one of the heuristic rules in [`baselines`].

pub mod baselines;
pub mod envs;
pub mod error;
pub mod gaussian;
pub mod lcd;
pub mod mpc;
pub mod problem;
pub mod sampling;
pub mod trust_region;

pub use error::{Error, Result};
pub use gaussian::GaussianProposal;
pub use problem::{ControlSequence, OcpConfig, Origin, SampleBatch};

//! Core library for `cartel`, a simulator and analysis toolkit for studying
//! whether collusive pricing is a rational, stable outcome among pretrained
//! agents that keep adapting at test time.
//!
//! The pipeline is: pretrain policy pairs to convergence ([`pretrain`]),
//! characterize them by paired cooperativeness and cooperative robustness
//! ([`values`]), sample empirical meta-games over meta-strategies
//! ([`metagame`]), and compute equilibrium statistics such as max-entropy
//! Nash mixtures, NE-regret, uniform scores, and weighted best-response
//! graphs ([`analysis`]). Chat-model pricing agents are driven through an
//! abstract oracle ([`llm`]).

pub mod agents;
pub mod analysis;
pub mod config;
pub mod env;
pub mod error;
pub mod llm;
pub mod metagame;
pub mod pretrain;
pub mod report;
pub mod seed;
pub mod values;

pub use error::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

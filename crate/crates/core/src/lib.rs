//! Bandit toolkit for corrupted contexts and Markov-evolving hidden states.
//!
//! A per-user referee (a modified gradient bandit) arbitrates between a global
//! linear contextual bandit and a per-user multi-armed bandit that restricts
//! itself to actions likely to follow the last rewarded one. The crate also
//! ships the random-walk simulation environment, a labeled-stream replay
//! harness, the mean-field analysis of the referee, and a batch experiment
//! driver that writes regret traces as CSV.
//!
//! Actions are 0-based everywhere in the API. CSV files exchanged with the
//! outside world (stream labels, emitted action columns) use 1-based labels.

pub mod bandit;
pub mod baselines;
pub mod combine;
pub mod dynamics;
pub mod env;
mod error;
pub mod experiment;
pub mod rng;
pub mod stream;
pub mod transition;

pub use error::{Error, Result};

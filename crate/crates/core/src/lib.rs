//! Explaining random-forest classifiers through bipolar argumentation and an
//! equivalent Markov-network encoding.
//!
//! The pipeline: a [`forest::Forest`] induces a [`partition::DomainPartition`]
//! whose equivalence classes are classified symbolically. The explanation BAG
//! ([`bag`]) and the plausibility model ([`markov`]) are two views of the same
//! object; exact queries enumerate equivalence classes, while [`sampler`] and
//! [`miner`] estimate sufficient and necessary reasons by forward sampling.

pub mod bag;
pub mod cli;
pub mod cnf;
pub mod error;
pub mod exact;
pub mod fixtures;
pub mod forest;
pub mod markov;
pub mod miner;
pub mod partition;
pub mod query;
pub mod sampler;
pub mod synth;

pub use error::{Error, Result};
pub use forest::{Forest, Output, Value};
pub use markov::PlausibilityModel;
pub use partition::{DomainPartition, EquivalenceClass};

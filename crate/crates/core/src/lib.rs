//! Paraphrase generation controlled by entailment relation.

pub mod adversary;
pub mod augmentation;
pub mod config;
pub mod error;
pub mod generator;
pub mod io;
pub mod metrics;
pub mod oracle;
pub mod rl;
pub mod scorers;
pub mod sick;
pub mod types;
pub mod world;

pub use error::{Error, Result};
pub use types::*;

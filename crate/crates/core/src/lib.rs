//! Domain-general latent representations for zero-shot policy transfer.
//!
//! The crate learns a split latent code with a cycle-consistent VAE over
//! several visual domains of a procedural driving task, trains a PPO agent on
//! the frozen domain-general half in one source domain, and measures how the
//! policy transfers to the remaining domains.

pub mod checkpoint;
pub mod data;
pub mod env;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod image;
pub mod nn;
pub mod repr;
pub mod rl;

pub use error::{Error, Result};

//! Split-latent image autoencoders.
//!
//! The encoder maps an observation to a Gaussian over the domain-general code
//! (`mu_g`, `logvar_g`) and a deterministic domain-specific code. The
//! cycle-consistent variant trains both halves with a within-domain swap of the
//! specific code (forward cycle) and a decode/re-encode consistency penalty on
//! the general code (reverse cycle). The plain VAE and beta-VAE baselines use a
//! single general code and no cycles.

mod loss;
mod model;
mod train;

pub use loss::{
    cycle_step, derangement_within_groups, forward_loss, forward_loss_grad, kl_divergence, reverse_loss,
    reverse_loss_grad, CycleBatch, ReprGrads, ReverseDraw,
};
pub use model::{sample_general, Encoded, ReprCheckpointMeta, ReprParams, REPR_FORMAT_VERSION};
pub use train::{
    batch_tensor, swap_reconstruct, train_repr, train_repr_with, write_loss_history, SwapGrid, TrainOutcome,
};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Ccvae,
    Vae,
    BetaVae,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Ccvae => "ccvae",
            Variant::Vae => "vae",
            Variant::BetaVae => "beta_vae",
        }
    }

    pub fn has_specific(&self) -> bool {
        matches!(self, Variant::Ccvae)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ccvae" => Ok(Variant::Ccvae),
            "vae" => Ok(Variant::Vae),
            "beta_vae" => Ok(Variant::BetaVae),
            other => Err(Error::Config(format!("unknown encoder variant `{other}`"))),
        }
    }
}

/// Which parameters the reverse-cycle loss updates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReverseGradient {
    /// Backpropagate through re-encoder, decoder and both specific codes.
    #[default]
    Full,
    /// Decoded images are treated as constants; only the re-encoding pass is
    /// trained.
    Encoder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReprConfig {
    pub variant: Variant,
    /// Width of the domain-general code.
    pub dim_general: usize,
    /// Width of the domain-specific code (ignored by the single-code variants).
    pub dim_specific: usize,
    /// KL weight.
    pub beta: f64,
    pub lr: f64,
    /// Images per optimisation step, split evenly across domains.
    pub batch_size: usize,
    pub epochs: usize,
    pub reverse_weight: f64,
    pub reverse_gradient: ReverseGradient,
    pub seed: u64,
    /// Output channels of the stride-2 convolutions; the decoder mirrors them.
    pub channels: Vec<usize>,
}

impl Default for ReprConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Ccvae,
            dim_general: 16,
            dim_specific: 8,
            beta: 1.0,
            lr: 1e-4,
            batch_size: 64,
            epochs: 50,
            reverse_weight: 10.0,
            reverse_gradient: ReverseGradient::Full,
            seed: 0,
            channels: vec![16, 32, 32, 64],
        }
    }
}

impl ReprConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim_general < 1 {
            return Err(Error::Config("repr.dim_general must be at least 1".into()));
        }
        if self.variant.has_specific() && self.dim_specific < 1 {
            return Err(Error::Config("repr.dim_specific must be at least 1".into()));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Config(format!("repr.beta must be positive, got {}", self.beta)));
        }
        if !(self.reverse_weight >= 0.0) {
            return Err(Error::Config("repr.reverse_weight must be non-negative".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("repr.lr must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("repr.batch_size must be at least 2".into()));
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config("repr.channels must be non-empty and positive".into()));
        }
        Ok(())
    }

    /// Specific-code width actually used by the variant.
    pub fn effective_dim_specific(&self) -> usize {
        if self.variant.has_specific() {
            self.dim_specific
        } else {
            0
        }
    }
}

/// Per-epoch (or per-batch) loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub kl: f64,
    pub reverse: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(recon: f64, kl: f64, reverse: f64, beta: f64, reverse_weight: f64) -> Self {
        Self {
            recon,
            kl,
            reverse,
            total: recon + beta * kl + reverse_weight * reverse,
        }
    }
}

//! PPO on a frozen image encoder.
//!
//! The policy sees the encoder mean of the rendered observation with the car
//! speed (divided by `v_max`) appended. Encoder weights are only borrowed, so
//! nothing in this module can update them.

mod policy;
mod ppo;
mod rollout;
mod train;

pub use policy::{
    gaussian_entropy, log1m_tanh_sq, squash, squashed_log_prob, ActOutput, PolicyCheckpointMeta, PolicyGrads,
    PolicyParams, ACTION_DIM, POLICY_FORMAT_VERSION,
};
pub use ppo::{compute_gae, normalize_advantages, ppo_loss, ppo_loss_grad, PpoBatch, PpoLossParts};
pub use rollout::{policy_inputs, run_episodes, run_random_episodes, EpisodeResult};
pub use train::{train_ppo, write_curve, CurvePoint, PolicyCheckpoint, PpoOutcome};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lam: f64,
    pub clip: f64,
    pub epochs_per_update: usize,
    /// Transitions gathered per update, summed over all environments.
    pub rollout_length: usize,
    pub minibatch: usize,
    pub total_steps: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub lr: f64,
    pub n_envs: usize,
    pub seed: u64,
    /// Environment steps between policy checkpoints; `total_steps / 10` when unset.
    pub checkpoint_interval: Option<usize>,
    pub hidden: usize,
    /// Initial pre-squash log std. Steering must be precise to within about
    /// 0.1 at speed, so wide initial noise only teaches the agent to stop.
    pub init_log_std: f64,
    pub max_grad_norm: f64,
    /// Deterministic source-domain episodes scored at every checkpoint.
    pub eval_episodes: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lam: 0.95,
            clip: 0.2,
            epochs_per_update: 4,
            rollout_length: 1024,
            minibatch: 256,
            total_steps: 300_000,
            entropy_coef: 0.01,
            value_coef: 0.5,
            lr: 3e-4,
            n_envs: 8,
            seed: 0,
            checkpoint_interval: None,
            hidden: 64,
            init_log_std: -2.0,
            max_grad_norm: 0.5,
            eval_episodes: 10,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("rl.{m}")));
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lam) {
            return bad("gamma and rl.lam must lie in [0, 1]");
        }
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if self.n_envs == 0 || self.rollout_length < self.n_envs {
            return bad("rollout_length must be at least n_envs (and n_envs positive)");
        }
        if self.minibatch == 0 || self.epochs_per_update == 0 || self.hidden == 0 {
            return bad("minibatch, epochs_per_update and hidden must be positive");
        }
        if self.total_steps == 0 {
            return bad("total_steps must be positive");
        }
        if !(self.lr > 0.0) || !(self.max_grad_norm > 0.0) {
            return bad("lr and max_grad_norm must be positive");
        }
        if self.checkpoint_interval == Some(0) {
            return bad("checkpoint_interval must be positive");
        }
        Ok(())
    }

    pub fn checkpoint_every(&self) -> usize {
        self.checkpoint_interval.unwrap_or((self.total_steps / 10).max(1))
    }
}

//! Tanh-squashed diagonal Gaussian policy with a separate value network.

use crate::checkpoint;
use crate::env::Action;
use crate::error::{Error, Result};
use crate::nn::{Layer, Linear, Real, Sequential, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const POLICY_FORMAT_VERSION: u32 = 1;
pub const ACTION_DIM: usize = 2;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams<T = f32> {
    pub input_dim: usize,
    pub hidden: usize,
    /// Pre-squash action mean.
    pub actor: Sequential<T>,
    /// State-independent log standard deviation of the pre-squash Gaussian.
    pub log_std: Vec<T>,
    pub critic: Sequential<T>,
}

/// Parameter gradients, aligned with [`PolicyParams::param_groups`].
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyGrads<T> {
    pub actor: Vec<Vec<T>>,
    pub log_std: Vec<T>,
    pub critic: Vec<Vec<T>>,
}

impl<T: Real> PolicyGrads<T> {
    pub fn zeros(p: &PolicyParams<T>) -> Self {
        Self {
            actor: p.actor.zero_grads(),
            log_std: vec![T::zero(); ACTION_DIM],
            critic: p.critic.zero_grads(),
        }
    }

    pub fn groups(&self) -> Vec<&[T]> {
        let mut g: Vec<&[T]> = self.actor.iter().map(|v| v.as_slice()).collect();
        g.push(&self.log_std);
        g.extend(self.critic.iter().map(|v| v.as_slice()));
        g
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpointMeta {
    pub embedding_dim: usize,
    pub uses_speed: bool,
    pub hidden: usize,
    pub step: usize,
    pub seed: u64,
    pub format_version: u32,
    /// Mean deterministic return on the training domain when saved.
    pub eval_return: Option<f64>,
}

/// One sampled decision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActOutput {
    pub action: Action,
    /// Pre-squash sample; needed to re-evaluate the log-probability.
    pub raw: [f64; ACTION_DIM],
    pub log_prob: f64,
    pub value: f64,
}

fn mlp<T: Real, R: Rng + ?Sized>(rng: &mut R, input: usize, hidden: usize, out: usize, out_gain: f64) -> Sequential<T> {
    Sequential::new(vec![
        Layer::Linear(Linear::new(rng, input, hidden, 1.0)),
        Layer::Tanh,
        Layer::Linear(Linear::new(rng, hidden, hidden, 1.0)),
        Layer::Tanh,
        Layer::Linear(Linear::new(rng, hidden, out, out_gain)),
    ])
}

/// `ln(1 - tanh(u)^2)` without cancellation for large `|u|`.
pub fn log1m_tanh_sq(u: f64) -> f64 {
    let x = -2.0 * u.abs();
    2.0 * (std::f64::consts::LN_2 - u.abs() - x.exp().ln_1p())
}

/// Map a pre-squash sample to the action box: steer `tanh(u0)`, throttle
/// `(tanh(u1) + 1) / 2`.
pub fn squash(raw: [f64; ACTION_DIM]) -> Action {
    Action::new(raw[0].tanh(), 0.5 * (raw[1].tanh() + 1.0))
}

/// Log-density of the squashed action given its pre-squash sample.
pub fn squashed_log_prob(raw: [f64; ACTION_DIM], mean: [f64; ACTION_DIM], log_std: [f64; ACTION_DIM]) -> f64 {
    let mut lp = 0.0;
    for j in 0..ACTION_DIM {
        let s = log_std[j].exp();
        let z = (raw[j] - mean[j]) / s;
        lp += -0.5 * z * z - log_std[j] - 0.5 * LN_2PI - log1m_tanh_sq(raw[j]);
    }
    // throttle = (t + 1) / 2 halves the interval and doubles the density
    lp + std::f64::consts::LN_2
}

/// Entropy of the pre-squash Gaussian; the squashed entropy has no closed form.
pub fn gaussian_entropy<T: Real>(log_std: &[T]) -> T {
    log_std.iter().map(|&l| T::lit(0.5 + 0.5 * LN_2PI) + l).sum()
}

impl<T: Real> PolicyParams<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, input_dim: usize, hidden: usize, init_log_std: f64) -> Self {
        Self {
            input_dim,
            hidden,
            actor: mlp(rng, input_dim, hidden, ACTION_DIM, 0.01),
            log_std: vec![T::lit(init_log_std); ACTION_DIM],
            critic: mlp(rng, input_dim, hidden, 1, 1.0),
        }
    }

    pub fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.dims().len() != 2 || x.dims()[1] != self.input_dim {
            return Err(Error::Shape(format!(
                "policy expects [N, {}] inputs, got {:?}",
                self.input_dim,
                x.dims()
            )));
        }
        Ok(())
    }

    /// Pre-squash means `[N, 2]`.
    pub fn mean(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        Ok(self.actor.forward(x))
    }

    /// State values `[N]`.
    pub fn value(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        self.check_input(x)?;
        Ok(self.critic.forward(x).into_data())
    }

    /// Squashed action means, `[N, 2]` in action units.
    pub fn action_mean(&self, x: &Tensor<T>) -> Result<Vec<[f64; ACTION_DIM]>> {
        let m = self.mean(x)?;
        Ok(m.data()
            .chunks_exact(ACTION_DIM)
            .map(|r| {
                let a = squash([r[0].to_f64().unwrap(), r[1].to_f64().unwrap()]);
                [a.steer(), a.throttle()]
            })
            .collect())
    }

    /// Act on a batch of inputs; `noise` is `[N, 2]` standard-normal (all zero
    /// for the deterministic mode).
    pub fn act(&self, x: &Tensor<T>, noise: &[f64]) -> Result<Vec<ActOutput>> {
        let mean = self.mean(x)?;
        let n = x.dims()[0];
        if noise.len() != n * ACTION_DIM {
            return Err(Error::Shape(format!("policy noise must hold {} values", n * ACTION_DIM)));
        }
        let values = self.critic.forward(x);
        let ls = [self.log_std[0].to_f64().unwrap(), self.log_std[1].to_f64().unwrap()];
        Ok((0..n)
            .map(|i| {
                let m = [
                    mean.data()[2 * i].to_f64().unwrap(),
                    mean.data()[2 * i + 1].to_f64().unwrap(),
                ];
                let raw = [m[0] + ls[0].exp() * noise[2 * i], m[1] + ls[1].exp() * noise[2 * i + 1]];
                ActOutput {
                    action: squash(raw),
                    raw,
                    log_prob: squashed_log_prob(raw, m, ls),
                    value: values.data()[i].to_f64().unwrap(),
                }
            })
            .collect())
    }

    pub fn param_groups(&self) -> Vec<&[T]> {
        let mut g: Vec<&[T]> = self.actor.params().map(|p| p.as_slice()).collect();
        g.push(&self.log_std);
        g.extend(self.critic.params().map(|p| p.as_slice()));
        g
    }

    pub fn param_groups_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut g: Vec<&mut Vec<T>> = self.actor.params_mut().collect();
        g.push(&mut self.log_std);
        g.extend(self.critic.params_mut());
        g
    }

    pub fn cast<U: Real>(&self) -> PolicyParams<U> {
        PolicyParams {
            input_dim: self.input_dim,
            hidden: self.hidden,
            actor: self.actor.cast(),
            log_std: self.log_std.iter().map(|v| U::from_f64(v.to_f64().unwrap()).unwrap()).collect(),
            critic: self.critic.cast(),
        }
    }
}

impl PolicyParams<f32> {
    /// Policy input width minus the speed channel.
    pub fn embedding_dim(&self) -> usize {
        self.input_dim - 1
    }

    pub fn hash(&self) -> String {
        checkpoint::hash_params(&self.param_groups())
    }

    pub fn save(&self, dir: &Path, stem: &str, step: usize, seed: u64, eval_return: Option<f64>) -> Result<()> {
        let meta = PolicyCheckpointMeta {
            embedding_dim: self.embedding_dim(),
            uses_speed: true,
            hidden: self.hidden,
            step,
            seed,
            format_version: POLICY_FORMAT_VERSION,
            eval_return,
        };
        checkpoint::save(dir, stem, &self.param_groups(), &meta)
    }

    pub fn load(dir: &Path, stem: &str) -> Result<(Self, PolicyCheckpointMeta)> {
        let (groups, meta): (_, PolicyCheckpointMeta) = checkpoint::load(dir, stem)?;
        let json = dir.join(format!("{stem}.json"));
        if meta.format_version != POLICY_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                path: json,
                found: meta.format_version,
                supported: POLICY_FORMAT_VERSION,
            });
        }
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut p = Self::new(&mut rng, meta.embedding_dim + 1, meta.hidden, 0.0);
        let slots = p.param_groups_mut();
        if slots.len() != groups.len() || slots.iter().zip(&groups).any(|(s, g)| s.len() != g.len()) {
            return Err(Error::Manifest {
                path: json,
                reason: "parameter blob does not match the recorded policy shape".into(),
            });
        }
        for (s, g) in slots.into_iter().zip(groups) {
            *s = g;
        }
        Ok((p, meta))
    }
}

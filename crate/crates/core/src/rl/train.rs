use super::policy::{PolicyParams, ACTION_DIM};
use super::ppo::{compute_gae, normalize_advantages, ppo_loss_grad, PpoBatch, PpoLossParts};
use super::rollout::{policy_inputs, run_episodes};
use super::PpoConfig;
use crate::env::{self, render, CarState, DomainSpec, EnvConfig, Track};
use crate::error::{Error, IoContext, Result};
use crate::image::Image;
use crate::nn::{Adam, AdamConfig, Tensor};
use crate::repr::ReprParams;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::path::Path;

/// One row of the training curve, logged after every PPO update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    /// Mean return of the most recent finished training episodes (NaN
    /// before the first one ends).
    pub mean_return: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyCheckpoint {
    pub step: usize,
    pub policy: PolicyParams<f32>,
    /// Deterministic return on the training domain at this step.
    pub eval_return: f64,
}

#[derive(Clone, Debug)]
pub struct PpoOutcome {
    pub policy: PolicyParams<f32>,
    pub curve: Vec<CurvePoint>,
    pub checkpoints: Vec<PolicyCheckpoint>,
}

/// Track seeds for the per-checkpoint evaluation, fixed by the training seed.
pub(crate) fn checkpoint_eval_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0ffee);
    (0..n).map(|_| rng.random()).collect()
}

struct EnvSlot {
    rng: ChaCha8Rng,
    track: Track,
    state: CarState,
    episode_return: f64,
}

impl EnvSlot {
    fn new(seed: u64, index: usize, config: &EnvConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64 + 1);
        let ts = rng.random();
        Self {
            track: Track::new(ts, config.track_seed_components),
            state: env::reset(ts, config),
            rng,
            episode_return: 0.0,
        }
    }

    fn restart(&mut self, config: &EnvConfig) {
        let ts = self.rng.random();
        self.track = Track::new(ts, config.track_seed_components);
        self.state = env::reset(ts, config);
        self.episode_return = 0.0;
    }
}

#[derive(Default)]
struct EnvBuffer {
    inputs: Vec<f32>,
    raw: Vec<[f64; ACTION_DIM]>,
    log_prob: Vec<f64>,
    value: Vec<f64>,
    reward: Vec<f64>,
    done: Vec<bool>,
}

fn observe(slots: &[EnvSlot], encoder: &ReprParams<f32>, domain: &DomainSpec, config: &EnvConfig) -> Result<Tensor<f32>> {
    let images: Vec<Image> = slots.iter().map(|s| render(&s.state, domain, config)).collect();
    let refs: Vec<&Image> = images.iter().collect();
    let speeds: Vec<f64> = slots.iter().map(|s| s.state.speed).collect();
    policy_inputs(encoder, &refs, &speeds, config.v_max)
}

/// Train a policy on `domain` with the encoder held fixed.
///
/// `n_envs` environments advance in lockstep, each with its own random
/// stream for track seeds and action noise. Episodes that hit the step cap
/// are treated as terminal. A checkpoint is taken every
/// [`PpoConfig::checkpoint_every`] environment steps and at the end.
pub fn train_ppo(
    encoder: &ReprParams<f32>,
    domain: &DomainSpec,
    env_config: &EnvConfig,
    config: &PpoConfig,
) -> Result<PpoOutcome> {
    config.validate()?;
    env_config.validate()?;
    if encoder.image_size != env_config.image_size {
        return Err(Error::Shape(format!(
            "encoder expects {} px observations but the environment renders {}",
            encoder.image_size, env_config.image_size
        )));
    }
    let input_dim = encoder.dim_general + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut policy = PolicyParams::<f32>::new(&mut rng, input_dim, config.hidden, config.init_log_std);
    let shapes: Vec<usize> = policy.param_groups().iter().map(|g| g.len()).collect();
    let mut adam = Adam::new(
        AdamConfig {
            max_grad_norm: Some(config.max_grad_norm),
            ..AdamConfig::with_lr(config.lr)
        },
        &shapes,
    );
    let mut slots: Vec<EnvSlot> = (0..config.n_envs).map(|i| EnvSlot::new(config.seed, i, env_config)).collect();
    let horizon = config.rollout_length.div_ceil(config.n_envs);
    let interval = config.checkpoint_every();
    let eval_seeds = checkpoint_eval_seeds(config.seed, config.eval_episodes);
    let mut recent: VecDeque<f64> = VecDeque::with_capacity(20);
    let mut curve = Vec::new();
    let mut checkpoints = Vec::new();
    let mut next_checkpoint = interval;
    let mut step = 0;

    let take_checkpoint = |policy: &PolicyParams<f32>, step: usize| -> Result<PolicyCheckpoint> {
        let eval_return = if eval_seeds.is_empty() {
            f64::NAN
        } else {
            let r = run_episodes(policy, encoder, domain, env_config, &eval_seeds)?;
            r.iter().map(|e| e.score).sum::<f64>() / r.len() as f64
        };
        log::info!("ppo checkpoint at step {step}: eval return {eval_return:.3}");
        Ok(PolicyCheckpoint {
            step,
            policy: policy.clone(),
            eval_return,
        })
    };

    while step < config.total_steps {
        let mut buffers: Vec<EnvBuffer> = (0..config.n_envs).map(|_| EnvBuffer::default()).collect();
        let mut x = observe(&slots, encoder, domain, env_config)?;
        for _ in 0..horizon {
            let noise: Vec<f64> = slots
                .iter_mut()
                .flat_map(|s| [s.rng.sample::<f64, _>(StandardNormal), s.rng.sample::<f64, _>(StandardNormal)])
                .collect();
            let acts = policy.act(&x, &noise)?;
            for (e, (slot, a)) in slots.iter_mut().zip(&acts).enumerate() {
                let buf = &mut buffers[e];
                buf.inputs.extend_from_slice(&x.data()[e * input_dim..(e + 1) * input_dim]);
                buf.raw.push(a.raw);
                buf.log_prob.push(a.log_prob);
                buf.value.push(a.value);
                let r = env::step_on(&slot.track, &slot.state, a.action, env_config)?;
                slot.episode_return += r.reward;
                buf.reward.push(r.reward);
                buf.done.push(r.done);
                if r.done {
                    if recent.len() == 20 {
                        recent.pop_front();
                    }
                    recent.push_back(slot.episode_return);
                    slot.restart(env_config);
                } else {
                    slot.state = r.next_state;
                }
            }
            step += config.n_envs;
            x = observe(&slots, encoder, domain, env_config)?;
        }
        let bootstrap = policy.value(&x)?;

        let mut inputs = Vec::new();
        let mut raw = Vec::new();
        let mut old_log_prob = Vec::new();
        let mut advantages = Vec::new();
        let mut returns = Vec::new();
        for (e, buf) in buffers.into_iter().enumerate() {
            let (adv, ret) = compute_gae(
                &buf.reward,
                &buf.value,
                &buf.done,
                bootstrap[e] as f64,
                config.gamma,
                config.lam,
            );
            inputs.extend(buf.inputs);
            raw.extend(buf.raw);
            old_log_prob.extend(buf.log_prob);
            advantages.extend(adv);
            returns.extend(ret);
        }
        normalize_advantages(&mut advantages);
        let total = raw.len();
        let mut order: Vec<usize> = (0..total).collect();
        let mut sum = PpoLossParts::default();
        let mut batches = 0;
        for _ in 0..config.epochs_per_update {
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.minibatch) {
                let mut xi = Vec::with_capacity(chunk.len() * input_dim);
                for &i in chunk {
                    xi.extend_from_slice(&inputs[i * input_dim..(i + 1) * input_dim]);
                }
                let batch = PpoBatch {
                    inputs: Tensor::new(vec![chunk.len(), input_dim], xi),
                    raw: chunk.iter().map(|&i| raw[i]).collect(),
                    old_log_prob: chunk.iter().map(|&i| old_log_prob[i]).collect(),
                    advantages: chunk.iter().map(|&i| advantages[i]).collect(),
                    returns: chunk.iter().map(|&i| returns[i]).collect(),
                };
                let (parts, grads) = ppo_loss_grad(&policy, &batch, config)?;
                adam.step(policy.param_groups_mut(), &grads.groups());
                sum.policy += parts.policy;
                sum.value += parts.value;
                sum.entropy += parts.entropy;
                batches += 1;
            }
        }
        let k = batches as f64;
        let point = CurvePoint {
            step,
            mean_return: if recent.is_empty() {
                f64::NAN
            } else {
                recent.iter().sum::<f64>() / recent.len() as f64
            },
            policy_loss: sum.policy / k,
            value_loss: sum.value / k,
            entropy: sum.entropy / k,
        };
        log::debug!("ppo step {step}: return {:.3} value loss {:.3}", point.mean_return, point.value_loss);
        curve.push(point);
        while step >= next_checkpoint && next_checkpoint <= config.total_steps {
            checkpoints.push(take_checkpoint(&policy, step)?);
            next_checkpoint += interval;
        }
    }
    if checkpoints.last().map(|c| c.step) != Some(step) {
        checkpoints.push(take_checkpoint(&policy, step)?);
    }
    Ok(PpoOutcome {
        policy,
        curve,
        checkpoints,
    })
}

/// CSV with columns `step,mean_return,policy_loss,value_loss,entropy`.
pub fn write_curve(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })?;
    for p in curve {
        w.serialize(p)?;
    }
    w.flush().at(path)?;
    Ok(())
}

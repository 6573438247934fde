use super::policy::{gaussian_entropy, squashed_log_prob, PolicyGrads, PolicyParams, ACTION_DIM};
use super::PpoConfig;
use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};
use serde::{Deserialize, Serialize};

/// Generalised advantage estimates and returns (`advantages + values`).
///
/// `dones[t]` marks that the transition at `t` ended its episode, so nothing
/// is bootstrapped across it. `bootstrap` is the value of the state after the
/// last transition.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lam: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n, "GAE inputs must be aligned");
    let mut adv = vec![0.0; n];
    let mut next_value = bootstrap;
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lam * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Shift and scale to zero mean and unit standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt() + 1e-8;
    for a in adv {
        *a = (*a - mean) / sd;
    }
}

/// One minibatch of PPO training data.
#[derive(Clone, Debug, PartialEq)]
pub struct PpoBatch<T> {
    /// `[B, input_dim]`.
    pub inputs: Tensor<T>,
    /// Pre-squash action samples.
    pub raw: Vec<[f64; ACTION_DIM]>,
    pub old_log_prob: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoLossParts {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
    /// Share of samples whose ratio left the clip interval.
    pub clip_fraction: f64,
}

struct Forward {
    means: Tensor<f64>,
    values: Vec<f64>,
    log_std: [f64; ACTION_DIM],
    ratios: Vec<f64>,
    parts: PpoLossParts,
}

fn forward<T: Real>(
    params: &PolicyParams<T>,
    batch: &PpoBatch<T>,
    config: &PpoConfig,
    traces: Option<&mut Vec<crate::nn::Trace<T>>>,
) -> Result<Forward> {
    params.check_input(&batch.inputs)?;
    let b = batch.inputs.dims()[0];
    if [batch.raw.len(), batch.old_log_prob.len(), batch.advantages.len(), batch.returns.len()]
        .iter()
        .any(|&l| l != b)
    {
        return Err(Error::Shape("PPO batch fields have different lengths".into()));
    }
    let (means, values) = match traces {
        Some(t) => {
            let (m, tm) = params.actor.forward_train(&batch.inputs);
            let (v, tv) = params.critic.forward_train(&batch.inputs);
            t.push(tm);
            t.push(tv);
            (m, v)
        }
        None => (params.actor.forward(&batch.inputs), params.critic.forward(&batch.inputs)),
    };
    let means: Tensor<f64> = means.cast();
    let values: Vec<f64> = values.data().iter().map(|v| v.to_f64().unwrap()).collect();
    let log_std = [params.log_std[0].to_f64().unwrap(), params.log_std[1].to_f64().unwrap()];
    let (lo, hi) = (1.0 - config.clip, 1.0 + config.clip);
    let mut ratios = Vec::with_capacity(b);
    let mut surrogate = 0.0;
    let mut clipped = 0usize;
    for i in 0..b {
        let m = [means.data()[2 * i], means.data()[2 * i + 1]];
        let lp = squashed_log_prob(batch.raw[i], m, log_std);
        let r = (lp - batch.old_log_prob[i]).exp();
        let a = batch.advantages[i];
        surrogate += (r * a).min(r.clamp(lo, hi) * a);
        clipped += (r < lo || r > hi) as usize;
        ratios.push(r);
    }
    let bf = b.max(1) as f64;
    let policy = -surrogate / bf;
    let value = values
        .iter()
        .zip(&batch.returns)
        .map(|(v, r)| (v - r).powi(2))
        .sum::<f64>()
        / bf;
    let entropy = gaussian_entropy(&log_std);
    let total = policy + config.value_coef * value - config.entropy_coef * entropy;
    Ok(Forward {
        means,
        values,
        log_std,
        ratios,
        parts: PpoLossParts {
            policy,
            value,
            entropy,
            total,
            clip_fraction: clipped as f64 / bf,
        },
    })
}

/// Clipped-surrogate PPO objective:
/// `policy + value_coef * value - entropy_coef * entropy` where
/// `policy = -mean(min(r A, clip(r, 1 - c, 1 + c) A))` and `value` is the
/// mean squared error against the returns.
pub fn ppo_loss<T: Real>(params: &PolicyParams<T>, batch: &PpoBatch<T>, config: &PpoConfig) -> Result<PpoLossParts> {
    Ok(forward(params, batch, config, None)?.parts)
}

pub fn ppo_loss_grad<T: Real>(
    params: &PolicyParams<T>,
    batch: &PpoBatch<T>,
    config: &PpoConfig,
) -> Result<(PpoLossParts, PolicyGrads<T>)> {
    let mut traces = Vec::with_capacity(2);
    let f = forward(params, batch, config, Some(&mut traces))?;
    let b = batch.inputs.dims()[0];
    let bf = b.max(1) as f64;
    let (lo, hi) = (1.0 - config.clip, 1.0 + config.clip);
    let mut grads = PolicyGrads::zeros(params);
    let mut d_mean = vec![T::zero(); b * ACTION_DIM];
    let mut d_log_std = [-config.entropy_coef; ACTION_DIM];
    for i in 0..b {
        let (r, a) = (f.ratios[i], batch.advantages[i]);
        // the unclipped branch is the active minimum (ties included)
        if r * a <= r.clamp(lo, hi) * a {
            let g = -r * a / bf;
            for j in 0..ACTION_DIM {
                let s = f.log_std[j].exp();
                let z = (batch.raw[i][j] - f.means.data()[2 * i + j]) / s;
                d_mean[2 * i + j] = T::lit(g * z / s);
                d_log_std[j] += g * (z * z - 1.0);
            }
        }
    }
    let d_value: Vec<T> = f
        .values
        .iter()
        .zip(&batch.returns)
        .map(|(v, r)| T::lit(config.value_coef * 2.0 * (v - r) / bf))
        .collect();
    let tv = traces.pop().unwrap();
    let tm = traces.pop().unwrap();
    params
        .actor
        .backward(tm, Tensor::new(vec![b, ACTION_DIM], d_mean), &mut grads.actor, false);
    params.critic.backward(tv, Tensor::new(vec![b, 1], d_value), &mut grads.critic, false);
    grads.log_std = d_log_std.iter().map(|&v| T::lit(v)).collect();
    Ok((f.parts, grads))
}

use super::policy::PolicyParams;
use crate::env::{self, random_action, render, CarState, DomainSpec, EnvConfig, Track};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{concat_columns, Tensor};
use crate::repr::{batch_tensor, ReprParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Episodes advanced together so the encoder sees reasonable batches.
const LOCKSTEP: usize = 64;

/// Policy inputs `[N, Dg + 1]`: encoder means followed by `speed / v_max`.
pub fn policy_inputs(
    encoder: &ReprParams<f32>,
    images: &[&Image],
    speeds: &[f64],
    v_max: f64,
) -> Result<Tensor<f32>> {
    if images.len() != speeds.len() {
        return Err(Error::Shape("one speed per observation is required".into()));
    }
    let x = batch_tensor(images, encoder.image_size)?;
    let mu = encoder.encode_tensor(&x)?.mu;
    let speed = Tensor::new(vec![speeds.len(), 1], speeds.iter().map(|&s| (s / v_max) as f32).collect());
    Ok(concat_columns(&[&mu, &speed]))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub track_seed: u64,
    /// Undiscounted return.
    pub score: f64,
    pub steps: u32,
    pub offroad: bool,
}

struct Live {
    index: usize,
    track: Track,
    state: CarState,
    score: f64,
}

/// Run one full episode per track seed with the deterministic (noise-free)
/// policy, observing through `domain`.
pub fn run_episodes(
    policy: &PolicyParams<f32>,
    encoder: &ReprParams<f32>,
    domain: &DomainSpec,
    config: &EnvConfig,
    track_seeds: &[u64],
) -> Result<Vec<EpisodeResult>> {
    if policy.embedding_dim() != encoder.dim_general {
        return Err(Error::Shape(format!(
            "policy expects a {}-wide embedding but the encoder produces {}",
            policy.embedding_dim(),
            encoder.dim_general
        )));
    }
    let mut results: Vec<Option<EpisodeResult>> = vec![None; track_seeds.len()];
    for chunk in (0..track_seeds.len()).collect::<Vec<_>>().chunks(LOCKSTEP) {
        let mut live: Vec<Live> = chunk
            .iter()
            .map(|&i| Live {
                index: i,
                track: Track::new(track_seeds[i], config.track_seed_components),
                state: env::reset(track_seeds[i], config),
                score: 0.0,
            })
            .collect();
        while !live.is_empty() {
            let images: Vec<Image> = live.iter().map(|l| render(&l.state, domain, config)).collect();
            let refs: Vec<&Image> = images.iter().collect();
            let speeds: Vec<f64> = live.iter().map(|l| l.state.speed).collect();
            let x = policy_inputs(encoder, &refs, &speeds, config.v_max)?;
            let acts = policy.act(&x, &vec![0.0; 2 * live.len()])?;
            let mut next = Vec::with_capacity(live.len());
            for (mut l, a) in live.into_iter().zip(acts) {
                let r = env::step_on(&l.track, &l.state, a.action, config)?;
                l.score += r.reward;
                l.state = r.next_state;
                if r.done {
                    results[l.index] = Some(EpisodeResult {
                        track_seed: l.state.track_seed,
                        score: l.score,
                        steps: l.state.step_count,
                        offroad: r.done_reason == env::DoneReason::Offroad,
                    });
                } else {
                    next.push(l);
                }
            }
            live = next;
        }
    }
    Ok(results.into_iter().map(|r| r.expect("every episode terminates")).collect())
}

/// Uniform random controller on the same track seeds; episode `i` draws its
/// actions from a stream seeded by `(seed, i)`.
pub fn run_random_episodes(config: &EnvConfig, track_seeds: &[u64], seed: u64) -> Vec<EpisodeResult> {
    track_seeds
        .iter()
        .enumerate()
        .map(|(i, &ts)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let track = Track::new(ts, config.track_seed_components);
            let mut state = env::reset(ts, config);
            let mut score = 0.0;
            loop {
                let r = env::step_on(&track, &state, random_action(&mut rng), config)
                    .expect("loop stops at terminal states");
                score += r.reward;
                state = r.next_state;
                if r.done {
                    return EpisodeResult {
                        track_seed: ts,
                        score,
                        steps: state.step_count,
                        offroad: r.done_reason == env::DoneReason::Offroad,
                    };
                }
            }
        })
        .collect()
}

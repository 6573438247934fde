//! Procedural top-down driving task.
//!
//! The car follows a road whose centerline is a seeded sum of sinusoids.
//! Dynamics and reward only read [`CarState`] and [`EnvConfig`]; a
//! [`DomainSpec`] only changes how a state is drawn, so every domain shares one
//! MDP and differs purely in observation space.

mod domain;
mod render;

pub use domain::{domain_set_from_json, domain_set_to_json, make_domain_set, Blob, DomainRole, DomainSpec, PRESETS};
pub use render::{pixel_classes, render, road_mask, PixelClass, RenderLayout};

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Square observation side in pixels.
    pub image_size: usize,
    pub dt: f64,
    pub a_max: f64,
    pub drag: f64,
    pub steer_gain: f64,
    pub v_max: f64,
    /// Road half-width in world units; the view is one world unit wide.
    pub half_width: f64,
    pub max_steps: u32,
    pub step_penalty: f64,
    pub offroad_penalty: f64,
    pub track_seed_components: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            dt: 0.1,
            a_max: 5.0,
            drag: 0.5,
            steer_gain: 2.0,
            v_max: 5.0,
            half_width: 0.15,
            max_steps: 200,
            step_penalty: 0.1,
            offroad_penalty: 10.0,
            track_seed_components: 3,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("a_max", self.a_max),
            ("drag", self.drag),
            ("steer_gain", self.steer_gain),
            ("v_max", self.v_max),
            ("half_width", self.half_width),
            ("step_penalty", self.step_penalty),
            ("offroad_penalty", self.offroad_penalty),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("env.{name} must be positive, got {v}")));
            }
        }
        if self.image_size < 32 {
            return Err(Error::Config(format!(
                "env.image_size must be at least 32, got {}",
                self.image_size
            )));
        }
        if self.max_steps < 1 {
            return Err(Error::Config("env.max_steps must be at least 1".into()));
        }
        if self.track_seed_components < 1 {
            return Err(Error::Config("env.track_seed_components must be at least 1".into()));
        }
        Ok(())
    }

    /// Upper bound on per-step reward.
    pub fn max_step_reward(&self) -> f64 {
        self.v_max * self.dt - self.step_penalty
    }

    /// Lower bound on per-step reward.
    pub fn min_step_reward(&self) -> f64 {
        -self.step_penalty - self.offroad_penalty
    }
}

/// Underlying simulator state, identical across domains.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarState {
    pub lateral: f64,
    pub progress: f64,
    pub speed: f64,
    pub step_count: u32,
    pub track_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    steer: f64,
    throttle: f64,
}

impl Action {
    /// Clamp into `steer in [-1, 1]`, `throttle in [0, 1]`; NaN becomes 0.
    pub fn new(steer: f64, throttle: f64) -> Self {
        let fix = |v: f64| if v.is_nan() { 0.0 } else { v };
        Self {
            steer: fix(steer).clamp(-1.0, 1.0),
            throttle: fix(throttle).clamp(0.0, 1.0),
        }
    }

    pub fn steer(&self) -> f64 {
        self.steer
    }

    pub fn throttle(&self) -> f64 {
        self.throttle
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoneReason {
    None,
    Offroad,
    MaxSteps,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub next_state: CarState,
    pub reward: f64,
    pub done: bool,
    pub done_reason: DoneReason,
}

/// One sinusoid `amp * sin(freq * y + phase)` of the road centerline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wave {
    pub amp: f64,
    pub freq: f64,
    pub phase: f64,
}

pub const AMP_RANGE: (f64, f64) = (0.03, 0.10);
pub const FREQ_RANGE: (f64, f64) = (1.0, 4.0);

/// Road centerline for one track seed.
#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub seed: u64,
    pub waves: Vec<Wave>,
}

impl Track {
    pub fn new(seed: u64, components: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves = (0..components)
            .map(|_| Wave {
                amp: rng.random_range(AMP_RANGE.0..AMP_RANGE.1),
                freq: rng.random_range(FREQ_RANGE.0..FREQ_RANGE.1),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            })
            .collect();
        Self { seed, waves }
    }

    pub fn for_state(state: &CarState, config: &EnvConfig) -> Self {
        Self::new(state.track_seed, config.track_seed_components)
    }

    #[inline]
    pub fn centerline(&self, y: f64) -> f64 {
        self.waves
            .iter()
            .map(|w| w.amp * (w.freq * y + w.phase).sin())
            .sum()
    }

    /// Signed distance of the car from the centerline at its progress.
    pub fn offset(&self, state: &CarState) -> f64 {
        state.lateral - self.centerline(state.progress)
    }
}

pub fn reset(track_seed: u64, config: &EnvConfig) -> CarState {
    let track = Track::new(track_seed, config.track_seed_components);
    CarState {
        lateral: track.centerline(0.0),
        progress: 0.0,
        speed: 0.0,
        step_count: 0,
        track_seed,
    }
}

/// True when the state can no longer be stepped.
pub fn is_terminal(state: &CarState, config: &EnvConfig) -> bool {
    state.step_count >= config.max_steps
        || Track::for_state(state, config).offset(state).abs() > config.half_width
}

/// Advance the simulation by one control interval.
///
/// Stepping a terminal state is rejected with [`Error::Precondition`].
pub fn step(state: &CarState, action: Action, config: &EnvConfig) -> Result<StepResult> {
    let track = Track::for_state(state, config);
    step_on(&track, state, action, config)
}

/// [`step`] with a pre-built track, for hot loops.
pub fn step_on(
    track: &Track,
    state: &CarState,
    action: Action,
    config: &EnvConfig,
) -> Result<StepResult> {
    debug_assert_eq!(track.seed, state.track_seed);
    if state.step_count >= config.max_steps || track.offset(state).abs() > config.half_width {
        return Err(Error::Precondition(format!(
            "step called on terminal state {state:?}"
        )));
    }
    let speed = (state.speed + (action.throttle * config.a_max - config.drag * state.speed) * config.dt)
        .clamp(0.0, config.v_max);
    let lateral = state.lateral + action.steer * config.steer_gain * state.speed * config.dt;
    let progress = state.progress + speed * config.dt;
    let next_state = CarState {
        lateral,
        progress,
        speed,
        step_count: state.step_count + 1,
        track_seed: state.track_seed,
    };
    let mut reward = (progress - state.progress) - config.step_penalty;
    let done_reason = if (lateral - track.centerline(progress)).abs() > config.half_width {
        reward -= config.offroad_penalty;
        DoneReason::Offroad
    } else if next_state.step_count == config.max_steps {
        DoneReason::MaxSteps
    } else {
        DoneReason::None
    };
    Ok(StepResult {
        next_state,
        reward,
        done: done_reason != DoneReason::None,
        done_reason,
    })
}

/// Uniform random controller used for dataset collection and baselines.
pub fn random_action<R: Rng + ?Sized>(rng: &mut R) -> Action {
    Action::new(rng.random_range(-1.0..=1.0), rng.random_range(0.0..=1.0))
}

//! Value-based learners: VDN self-play with random reward shaping, and
//! best-response training against frozen partner sets.

mod train;
mod value;

pub use train::{train_best_response, train_selfplay_pair};
pub use value::{
    argmax, LinearQ, Policy, PolicyProvenance, Representation, TabularQ, ValueFunction,
    POLICY_FORMAT_VERSION,
};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::envs::{GameEvents, GAME_EVENT_COUNT};
use crate::seed::Rng;
use crate::{Result, TbsError};

/// Base magnitudes of the random shaping coefficients, in game-event order.
pub const RANDOM_SHAPING_BASE: [f64; GAME_EVENT_COUNT] = [0.15, 0.5, 0.5, 0.15, 0.15, 0.5];

/// Conventional annealed shaping bonus: place onion 3, pickup plate 3, pickup soup 5.
pub const DEFAULT_ANNEALED_SHAPING: [f64; GAME_EVENT_COUNT] = [3.0, 3.0, 5.0, 0.0, 0.0, 0.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapingSpec {
    pub coefficients: Vec<f64>,
    /// Steps over which the shaping multiplier decays linearly to 0.
    pub anneal_horizon: u64,
    pub base_magnitudes: Vec<f64>,
}

impl ShapingSpec {
    /// A spec that never shapes.
    pub fn none() -> ShapingSpec {
        ShapingSpec {
            coefficients: vec![0.0; GAME_EVENT_COUNT],
            anneal_horizon: 0,
            base_magnitudes: vec![0.0; GAME_EVENT_COUNT],
        }
    }

    /// Shaping bonus for one agent's events at training step `step`.
    pub fn bonus(&self, events: &GameEvents, step: u64) -> f64 {
        let m = anneal_multiplier(step, self.anneal_horizon);
        if m == 0.0 {
            return 0.0;
        }
        let raw: f64 = self
            .coefficients
            .iter()
            .zip(events)
            .map(|(c, &e)| c * e as f64)
            .sum();
        m * raw
    }
}

/// Draws `coefficients[e] = base[e] * z_e` with independent standard normals.
pub fn sample_shaping(
    base_magnitudes: &[f64],
    anneal_horizon: u64,
    rng: &mut Rng,
) -> Result<ShapingSpec> {
    if let Some(b) = base_magnitudes.iter().find(|b| !(**b >= 0.0)) {
        return Err(TbsError::InvalidArgument(format!(
            "negative shaping base magnitude {b}"
        )));
    }
    let coefficients = base_magnitudes
        .iter()
        .map(|b| {
            let z: f64 = StandardNormal.sample(rng);
            b * z
        })
        .collect();
    Ok(ShapingSpec {
        coefficients,
        anneal_horizon,
        base_magnitudes: base_magnitudes.to_vec(),
    })
}

/// Linear decay from 1 at step 0 to 0 at `horizon`; 0 for every step past it.
pub fn anneal_multiplier(step: u64, horizon: u64) -> f64 {
    if step >= horizon {
        0.0
    } else {
        1.0 - step as f64 / horizon as f64
    }
}

/// λ-returns `G_t = r_t + γ[(1-λ) v_{t+1} + λ G_{t+1}]` for `t < T`.
///
/// `values` holds `v_0..v_T` (length `T + 1`); `v_T` bootstraps past the end of
/// the segment and must be 0 when the segment ends the episode.
pub fn compute_lambda_targets(
    rewards: &[f64],
    values: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    let t_len = rewards.len();
    if values.len() != t_len + 1 {
        return Err(TbsError::LengthMismatch {
            what: "bootstrap values",
            expected: t_len + 1,
            got: values.len(),
        });
    }
    let mut out = vec![0.0; t_len];
    let mut next = values[t_len];
    for t in (0..t_len).rev() {
        let g = rewards[t] + gamma * ((1.0 - lambda) * values[t + 1] + lambda * next);
        out[t] = g;
        next = g;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub epsilon_start: f64,
    pub epsilon_floor: f64,
    /// Fraction of `total_steps` over which epsilon decays to its floor.
    pub epsilon_anneal_fraction: f64,
    pub learning_rate: f64,
    /// Decay the learning rate linearly to 0 over training.
    pub anneal_lr: bool,
    pub total_steps: u64,
    /// Rollout segment length between λ-target updates.
    pub segment_steps: usize,
    pub representation: Representation,
    /// Annealed conventional shaping coefficients per game event.
    pub annealed_shaping: Vec<f64>,
    pub annealed_shaping_horizon: u64,
    /// Horizon of the random shaping; a sampled spec uses this as its anneal horizon.
    pub reward_shaping_horizon: u64,
    /// Episodes of greedy rollout used to measure the trained return.
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::vdn_default()
    }
}

impl TrainConfig {
    pub fn vdn_default() -> TrainConfig {
        TrainConfig {
            gamma: 0.99,
            lambda: 0.5,
            epsilon_start: 1.0,
            epsilon_floor: 0.05,
            epsilon_anneal_fraction: 0.2,
            learning_rate: 0.1,
            anneal_lr: true,
            total_steps: 200_000,
            segment_steps: 16,
            representation: Representation::Tabular,
            annealed_shaping: DEFAULT_ANNEALED_SHAPING.to_vec(),
            annealed_shaping_horizon: 100_000,
            reward_shaping_horizon: 200_000,
            eval_episodes: 20,
            seed: 0,
        }
    }

    pub fn br_default() -> TrainConfig {
        TrainConfig {
            segment_steps: 100,
            ..TrainConfig::vdn_default()
        }
    }

    pub fn epsilon(&self, step: u64) -> f64 {
        let horizon = (self.epsilon_anneal_fraction * self.total_steps as f64).round() as u64;
        let m = anneal_multiplier(step, horizon);
        self.epsilon_floor + (self.epsilon_start - self.epsilon_floor).max(0.0) * m
    }

    pub fn lr(&self, step: u64) -> f64 {
        if self.anneal_lr {
            self.learning_rate * anneal_multiplier(step, self.total_steps)
        } else {
            self.learning_rate
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TbsError::InvalidArgument(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if self.segment_steps == 0 {
            return bad("segment_steps must be positive");
        }
        if self.annealed_shaping.len() != GAME_EVENT_COUNT {
            return bad("annealed_shaping needs one coefficient per game event");
        }
        if !(self.learning_rate >= 0.0) {
            return bad("learning_rate must be non-negative");
        }
        Ok(())
    }
}

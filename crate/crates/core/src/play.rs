//! Episode execution shared by training-time evaluation, rollouts and the harness.

use crate::envs::{Environment, Observation};
use crate::learners::Policy;
use crate::seed::{self, Rng};
use crate::{Result, Seat};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepCtx {
    /// Zero-based timestep within the episode.
    pub t: usize,
    /// Whether this seat's action affects the environment at this step.
    pub acting: bool,
}

/// Anything that can occupy a seat for an episode.
pub trait Actor {
    fn begin_episode(&mut self, _seed: u64) {}
    fn act(&mut self, obs: &Observation, ctx: StepCtx, rng: &mut Rng) -> usize;
}

/// Greedy execution of a fixed policy.
pub struct Greedy<'a>(pub &'a Policy);

impl Actor for Greedy<'_> {
    fn act(&mut self, obs: &Observation, _ctx: StepCtx, rng: &mut Rng) -> usize {
        self.0.act(obs, rng)
    }
}

/// Greedy policy with an epsilon chance of a uniformly random action.
pub struct Noisy<'a> {
    pub policy: &'a Policy,
    pub epsilon: f64,
}

impl Actor for Noisy<'_> {
    fn act(&mut self, obs: &Observation, _ctx: StepCtx, rng: &mut Rng) -> usize {
        if self.epsilon > 0.0 && rng.random::<f64>() < self.epsilon {
            rng.random_range(0..self.policy.action_count())
        } else {
            self.policy.act(obs, rng)
        }
    }
}

/// Uniformly random actions.
pub struct UniformRandom {
    pub action_count: usize,
}

impl Actor for UniformRandom {
    fn act(&mut self, _obs: &Observation, _ctx: StepCtx, rng: &mut Rng) -> usize {
        rng.random_range(0..self.action_count)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajStep {
    pub obs: [Observation; 2],
    pub actions: [usize; 2],
    pub reward: f64,
    pub interactions: [Option<usize>; 2],
    pub acting: [bool; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<TrajStep>,
    pub concept_count: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn sparse_return(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn observations(&self, seat: Seat) -> Vec<Observation> {
        self.steps
            .iter()
            .map(|s| s.obs[seat.index()].clone())
            .collect()
    }
}

/// Plays one episode and returns the undiscounted sparse return.
pub fn run_episode(
    env: &mut dyn Environment,
    actors: [&mut dyn Actor; 2],
    seed: u64,
    record: bool,
) -> Result<(f64, Option<Trajectory>)> {
    env.reset(seed::derive(seed, "env", 0));
    let mut rng = seed::rng(seed::derive(seed, "act", 0));
    let [a1, a2] = actors;
    a1.begin_episode(seed::derive(seed, "actor", 1));
    a2.begin_episode(seed::derive(seed, "actor", 2));
    let mut steps = Vec::new();
    let mut total = 0.0;
    for t in 0..env.horizon() {
        let obs = [env.observe(Seat::First), env.observe(Seat::Second)];
        let acting = [env.is_acting(Seat::First), env.is_acting(Seat::Second)];
        let actions = [
            a1.act(
                &obs[0],
                StepCtx {
                    t,
                    acting: acting[0],
                },
                &mut rng,
            ),
            a2.act(
                &obs[1],
                StepCtx {
                    t,
                    acting: acting[1],
                },
                &mut rng,
            ),
        ];
        let tr = env.step(actions)?;
        total += tr.reward;
        if record {
            steps.push(TrajStep {
                obs,
                actions,
                reward: tr.reward,
                interactions: tr.interactions,
                acting,
            });
        }
        if tr.done {
            break;
        }
    }
    let trajectory = record.then(|| Trajectory {
        steps,
        concept_count: env.concept_set().len(),
    });
    Ok((total, trajectory))
}

//! The online TBS cooperator and the baseline cooperators.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::envs::{EnvSpec, Observation};
use crate::learners::Policy;
use crate::play::{Actor, StepCtx};
use crate::pool::PolicyPair;
use crate::seed::{self, Rng};
use crate::tom::{kl_bernoulli, FeatureTracker, ToMModel};
use crate::{Result, Seat, TbsError};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Best-response policies of one cluster, one per cooperator seat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrSet {
    pub seat1: Option<Policy>,
    pub seat2: Option<Policy>,
}

impl BrSet {
    pub fn get(&self, seat: Seat) -> Result<&Policy> {
        match seat {
            Seat::First => self.seat1.as_ref(),
            Seat::Second => self.seat2.as_ref(),
        }
        .ok_or_else(|| {
            TbsError::InvalidArgument(format!("no best response trained for seat {seat}"))
        })
    }
}

/// The deployable artifact: clusters, per-cluster BRs and ToM models, and the global ToM model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub format_version: u32,
    pub env: EnvSpec,
    pub assignment: ClusterAssignment,
    pub best_responses: Vec<BrSet>,
    pub cluster_tom: Vec<ToMModel>,
    pub global_tom: ToMModel,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.best_responses.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TbsConfig {
    /// Rolling window in timesteps; `None` accumulates over the whole episode.
    pub window: Option<usize>,
    pub steps_per_selection: usize,
}

impl Default for TbsConfig {
    fn default() -> Self {
        TbsConfig {
            window: None,
            steps_per_selection: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRow {
    pub t: usize,
    pub accumulators: Vec<f64>,
    pub active_index: usize,
    pub action: usize,
}

/// TBS cooperator: tracks, per cluster, the windowed sum of Bernoulli KL
/// divergences between the cluster and global ToM predictions, and plays the
/// BR of the closest cluster.
pub struct TbsAgent<'a> {
    policies: Vec<&'a Policy>,
    cluster_tom: &'a [ToMModel],
    global_tom: &'a ToMModel,
    config: TbsConfig,
    tracker: FeatureTracker,
    increments: VecDeque<Vec<f64>>,
    accumulators: Vec<f64>,
    active: usize,
    rng: Rng,
    trace: Option<Vec<DecisionRow>>,
}

impl<'a> TbsAgent<'a> {
    pub fn new(model: &'a ClusterModel, seat: Seat, config: TbsConfig) -> Result<TbsAgent<'a>> {
        let policies = model
            .best_responses
            .iter()
            .map(|b| b.get(seat))
            .collect::<Result<Vec<_>>>()?;
        TbsAgent::from_parts(policies, &model.cluster_tom, &model.global_tom, config)
    }

    pub fn from_parts(
        policies: Vec<&'a Policy>,
        cluster_tom: &'a [ToMModel],
        global_tom: &'a ToMModel,
        config: TbsConfig,
    ) -> Result<TbsAgent<'a>> {
        if policies.is_empty() || policies.len() != cluster_tom.len() {
            return Err(TbsError::InvalidArgument(format!(
                "{} best responses for {} cluster ToM models",
                policies.len(),
                cluster_tom.len()
            )));
        }
        if config.steps_per_selection == 0 || config.window == Some(0) {
            return Err(TbsError::InvalidArgument(
                "window and steps per selection must be positive".into(),
            ));
        }
        let k = policies.len();
        Ok(TbsAgent {
            policies,
            cluster_tom,
            global_tom,
            config,
            tracker: FeatureTracker::new(&global_tom.features),
            increments: VecDeque::new(),
            accumulators: vec![0.0; k],
            active: 0,
            rng: seed::rng(0),
            trace: None,
        })
    }

    pub fn k(&self) -> usize {
        self.policies.len()
    }

    pub fn active_index(&self) -> usize {
        self.active
    }

    pub fn accumulators(&self) -> &[f64] {
        &self.accumulators
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn take_trace(&mut self) -> Vec<DecisionRow> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Clears the history and draws the initial BR uniformly.
    pub fn reset(&mut self, seed: u64) {
        self.rng = seed::rng(seed);
        self.active = self.rng.random_range(0..self.k());
        self.accumulators.iter_mut().for_each(|a| *a = 0.0);
        self.increments.clear();
        self.tracker.clear();
    }

    /// Feeds one observation to all ToM models and updates the accumulators.
    pub fn observe_and_update(&mut self, obs: &Observation) -> Vec<f64> {
        let x = self.tracker.push(obs);
        let global = self.global_tom.predict(&x);
        let inc: Vec<f64> = self
            .cluster_tom
            .iter()
            .map(|m| {
                m.predict(&x)
                    .iter()
                    .zip(&global)
                    .map(|(&p, &q)| kl_bernoulli(p, q))
                    .sum()
            })
            .collect();
        match self.config.window {
            None => self
                .accumulators
                .iter_mut()
                .zip(&inc)
                .for_each(|(a, d)| *a += d),
            Some(w) => {
                self.increments.push_back(inc.clone());
                while self.increments.len() > w {
                    self.increments.pop_front();
                }
                for (i, a) in self.accumulators.iter_mut().enumerate() {
                    *a = self.increments.iter().map(|row| row[i]).sum();
                }
            }
        }
        inc
    }

    /// Reselects at `t mod n == 0` (after the first step); the current index wins ties.
    pub fn select(&mut self, t: usize) {
        if t == 0 || !t.is_multiple_of(self.config.steps_per_selection) {
            return;
        }
        self.active = argmin_sticky(&self.accumulators, self.active);
    }

    pub fn policy(&self) -> &'a Policy {
        self.policies[self.active]
    }
}

/// Index of the minimum; `current` if it ties for the minimum, else the lowest index.
pub fn argmin_sticky(values: &[f64], current: usize) -> usize {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if values[current] == min {
        return current;
    }
    values.iter().position(|&v| v == min).unwrap_or(current)
}

impl Actor for TbsAgent<'_> {
    fn begin_episode(&mut self, seed: u64) {
        self.reset(seed);
    }

    fn act(&mut self, obs: &Observation, ctx: StepCtx, rng: &mut Rng) -> usize {
        self.observe_and_update(obs);
        self.select(ctx.t);
        let action = self.policy().act(obs, rng);
        if let Some(trace) = &mut self.trace {
            trace.push(DecisionRow {
                t: ctx.t,
                accumulators: self.accumulators.clone(),
                active_index: self.active,
                action,
            });
        }
        action
    }
}

pub fn decision_log_csv(rows: &[DecisionRow]) -> String {
    let k = rows.first().map_or(0, |r| r.accumulators.len());
    let mut out = String::from("t,active_index,action");
    for i in 0..k {
        write!(out, ",acc_{i}").unwrap();
    }
    out.push('\n');
    for r in rows {
        write!(out, "{},{},{}", r.t, r.active_index, r.action).unwrap();
        for a in &r.accumulators {
            write!(out, ",{a}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Plays one pool policy, drawn uniformly per episode, for the whole episode.
pub struct RandomSelection<'a> {
    policies: Vec<&'a Policy>,
    current: usize,
}

impl<'a> RandomSelection<'a> {
    pub fn new(pool: &'a [PolicyPair], seat: Seat) -> Result<RandomSelection<'a>> {
        if pool.is_empty() {
            return Err(TbsError::EmptyPartnerSet);
        }
        Ok(RandomSelection {
            policies: pool.iter().map(|p| p.seat(seat)).collect(),
            current: 0,
        })
    }

    pub fn current(&self) -> usize {
        self.current
    }
}

impl Actor for RandomSelection<'_> {
    fn begin_episode(&mut self, seed: u64) {
        self.current = seed::rng(seed).random_range(0..self.policies.len());
    }

    fn act(&mut self, obs: &Observation, _ctx: StepCtx, rng: &mut Rng) -> usize {
        self.policies[self.current].act(obs, rng)
    }
}

/// The policy co-trained with the partner in the cooperator's seat.
pub fn baseline_oracle(partner: &PolicyPair, seat: Seat) -> &Policy {
    partner.seat(seat)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sticky_argmin() {
        assert_eq!(argmin_sticky(&[1.0, 0.5, 0.5], 2), 2);
        assert_eq!(argmin_sticky(&[1.0, 0.5, 0.5], 0), 1);
        assert_eq!(argmin_sticky(&[0.0, 0.0], 1), 1);
        assert_eq!(argmin_sticky(&[3.0, 2.0, 1.0], 0), 2);
    }

    #[test]
    fn decision_log_has_header_and_rows() {
        let rows = vec![DecisionRow {
            t: 0,
            accumulators: vec![0.5, 1.0],
            active_index: 1,
            action: 3,
        }];
        assert_eq!(
            decision_log_csv(&rows),
            "t,active_index,action,acc_0,acc_1\n0,1,3,0.5,1\n"
        );
    }
}

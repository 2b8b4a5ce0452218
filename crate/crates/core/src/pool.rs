//! Partner populations: self-play pairs, planted signaling conventions, rollouts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::signaling::{self, Phase, BAIL};
use crate::envs::EnvSpec;
use crate::learners::{
    sample_shaping, train_selfplay_pair, Policy, PolicyProvenance, ShapingSpec, TabularQ,
    TrainConfig, ValueFunction, RANDOM_SHAPING_BASE,
};
use crate::play::{run_episode, Greedy, Trajectory};
use crate::seed;
use crate::{Result, Seat, TbsError};

pub const MAX_RETRIES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairProvenance {
    pub seed: u64,
    pub shaping: [ShapingSpec; 2],
    pub config_hash: String,
    /// Planted convention family, when the pair was constructed rather than trained.
    #[serde(default)]
    pub family: Option<usize>,
}

/// Two co-trained seat policies and their measured self-play return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyPair {
    pub seat1: Policy,
    pub seat2: Policy,
    pub self_play_return: f64,
    pub provenance: PairProvenance,
}

impl PolicyPair {
    pub fn seat(&self, seat: Seat) -> &Policy {
        match seat {
            Seat::First => &self.seat1,
            Seat::Second => &self.seat2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartnerPool {
    pub env_spec: EnvSpec,
    pub pairs: Vec<PolicyPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub seed: u64,
    pub shaping: [Vec<f64>; 2],
    pub self_play_return: f64,
    pub family: Option<usize>,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolManifest {
    pub env: String,
    pub pairs: Vec<ManifestEntry>,
}

impl PartnerPool {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.pairs.iter().map(|p| p.provenance.seed).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> PartnerPool {
        PartnerPool {
            env_spec: self.env_spec.clone(),
            pairs: indices.iter().map(|&i| self.pairs[i].clone()).collect(),
        }
    }

    pub fn manifest(&self) -> PoolManifest {
        PoolManifest {
            env: self.env_spec.id(),
            pairs: self
                .pairs
                .iter()
                .enumerate()
                .map(|(index, p)| ManifestEntry {
                    index,
                    seed: p.provenance.seed,
                    shaping: [
                        p.provenance.shaping[0].coefficients.clone(),
                        p.provenance.shaping[1].coefficients.clone(),
                    ],
                    self_play_return: p.self_play_return,
                    family: p.provenance.family,
                    config_hash: p.provenance.config_hash.clone(),
                })
                .collect(),
        }
    }
}

fn train_one(env_spec: &EnvSpec, config: &TrainConfig, pair_seed: u64) -> Result<PolicyPair> {
    let mut last = None;
    for attempt in 0..=MAX_RETRIES {
        let run_seed = if attempt == 0 {
            pair_seed
        } else {
            seed::derive(pair_seed, "retry", attempt as u64)
        };
        let mut rng = seed::rng(seed::derive(run_seed, "shaping", 0));
        let shaping = [
            sample_shaping(
                &RANDOM_SHAPING_BASE,
                config.reward_shaping_horizon,
                &mut rng,
            )?,
            sample_shaping(
                &RANDOM_SHAPING_BASE,
                config.reward_shaping_horizon,
                &mut rng,
            )?,
        ];
        let cfg = TrainConfig {
            seed: run_seed,
            ..config.clone()
        };
        match train_selfplay_pair(env_spec, &shaping, &cfg) {
            Ok(pair) => return Ok(pair),
            Err(TbsError::Divergence(msg)) => {
                log::warn!("pair seed {run_seed} diverged (attempt {attempt}): {msg}");
                last = Some(msg);
            }
            Err(e) => return Err(e),
        }
    }
    Err(TbsError::Divergence(format!(
        "pair seed {pair_seed} failed after {MAX_RETRIES} retries: {}",
        last.unwrap_or_default()
    )))
}

/// Trains `n` self-play pairs with independent shaping draws and seeds.
/// `stage` separates seed streams, e.g. training pool vs held-out pool.
pub fn build_pool(
    env_spec: &EnvSpec,
    n: usize,
    config: &TrainConfig,
    master_seed: u64,
    stage: &str,
) -> Result<PartnerPool> {
    if n == 0 {
        return Err(TbsError::InvalidArgument(
            "pool size must be at least 1".into(),
        ));
    }
    let pairs = (0..n)
        .into_par_iter()
        .map(|i| train_one(env_spec, config, seed::derive(master_seed, stage, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PartnerPool {
        env_spec: env_spec.clone(),
        pairs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub mean_return: f64,
    pub returns: Vec<f64>,
    pub trajectories: Vec<Trajectory>,
}

/// Greedy execution of a seat pairing over `episodes` seeded episodes.
pub fn rollout(
    p1: &Policy,
    p2: &Policy,
    env_spec: &EnvSpec,
    episodes: usize,
    seed: u64,
    record: bool,
) -> Result<RolloutResult> {
    if episodes == 0 {
        return Err(TbsError::InvalidArgument(
            "rollout needs at least one episode".into(),
        ));
    }
    let mut env = env_spec.build()?;
    let mut returns = Vec::with_capacity(episodes);
    let mut trajectories = Vec::new();
    for e in 0..episodes {
        let (ret, traj) = run_episode(
            env.as_mut(),
            [&mut Greedy(p1), &mut Greedy(p2)],
            seed::derive(seed, "episode", e as u64),
            record,
        )?;
        returns.push(ret);
        trajectories.extend(traj);
    }
    Ok(RolloutResult {
        mean_return: returns.iter().sum::<f64>() / episodes as f64,
        returns,
        trajectories,
    })
}

/// Signaling codebook of a convention family: number `j + 1` is sent as symbol `book[j]`.
///
/// Families 0..4 are the cyclic shifts `j -> (j + f) mod 4`, which disagree on
/// every number pairwise. Later families enumerate the remaining permutations
/// in lexicographic order.
pub fn codebook(family: usize) -> [usize; 4] {
    let mut order: Vec<[usize; 4]> = (0..4)
        .map(|f| [f, (1 + f) % 4, (2 + f) % 4, (3 + f) % 4])
        .collect();
    let mut all = Vec::new();
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    let p = [a, b, c, d];
                    let mut seen = [false; 4];
                    p.iter().for_each(|&x| seen[x] = true);
                    if seen.iter().all(|&s| s) && !order.contains(&p) {
                        all.push(p);
                    }
                }
            }
        }
    }
    order.extend(all);
    order[family % order.len()]
}

pub const CODEBOOK_COUNT: usize = 24;

/// A hand-built signaling pair that follows `codebook(family)` perfectly.
pub fn planted_signaling_pair(family: usize, pair_seed: u64) -> PolicyPair {
    let book = codebook(family);
    let spec = signaling::obs_spec();
    let mut alice = TabularQ {
        action_count: signaling::NUM_ACTIONS,
        table: Default::default(),
    };
    let mut bob = alice.clone();
    let one_hot = |a: usize| {
        let mut v = vec![0.0; signaling::NUM_ACTIONS];
        v[a] = 1.0;
        v
    };
    for (j, &symbol) in book.iter().enumerate() {
        let number = j as u16 + 1;
        alice
            .table
            .insert(vec![Phase::AliceTurn.code(), number, 0, 0], one_hot(symbol));
        bob.table.insert(
            vec![Phase::BobTurn.code(), 0, symbol as u16 + 1, 0],
            one_hot(j),
        );
    }
    bob.table.insert(
        vec![Phase::BobTurn.code(), 0, BAIL as u16 + 1, 0],
        one_hot(BAIL),
    );
    let provenance = |seat: usize| PolicyProvenance {
        seed: pair_seed,
        shaping: None,
        config_hash: String::new(),
        note: format!("planted family {family} seat {seat}"),
    };
    PolicyPair {
        seat1: Policy::new(spec.clone(), ValueFunction::Tabular(alice), provenance(1)),
        seat2: Policy::new(spec, ValueFunction::Tabular(bob), provenance(2)),
        self_play_return: signaling::ROUNDS as f64,
        provenance: PairProvenance {
            seed: pair_seed,
            shaping: [ShapingSpec::none(), ShapingSpec::none()],
            config_hash: String::new(),
            family: Some(family),
        },
    }
}

/// A signaling pool where pair `i` follows `families[i]`.
pub fn planted_signaling_pool(families: &[usize], master_seed: u64, stage: &str) -> PartnerPool {
    PartnerPool {
        env_spec: EnvSpec::Signaling,
        pairs: families
            .iter()
            .enumerate()
            .map(|(i, &f)| planted_signaling_pair(f, seed::derive(master_seed, stage, i as u64)))
            .collect(),
    }
}

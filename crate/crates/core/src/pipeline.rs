//! End-to-end run configuration and the stage functions shared by the CLI,
//! the ablation sweeps and the tests.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{
    crossplay_matrix, default_k_range, select_k, similarity_matrix, spectral_fixed_k,
    ClusterAssignment, CrossPlayMatrix, RotationSearch, SimilarityMatrix,
};
use crate::coordinator::{BrSet, ClusterModel, TbsConfig, MODEL_FORMAT_VERSION};
use crate::envs::EnvSpec;
use crate::eval::{evaluate_methods, Cooperators, EvalConfig, EvalReport};
use crate::learners::{train_best_response, TrainConfig};
use crate::pool::{build_pool, planted_signaling_pool, PartnerPool, PolicyPair};
use crate::seed;
use crate::tom::{generate_dataset, train_tom, Scope, ToMDataset, ToMModel, TomConfig};
use crate::{Result, Seat, TbsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PoolSource {
    /// VDN self-play pairs with random reward shaping.
    Trained,
    /// Hand-built signaling pairs; training pair `i` follows codebook family
    /// `i mod families`, held-out pair `i` likewise.
    Planted { families: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolConfig {
    pub source: PoolSource,
    pub train_size: usize,
    pub heldout_size: usize,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            source: PoolSource::Trained,
            train_size: 10,
            heldout_size: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub k_min: Option<usize>,
    pub k_max: Option<usize>,
    /// Bypasses automatic k selection with plain spectral clustering.
    pub fixed_k: Option<usize>,
    pub xp_episodes: usize,
    pub rotation: RotationSearch,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            k_min: None,
            k_max: None,
            fixed_k: None,
            xp_episodes: 20,
            rotation: RotationSearch::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub env: EnvSpec,
    pub pool: PoolConfig,
    pub learner: TrainConfig,
    pub br: TrainConfig,
    pub cluster: ClusterConfig,
    pub tom: TomConfig,
    pub coordinator: TbsConfig,
    pub eval: EvalConfig,
    pub seed: u64,
    pub artifact_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: EnvSpec::Signaling,
            pool: PoolConfig::default(),
            learner: TrainConfig::vdn_default(),
            br: TrainConfig::br_default(),
            cluster: ClusterConfig::default(),
            tom: TomConfig::default(),
            coordinator: TbsConfig::default(),
            eval: EvalConfig::default(),
            seed: 0,
            artifact_dir: "artifacts".to_string(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TbsError::InvalidArgument(m));
        if self.pool.train_size == 0 || self.pool.heldout_size == 0 {
            return bad("pool sizes must be at least 1".into());
        }
        if let PoolSource::Planted { families } = self.pool.source {
            if self.env != EnvSpec::Signaling {
                return bad("planted pools exist only for the signaling game".into());
            }
            if families == 0 {
                return bad("planted pools need at least one family".into());
            }
        }
        if self.coordinator.steps_per_selection == 0 || self.coordinator.window == Some(0) {
            return bad("coordinator window and steps per selection must be positive".into());
        }
        if self.eval.episodes == 0 || self.cluster.xp_episodes == 0 {
            return bad("episode counts must be positive".into());
        }
        self.learner.validate()?;
        self.br.validate()
    }

    /// Hash of everything that affects results (the artifact directory excluded).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.artifact_dir.clear();
        seed::hash_json(&c)
    }

    pub fn stage_seed(&self, stage: &str, index: u64) -> u64 {
        seed::derive(self.seed, stage, index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pools {
    pub train: PartnerPool,
    pub heldout: PartnerPool,
}

pub fn stage_pools(cfg: &RunConfig) -> Result<Pools> {
    let p = &cfg.pool;
    Ok(match p.source {
        PoolSource::Trained => {
            let learner = TrainConfig {
                seed: 0,
                ..cfg.learner.clone()
            };
            Pools {
                train: build_pool(&cfg.env, p.train_size, &learner, cfg.seed, "pool")?,
                heldout: build_pool(&cfg.env, p.heldout_size, &learner, cfg.seed, "heldout")?,
            }
        }
        PoolSource::Planted { families } => {
            let train: Vec<usize> = (0..p.train_size).map(|i| i % families).collect();
            let heldout: Vec<usize> = (0..p.heldout_size).map(|i| i % families).collect();
            Pools {
                train: planted_signaling_pool(&train, cfg.seed, "pool"),
                heldout: planted_signaling_pool(&heldout, cfg.seed, "heldout"),
            }
        }
    })
}

pub fn stage_crossplay(
    cfg: &RunConfig,
    train: &PartnerPool,
) -> Result<(CrossPlayMatrix, SimilarityMatrix)> {
    let xp = crossplay_matrix(
        train,
        cfg.cluster.xp_episodes,
        cfg.stage_seed("crossplay", 0),
    )?;
    let sim = similarity_matrix(&xp)?;
    Ok((xp, sim))
}

pub fn stage_cluster(cfg: &RunConfig, sim: &SimilarityMatrix) -> Result<ClusterAssignment> {
    let n = sim.len();
    if let Some(k) = cfg.cluster.fixed_k {
        return spectral_fixed_k(sim, k, cfg.stage_seed("cluster", 0));
    }
    let (lo, hi) = default_k_range(n);
    let k_min = cfg.cluster.k_min.unwrap_or(lo).max(1);
    let k_max = cfg.cluster.k_max.unwrap_or(hi).min(n).max(k_min);
    let search = RotationSearch {
        seed: cfg.stage_seed("rotation", 0),
        ..cfg.cluster.rotation
    };
    select_k(sim, k_min, k_max, &search)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrEnsemble {
    pub clusters: Vec<BrSet>,
    /// One BR over the whole training pool (the single-BR baseline).
    pub single: BrSet,
}

fn train_br_set(
    cfg: &RunConfig,
    partners: &[PolicyPair],
    stage: &str,
    index: usize,
) -> Result<BrSet> {
    let mut set = BrSet {
        seat1: None,
        seat2: None,
    };
    for seat in cfg.env.cooperator_seats() {
        let br_cfg = TrainConfig {
            seed: cfg.stage_seed(stage, (index * 2 + seat.index()) as u64),
            ..cfg.br.clone()
        };
        let policy = train_best_response(&cfg.env, partners, seat, &br_cfg)?;
        match seat {
            Seat::First => set.seat1 = Some(policy),
            Seat::Second => set.seat2 = Some(policy),
        }
    }
    Ok(set)
}

pub fn stage_train_br(
    cfg: &RunConfig,
    train: &PartnerPool,
    assignment: &ClusterAssignment,
) -> Result<BrEnsemble> {
    let jobs: Vec<Option<usize>> = (0..assignment.k).map(Some).chain([None]).collect();
    let mut sets = jobs
        .par_iter()
        .map(|job| match job {
            Some(i) => train_br_set(cfg, &train.subset(&assignment.members(*i)).pairs, "br", *i),
            None => train_br_set(cfg, &train.pairs, "br-single", 0),
        })
        .collect::<Result<Vec<_>>>()?;
    let single = sets.pop().expect("single BR job");
    Ok(BrEnsemble {
        clusters: sets,
        single,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToMModels {
    pub clusters: Vec<ToMModel>,
    pub global: ToMModel,
}

pub fn stage_tom_datasets(
    cfg: &RunConfig,
    train: &PartnerPool,
    assignment: &ClusterAssignment,
    brs: &[BrSet],
) -> Result<Vec<ToMDataset>> {
    (0..assignment.k)
        .map(|i| {
            let members = assignment.members(i);
            let partners: Vec<&PolicyPair> = members.iter().map(|&m| &train.pairs[m]).collect();
            let responders = cfg
                .env
                .cooperator_seats()
                .into_iter()
                .map(|s| brs[i].get(s).map(|p| (s, p)))
                .collect::<Result<Vec<_>>>()?;
            generate_dataset(
                &cfg.env,
                &partners,
                &responders,
                &cfg.tom,
                cfg.stage_seed("tom-data", i as u64),
            )
        })
        .collect()
}

pub fn stage_train_tom(cfg: &RunConfig, datasets: &[ToMDataset]) -> Result<ToMModels> {
    let env = cfg.env.build()?;
    let concepts = env.concept_set().clone();
    let obs_spec = env.obs_spec().clone();
    let mut global_data = ToMDataset::empty(&concepts);
    datasets.iter().for_each(|d| global_data.extend(d));
    let jobs: Vec<(Scope, &ToMDataset)> = datasets
        .iter()
        .enumerate()
        .map(|(i, d)| (Scope::Cluster(i), d))
        .chain([(Scope::Global, &global_data)])
        .collect();
    let mut models = jobs
        .par_iter()
        .map(|(scope, d)| train_tom(d, *scope, &concepts, &obs_spec, &cfg.tom))
        .collect::<Result<Vec<_>>>()?;
    let global = models.pop().expect("global model");
    Ok(ToMModels {
        clusters: models,
        global,
    })
}

pub fn assemble_model(
    cfg: &RunConfig,
    assignment: ClusterAssignment,
    brs: &BrEnsemble,
    tom: ToMModels,
) -> ClusterModel {
    ClusterModel {
        format_version: MODEL_FORMAT_VERSION,
        env: cfg.env.clone(),
        assignment,
        best_responses: brs.clusters.clone(),
        cluster_tom: tom.clusters,
        global_tom: tom.global,
    }
}

/// All trained artifacts of one run, held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub pools: Pools,
    pub crossplay: CrossPlayMatrix,
    pub similarity: SimilarityMatrix,
    pub model: ClusterModel,
    pub single_br: BrSet,
}

pub fn train_all(cfg: &RunConfig) -> Result<Trained> {
    cfg.validate()?;
    let pools = stage_pools(cfg)?;
    let (crossplay, similarity) = stage_crossplay(cfg, &pools.train)?;
    let assignment = stage_cluster(cfg, &similarity)?;
    log::info!(
        "clustered {} pairs into k={} ({:?})",
        pools.train.len(),
        assignment.k,
        assignment.labels
    );
    let brs = stage_train_br(cfg, &pools.train, &assignment)?;
    let datasets = stage_tom_datasets(cfg, &pools.train, &assignment, &brs.clusters)?;
    let tom = stage_train_tom(cfg, &datasets)?;
    let model = assemble_model(cfg, assignment, &brs, tom);
    Ok(Trained {
        pools,
        crossplay,
        similarity,
        model,
        single_br: brs.single,
    })
}

pub fn evaluate(
    cfg: &RunConfig,
    trained: &Trained,
    axis: &str,
    axis_value: &str,
) -> Result<EvalReport> {
    evaluate_with(
        cfg,
        &trained.pools,
        &trained.model,
        &trained.single_br,
        axis,
        axis_value,
    )
}

pub fn evaluate_with(
    cfg: &RunConfig,
    pools: &Pools,
    model: &ClusterModel,
    single_br: &BrSet,
    axis: &str,
    axis_value: &str,
) -> Result<EvalReport> {
    let coop = Cooperators {
        env: &cfg.env,
        train_pool: &pools.train,
        model: Some(model),
        single_br: Some(single_br),
        tbs: cfg.coordinator,
        action_count: cfg.env.build()?.num_actions(),
    };
    evaluate_methods(
        &coop,
        &pools.heldout,
        &cfg.eval,
        cfg.stage_seed("evaluate", 0),
        axis,
        axis_value,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_json_round_trips_and_fills_defaults() {
        let cfg = RunConfig::from_json(
            r#"{"seed": 5, "pool": {"source": {"kind": "planted", "families": 2}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.pool.train_size, 10);
        assert_eq!(cfg.learner.lambda, 0.5);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
        let mut other = cfg.clone();
        other.artifact_dir = "elsewhere".into();
        assert_eq!(other.hash(), cfg.hash());
        other.seed = 6;
        assert_ne!(other.hash(), cfg.hash());
    }

    #[test]
    fn planted_pools_are_disjoint_by_seed() {
        let cfg = RunConfig {
            pool: PoolConfig {
                source: PoolSource::Planted { families: 2 },
                train_size: 4,
                heldout_size: 4,
            },
            ..RunConfig::default()
        };
        let pools = stage_pools(&cfg).unwrap();
        crate::eval::check_disjoint(&pools.train, &pools.heldout).unwrap();
        assert!(crate::eval::check_disjoint(&pools.train, &pools.train).is_err());
    }
}

//! Stage artifacts on disk: `<out>/<stage>/<key>/<file>`, each JSON file wrapped
//! in an envelope that records the stage key and the upstream key.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tbs_core::learners::TrainConfig;
use tbs_core::pipeline::{PoolSource, RunConfig};
use tbs_core::seed::hash_json;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pool,
    Crossplay,
    Cluster,
    TrainBr,
    TrainTom,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Pool,
        Stage::Crossplay,
        Stage::Cluster,
        Stage::TrainBr,
        Stage::TrainTom,
        Stage::Evaluate,
    ];

    /// Subcommand that produces this stage.
    pub fn command(self) -> &'static str {
        match self {
            Stage::Pool => "build-pool",
            Stage::Crossplay => "crossplay",
            Stage::Cluster => "cluster",
            Stage::TrainBr => "train-br",
            Stage::TrainTom => "train-tom",
            Stage::Evaluate => "evaluate",
        }
    }

    pub fn dir_name(self) -> &'static str {
        match self {
            Stage::Pool => "pool",
            Stage::Crossplay => "crossplay",
            Stage::Cluster => "cluster",
            Stage::TrainBr => "br",
            Stage::TrainTom => "tom",
            Stage::Evaluate => "evaluate",
        }
    }

    pub fn upstream(self) -> Option<Stage> {
        let i = Stage::ALL.iter().position(|&s| s == self).unwrap();
        i.checked_sub(1).map(|j| Stage::ALL[j])
    }
}

/// Config hash of every field a stage and its upstream stages read.
pub fn stage_key(cfg: &RunConfig, stage: Stage) -> String {
    let up = stage.upstream().map(|s| stage_key(cfg, s));
    let slice = match stage {
        Stage::Pool => {
            let learner: Option<&TrainConfig> = match cfg.pool.source {
                PoolSource::Trained => Some(&cfg.learner),
                PoolSource::Planted { .. } => None,
            };
            serde_json::json!({"env": cfg.env, "pool": cfg.pool, "learner": learner, "seed": cfg.seed})
        }
        Stage::Crossplay => serde_json::json!({"xp_episodes": cfg.cluster.xp_episodes}),
        Stage::Cluster => serde_json::json!({
            "k_min": cfg.cluster.k_min,
            "k_max": cfg.cluster.k_max,
            "fixed_k": cfg.cluster.fixed_k,
            "rotation": cfg.cluster.rotation,
        }),
        Stage::TrainBr => serde_json::json!({"br": cfg.br}),
        Stage::TrainTom => serde_json::json!({"tom": cfg.tom}),
        Stage::Evaluate => serde_json::json!({"coordinator": cfg.coordinator, "eval": cfg.eval}),
    };
    hash_json(&serde_json::json!({"stage": stage.dir_name(), "upstream": up, "config": slice}))
}

#[derive(Debug, Serialize, Deserialize)]
struct Envelope<T> {
    stage: String,
    config_hash: String,
    upstream: Option<String>,
    data: T,
}

pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Store {
        Store { root: root.into() }
    }

    pub fn stage_dir(&self, cfg: &RunConfig, stage: Stage) -> PathBuf {
        self.root.join(stage.dir_name()).join(stage_key(cfg, stage))
    }

    pub fn path(&self, cfg: &RunConfig, stage: Stage, file: &str) -> PathBuf {
        self.stage_dir(cfg, stage).join(file)
    }

    pub fn exists(&self, cfg: &RunConfig, stage: Stage, file: &str) -> bool {
        self.path(cfg, stage, file).is_file()
    }

    pub fn write_json<T: Serialize>(
        &self,
        cfg: &RunConfig,
        stage: Stage,
        file: &str,
        data: &T,
    ) -> Result<PathBuf> {
        let env = Envelope {
            stage: stage.dir_name().to_string(),
            config_hash: stage_key(cfg, stage),
            upstream: stage.upstream().map(|s| stage_key(cfg, s)),
            data,
        };
        let mut text = serde_json::to_string_pretty(&env)?;
        text.push('\n');
        self.write_text(cfg, stage, file, &text)
    }

    pub fn write_text(
        &self,
        cfg: &RunConfig,
        stage: Stage,
        file: &str,
        text: &str,
    ) -> Result<PathBuf> {
        let path = self.path(cfg, stage, file);
        write_atomic(&path, text.as_bytes()).with_context(|| {
            format!(
                "stage `{}`: cannot write {}",
                stage.command(),
                path.display()
            )
        })?;
        Ok(path)
    }

    /// Loads an artifact produced by `stage`, failing with the command to rerun
    /// when it is missing or was written for a different configuration.
    pub fn read_json<T: DeserializeOwned>(
        &self,
        cfg: &RunConfig,
        stage: Stage,
        file: &str,
    ) -> Result<T> {
        let path = self.path(cfg, stage, file);
        let rerun = format!("run `tbs {}` with this config first", stage.command());
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(_) => bail!(
                "stage `{}`: missing artifact {}; {rerun}",
                stage.command(),
                path.display()
            ),
        };
        let env: Envelope<T> = serde_json::from_str(&text).with_context(|| {
            format!(
                "stage `{}`: unreadable artifact {}; {rerun}",
                stage.command(),
                path.display()
            )
        })?;
        let key = stage_key(cfg, stage);
        let up = stage.upstream().map(|s| stage_key(cfg, s));
        if env.stage != stage.dir_name() || env.config_hash != key || env.upstream != up {
            bail!(
                "stage `{}`: stale artifact {} (config hash {} but expected {key}); {rerun}",
                stage.command(),
                path.display(),
                env.config_hash
            );
        }
        Ok(env.data)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("artifact");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

//! Value functions and the greedy policies built on them.

use std::collections::HashMap;

use rand::Rng as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::envs::{FieldKind, ObsSpec, Observation};
use crate::learners::ShapingSpec;
use crate::seed::Rng;

pub const POLICY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    #[default]
    Tabular,
    Linear,
}

/// Per-observation action values keyed by the categorical projection of the observation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TabularQ {
    pub action_count: usize,
    pub table: HashMap<Vec<u16>, Vec<f64>>,
}

/// Serialized form of a table: rows sorted by key so output is byte-stable.
#[derive(Serialize, Deserialize)]
struct TableRows {
    action_count: usize,
    rows: Vec<(Vec<u16>, Vec<f64>)>,
}

impl Serialize for TabularQ {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut rows: Vec<(Vec<u16>, Vec<f64>)> = self
            .table
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        TableRows {
            action_count: self.action_count,
            rows,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TabularQ {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let t = TableRows::deserialize(d)?;
        Ok(TabularQ {
            action_count: t.action_count,
            table: t.rows.into_iter().collect(),
        })
    }
}

/// Linear action values over one-hot categorical features plus a bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearQ {
    pub action_count: usize,
    /// Offset of each categorical field in the feature vector (`None` for skipped fields).
    pub offsets: Vec<Option<usize>>,
    pub feature_dim: usize,
    /// Row-major `action_count x feature_dim`.
    pub weights: Vec<f64>,
}

impl LinearQ {
    fn new(spec: &ObsSpec, action_count: usize) -> LinearQ {
        let mut dim = 1; // bias
        let offsets = spec
            .fields
            .iter()
            .map(|f| {
                (f.kind == FieldKind::Categorical).then(|| {
                    let o = dim;
                    dim += f.cardinality as usize;
                    o
                })
            })
            .collect();
        LinearQ {
            action_count,
            offsets,
            feature_dim: dim,
            weights: vec![0.0; action_count * dim],
        }
    }

    fn active(&self, obs: &Observation) -> Vec<usize> {
        let mut idx = vec![0];
        for (off, &v) in self.offsets.iter().zip(&obs.0) {
            if let Some(o) = off {
                idx.push(o + v as usize);
            }
        }
        idx
    }

    fn q(&self, active: &[usize], action: usize) -> f64 {
        let row = &self.weights[action * self.feature_dim..(action + 1) * self.feature_dim];
        active.iter().map(|&i| row[i]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "representation", rename_all = "snake_case")]
pub enum ValueFunction {
    Tabular(TabularQ),
    Linear(LinearQ),
}

impl ValueFunction {
    pub fn new(repr: Representation, spec: &ObsSpec, action_count: usize) -> ValueFunction {
        match repr {
            Representation::Tabular => ValueFunction::Tabular(TabularQ {
                action_count,
                table: HashMap::new(),
            }),
            Representation::Linear => ValueFunction::Linear(LinearQ::new(spec, action_count)),
        }
    }

    pub fn action_count(&self) -> usize {
        match self {
            ValueFunction::Tabular(t) => t.action_count,
            ValueFunction::Linear(l) => l.action_count,
        }
    }

    /// Action values, or `None` for a tabular observation never updated.
    pub fn values(&self, spec: &ObsSpec, obs: &Observation) -> Option<Vec<f64>> {
        match self {
            ValueFunction::Tabular(t) => t.table.get(&spec.policy_key(obs)).cloned(),
            ValueFunction::Linear(l) => {
                let active = l.active(obs);
                Some((0..l.action_count).map(|a| l.q(&active, a)).collect())
            }
        }
    }

    pub fn q(&self, spec: &ObsSpec, obs: &Observation, action: usize) -> f64 {
        match self {
            ValueFunction::Tabular(t) => t
                .table
                .get(&spec.policy_key(obs))
                .map_or(0.0, |v| v[action]),
            ValueFunction::Linear(l) => l.q(&l.active(obs), action),
        }
    }

    /// Greedy value; unvisited tabular entries count as 0.
    pub fn max_q(&self, spec: &ObsSpec, obs: &Observation) -> f64 {
        self.values(spec, obs)
            .map_or(0.0, |v| v.into_iter().fold(f64::NEG_INFINITY, f64::max))
    }

    /// Moves Q(obs, action) by `step` (already scaled by the learning rate).
    pub fn update(&mut self, spec: &ObsSpec, obs: &Observation, action: usize, step: f64) -> f64 {
        match self {
            ValueFunction::Tabular(t) => {
                let n = t.action_count;
                let entry = t
                    .table
                    .entry(spec.policy_key(obs))
                    .or_insert_with(|| vec![0.0; n]);
                entry[action] += step;
                entry[action]
            }
            ValueFunction::Linear(l) => {
                let active = l.active(obs);
                let share = step / active.len() as f64;
                let dim = l.feature_dim;
                for &i in &active {
                    l.weights[action * dim + i] += share;
                }
                l.q(&active, action)
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        match self {
            ValueFunction::Tabular(t) => t.table.values().flatten().all(|v| v.is_finite()),
            ValueFunction::Linear(l) => l.weights.iter().all(|v| v.is_finite()),
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PolicyProvenance {
    pub seed: u64,
    pub shaping: Option<ShapingSpec>,
    pub config_hash: String,
    #[serde(default)]
    pub note: String,
}

/// A greedy decision rule over a value function. Tabular observations never
/// visited in training are played uniformly at random.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub format_version: u32,
    pub obs_spec: ObsSpec,
    pub value: ValueFunction,
    pub provenance: PolicyProvenance,
}

impl Policy {
    pub fn new(obs_spec: ObsSpec, value: ValueFunction, provenance: PolicyProvenance) -> Policy {
        Policy {
            format_version: POLICY_FORMAT_VERSION,
            obs_spec,
            value,
            provenance,
        }
    }

    /// An empty tabular policy: uniformly random everywhere.
    pub fn uniform(obs_spec: ObsSpec, action_count: usize) -> Policy {
        Policy::new(
            obs_spec,
            ValueFunction::Tabular(TabularQ {
                action_count,
                table: HashMap::new(),
            }),
            PolicyProvenance::default(),
        )
    }

    pub fn action_count(&self) -> usize {
        self.value.action_count()
    }

    pub fn greedy(&self, obs: &Observation) -> Option<usize> {
        self.value.values(&self.obs_spec, obs).map(|v| argmax(&v))
    }

    pub fn act(&self, obs: &Observation, rng: &mut Rng) -> usize {
        match self.greedy(obs) {
            Some(a) => a,
            None => rng.random_range(0..self.action_count()),
        }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string(self)
    }

    pub fn from_json(text: &str) -> crate::Result<Policy> {
        let p: Policy = serde_json::from_str(text)?;
        if p.format_version != POLICY_FORMAT_VERSION {
            return Err(crate::TbsError::InvalidArgument(format!(
                "unsupported policy format version {}",
                p.format_version
            )));
        }
        Ok(p)
    }
}

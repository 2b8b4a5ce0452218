//! Concept labels and Theory-of-Mind concept predictors.
//!
//! A predictor is a per-concept logistic regression over features of the
//! observer's recent observations: one-hot categorical fields, decayed counts
//! of partner events over a window, the time fraction, and a bias.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{ConceptSet, EnvSpec, FieldKind, ObsSpec, Observation};
use crate::learners::Policy;
use crate::play::{run_episode, Greedy, Noisy, Trajectory};
use crate::pool::PolicyPair;
use crate::seed;
use crate::{Result, Seat, TbsError};

pub const TOM_FORMAT_VERSION: u32 = 1;
pub const FEATURE_VERSION: u32 = 1;
pub const PROB_CLAMP: f64 = 1e-6;

/// `KL(Bernoulli(p) || Bernoulli(q))` with both clamped to `[1e-6, 1 - 1e-6]`.
pub fn kl_bernoulli(p: f64, q: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let q = q.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    (p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()).max(0.0)
}

/// Concept index of the agent's next interact at or after each step.
///
/// Single forward pass: steps wait in a pending run until an interact resolves them.
pub fn next_interact_concepts(trajectory: &Trajectory, seat: Seat) -> Vec<Option<usize>> {
    let mut labels = vec![None; trajectory.len()];
    let mut pending_from = 0;
    for (t, step) in trajectory.steps.iter().enumerate() {
        if let Some(c) = step.interactions[seat.index()] {
            labels[pending_from..=t]
                .iter_mut()
                .for_each(|l| *l = Some(c));
            pending_from = t + 1;
        }
    }
    labels
}

/// Dense ground-truth concept vectors `c_t` for one agent.
pub fn extract_concept_labels(trajectory: &Trajectory, seat: Seat) -> Vec<Vec<u8>> {
    next_interact_concepts(trajectory, seat)
        .into_iter()
        .map(|l| {
            let mut v = vec![0u8; trajectory.concept_count];
            if let Some(c) = l {
                v[c] = 1;
            }
            v
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub version: u32,
    pub obs_spec: ObsSpec,
    /// Number of most recent observations summarized by the event counts.
    pub window: usize,
    pub decay: f64,
}

impl FeatureSpec {
    pub fn new(obs_spec: ObsSpec, window: usize, decay: f64) -> FeatureSpec {
        FeatureSpec {
            version: FEATURE_VERSION,
            obs_spec,
            window: window.max(1),
            decay,
        }
    }

    /// Per-field offsets into the feature vector, and the total dimension.
    fn layout(&self) -> (Vec<usize>, usize) {
        let mut dim = 1;
        let offsets = self
            .obs_spec
            .fields
            .iter()
            .map(|f| {
                let o = dim;
                dim += match f.kind {
                    FieldKind::Categorical => f.cardinality as usize,
                    FieldKind::Event => f.cardinality.saturating_sub(1) as usize,
                    FieldKind::Time => 1,
                };
                o
            })
            .collect();
        (offsets, dim)
    }

    pub fn dim(&self) -> usize {
        self.layout().1
    }
}

pub type SparseFeatures = Vec<(u32, f64)>;

/// Streaming feature extractor over an observation history.
#[derive(Debug, Clone)]
pub struct FeatureTracker {
    spec: FeatureSpec,
    offsets: Vec<usize>,
    events: Vec<usize>,
    recent: VecDeque<Vec<u16>>,
}

impl FeatureTracker {
    pub fn new(spec: &FeatureSpec) -> FeatureTracker {
        let (offsets, _) = spec.layout();
        let events = spec
            .obs_spec
            .fields
            .iter()
            .enumerate()
            .filter(|(_, f)| f.kind == FieldKind::Event)
            .map(|(i, _)| i)
            .collect();
        FeatureTracker {
            spec: spec.clone(),
            offsets,
            events,
            recent: VecDeque::new(),
        }
    }

    pub fn clear(&mut self) {
        self.recent.clear();
    }

    /// Consumes the next observation and returns the features of the history so far.
    pub fn push(&mut self, obs: &Observation) -> SparseFeatures {
        self.recent
            .push_front(self.events.iter().map(|&i| obs.0[i]).collect());
        self.recent.truncate(self.spec.window);

        let mut x: SparseFeatures = vec![(0, 1.0)];
        for (i, f) in self.spec.obs_spec.fields.iter().enumerate() {
            let o = self.offsets[i];
            match f.kind {
                FieldKind::Categorical => x.push(((o + obs.0[i] as usize) as u32, 1.0)),
                FieldKind::Time => {
                    let span = (f.cardinality.max(2) - 1) as f64;
                    x.push((o as u32, obs.0[i] as f64 / span));
                }
                FieldKind::Event => {}
            }
        }
        for (e, &field) in self.events.iter().enumerate() {
            let o = self.offsets[field];
            let mut counts: Vec<(u32, f64)> = Vec::new();
            let mut w = 1.0;
            for past in &self.recent {
                let v = past[e];
                if v > 0 {
                    let idx = (o + v as usize - 1) as u32;
                    match counts.iter_mut().find(|(i, _)| *i == idx) {
                        Some(entry) => entry.1 += w,
                        None => counts.push((idx, w)),
                    }
                }
                w *= self.spec.decay;
            }
            counts.sort_by_key(|c| c.0);
            x.extend(counts);
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Cluster(usize),
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToMModel {
    pub format_version: u32,
    pub scope: Scope,
    pub concept_set: String,
    pub concept_count: usize,
    pub features: FeatureSpec,
    /// Feature-major `dim x concept_count`.
    pub weights: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl ToMModel {
    pub fn zeros(scope: Scope, concepts: &ConceptSet, features: FeatureSpec) -> ToMModel {
        let dim = features.dim();
        ToMModel {
            format_version: TOM_FORMAT_VERSION,
            scope,
            concept_set: concepts.name().to_string(),
            concept_count: concepts.len(),
            features,
            weights: vec![0.0; dim * concepts.len()],
        }
    }

    pub fn logits(&self, x: &[(u32, f64)]) -> Vec<f64> {
        let m = self.concept_count;
        let mut z = vec![0.0; m];
        for &(f, v) in x {
            let row = &self.weights[f as usize * m..(f as usize + 1) * m];
            z.iter_mut().zip(row).for_each(|(z, w)| *z += v * w);
        }
        z
    }

    pub fn predict(&self, x: &[(u32, f64)]) -> Vec<f64> {
        self.logits(x).into_iter().map(sigmoid).collect()
    }

    pub fn check_concepts(&self, concepts: &ConceptSet) -> Result<()> {
        if self.concept_set != concepts.name() || self.concept_count != concepts.len() {
            return Err(TbsError::ConceptSetMismatch {
                model: format!("{} ({})", self.concept_set, self.concept_count),
                env: format!("{} ({})", concepts.name(), concepts.len()),
            });
        }
        Ok(())
    }
}

/// Concept probabilities after consuming `history` (oldest first).
pub fn predict_concepts(
    model: &ToMModel,
    history: &[Observation],
    concepts: &ConceptSet,
) -> Result<Vec<f64>> {
    model.check_concepts(concepts)?;
    if history.is_empty() {
        return Err(TbsError::InvalidArgument(
            "prediction needs a nonempty history".into(),
        ));
    }
    let mut tracker = FeatureTracker::new(&model.features);
    let mut x = Vec::new();
    for obs in history {
        x = tracker.push(obs);
    }
    Ok(model.predict(&x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub observations: Vec<Observation>,
    pub labels: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToMDataset {
    pub concept_set: String,
    pub concept_count: usize,
    pub episodes: Vec<EpisodeRecord>,
}

impl ToMDataset {
    pub fn empty(concepts: &ConceptSet) -> ToMDataset {
        ToMDataset {
            concept_set: concepts.name().to_string(),
            concept_count: concepts.len(),
            episodes: Vec::new(),
        }
    }

    pub fn steps(&self) -> usize {
        self.episodes.iter().map(|e| e.observations.len()).sum()
    }

    pub fn extend(&mut self, other: &ToMDataset) {
        self.episodes.extend(other.episodes.iter().cloned());
    }

    /// Records the observer's view and the partner's concept labels of a trajectory.
    pub fn push_trajectory(&mut self, trajectory: &Trajectory, observer: Seat) {
        self.episodes.push(EpisodeRecord {
            observations: trajectory.observations(observer),
            labels: next_interact_concepts(trajectory, observer.other()),
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TomConfig {
    pub window: usize,
    pub decay: f64,
    pub epochs: usize,
    pub l2: f64,
    /// Step size at epoch `e` is `eta_0 / (1 + step_decay * e)` with `eta_0 = 1 / L`.
    pub step_decay: f64,
    pub episodes_per_pairing: usize,
    pub partner_noise: f64,
}

impl Default for TomConfig {
    fn default() -> Self {
        TomConfig {
            window: 32,
            decay: 0.9,
            epochs: 300,
            l2: 1e-4,
            step_decay: 0.002,
            episodes_per_pairing: 50,
            partner_noise: 0.05,
        }
    }
}

/// Rolls out each partner (with exploration noise) against the cluster BR and
/// records the observer's history with the partner's concept labels.
pub fn generate_dataset(
    env_spec: &EnvSpec,
    partners: &[&PolicyPair],
    best_responses: &[(Seat, &Policy)],
    config: &TomConfig,
    seed: u64,
) -> Result<ToMDataset> {
    let concepts = env_spec.build()?.concept_set().clone();
    let jobs: Vec<(usize, usize, usize)> = (0..partners.len())
        .flat_map(|p| {
            (0..best_responses.len())
                .flat_map(move |b| (0..config.episodes_per_pairing).map(move |e| (p, b, e)))
        })
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(p, b, e)| {
            let mut env = env_spec.build()?;
            let (seat, br) = best_responses[b];
            let partner = &partners[p];
            let mut noisy = Noisy {
                policy: partner.seat(seat.other()),
                epsilon: config.partner_noise,
            };
            let mut coop = Greedy(br);
            let actors: [&mut dyn crate::play::Actor; 2] = match seat {
                Seat::First => [&mut coop, &mut noisy],
                Seat::Second => [&mut noisy, &mut coop],
            };
            let s = seed::derive(
                seed::derive(seed, "tom", partner.provenance.seed),
                "episode",
                (b * 1_000_000 + e) as u64,
            );
            let (_, traj) = run_episode(env.as_mut(), actors, s, true)?;
            let traj = traj.expect("recorded");
            Ok(EpisodeRecord {
                observations: traj.observations(seat),
                labels: next_interact_concepts(&traj, seat.other()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ToMDataset {
        concept_set: concepts.name().to_string(),
        concept_count: concepts.len(),
        episodes: records,
    })
}

struct Sample {
    x: SparseFeatures,
    label: Option<usize>,
}

fn featurize(dataset: &ToMDataset, spec: &FeatureSpec) -> Vec<Sample> {
    let mut out = Vec::with_capacity(dataset.steps());
    for ep in &dataset.episodes {
        let mut tracker = FeatureTracker::new(spec);
        for (obs, &label) in ep.observations.iter().zip(&ep.labels) {
            out.push(Sample {
                x: tracker.push(obs),
                label,
            });
        }
    }
    out
}

/// Mean over steps of the summed per-concept cross-entropy.
pub fn mean_bce(model: &ToMModel, dataset: &ToMDataset) -> f64 {
    let samples = featurize(dataset, &model.features);
    let total: f64 = samples
        .iter()
        .map(|s| {
            model
                .predict(&s.x)
                .iter()
                .enumerate()
                .map(|(j, &p)| {
                    let p = p.clamp(1e-12, 1.0 - 1e-12);
                    if s.label == Some(j) {
                        -p.ln()
                    } else {
                        -(1.0 - p).ln()
                    }
                })
                .sum::<f64>()
        })
        .sum();
    total / samples.len().max(1) as f64
}

/// Numerically stable `-log sigmoid(z)` / `-log(1 - sigmoid(z))`.
fn bce_from_logit(z: f64, y: bool) -> f64 {
    let s = if y { -z } else { z };
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

const CHUNK: usize = 2048;

/// Full-batch gradient descent on mean BCE plus `l2 / 2 * |W|^2`.
/// Returns the model and the objective before each epoch's update.
pub fn train_tom_with_history(
    dataset: &ToMDataset,
    scope: Scope,
    concepts: &ConceptSet,
    obs_spec: &ObsSpec,
    config: &TomConfig,
) -> Result<(ToMModel, Vec<f64>)> {
    if dataset.concept_set != concepts.name() || dataset.concept_count != concepts.len() {
        return Err(TbsError::ConceptSetMismatch {
            model: dataset.concept_set.clone(),
            env: concepts.name().to_string(),
        });
    }
    let scope_name = match scope {
        Scope::Cluster(i) => format!("cluster {i}"),
        Scope::Global => "global".to_string(),
    };
    let features = FeatureSpec::new(obs_spec.clone(), config.window, config.decay);
    let samples = featurize(dataset, &features);
    if samples.is_empty() {
        return Err(TbsError::EmptyDataset(scope_name));
    }
    let mut model = ToMModel::zeros(scope, concepts, features);
    let m = model.concept_count;
    let n = samples.len() as f64;
    let mean_sq: f64 = samples
        .iter()
        .map(|s| s.x.iter().map(|(_, v)| v * v).sum::<f64>())
        .sum::<f64>()
        / n;
    let eta0 = 1.0 / (0.25 * mean_sq + config.l2);

    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let partials: Vec<(f64, Vec<(u32, Vec<f64>)>)> = samples
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut loss = 0.0;
                let mut grad: std::collections::BTreeMap<u32, Vec<f64>> = Default::default();
                for s in chunk {
                    let z = model.logits(&s.x);
                    let resid: Vec<f64> = z
                        .iter()
                        .enumerate()
                        .map(|(j, &zj)| {
                            let y = s.label == Some(j);
                            loss += bce_from_logit(zj, y);
                            sigmoid(zj) - if y { 1.0 } else { 0.0 }
                        })
                        .collect();
                    for &(f, v) in &s.x {
                        let g = grad.entry(f).or_insert_with(|| vec![0.0; m]);
                        g.iter_mut().zip(&resid).for_each(|(g, r)| *g += v * r);
                    }
                }
                (loss, grad.into_iter().collect())
            })
            .collect();
        let mut grad = vec![0.0; model.weights.len()];
        let mut loss = 0.0;
        for (l, g) in partials {
            loss += l;
            for (f, row) in g {
                let dst = &mut grad[f as usize * m..(f as usize + 1) * m];
                dst.iter_mut().zip(&row).for_each(|(d, r)| *d += r);
            }
        }
        let reg: f64 = 0.5 * config.l2 * model.weights.iter().map(|w| w * w).sum::<f64>();
        history.push(loss / n + reg);
        let eta = eta0 / (1.0 + config.step_decay * epoch as f64);
        for (w, g) in model.weights.iter_mut().zip(&grad) {
            *w -= eta * (g / n + config.l2 * *w);
        }
        if !model.weights.iter().all(|w| w.is_finite()) {
            return Err(TbsError::Divergence(format!(
                "{scope_name} ToM weights became non-finite"
            )));
        }
    }
    Ok((model, history))
}

pub fn train_tom(
    dataset: &ToMDataset,
    scope: Scope,
    concepts: &ConceptSet,
    obs_spec: &ObsSpec,
    config: &TomConfig,
) -> Result<ToMModel> {
    train_tom_with_history(dataset, scope, concepts, obs_spec, config).map(|(m, _)| m)
}

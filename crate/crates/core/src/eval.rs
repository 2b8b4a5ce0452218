//! Evaluation harness: cross-play objectives, action matching against the
//! oracle, bootstrap confidence intervals, reports and ablation sweeps.

use std::fmt::Write as _;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coordinator::{BrSet, ClusterModel, RandomSelection, TbsAgent, TbsConfig};
use crate::envs::{EnvSpec, Granularity, Observation};
use crate::learners::Policy;
use crate::play::{run_episode, Actor, Greedy, StepCtx, UniformRandom};
use crate::pool::{rollout, PartnerPool, PolicyPair};
use crate::seed::{self, Rng};
use crate::{Result, Seat, TbsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Tbs,
    SingleBr,
    RandomSelection,
    Oracle,
    UniformRandom,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Tbs,
        Method::SingleBr,
        Method::RandomSelection,
        Method::Oracle,
        Method::UniformRandom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Tbs => "tbs",
            Method::SingleBr => "single_br",
            Method::RandomSelection => "random_selection",
            Method::Oracle => "oracle",
            Method::UniformRandom => "uniform_random",
        }
    }

    pub fn parse(name: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| TbsError::InvalidArgument(format!("unknown method `{name}`")))
    }
}

/// Symmetrized cross-play `(J(A1,B2) + J(B1,A2)) / 2`, averaged over all unordered run pairs.
///
/// Episode seeds come from the runs' provenance, and values are summed in
/// sorted order, so the estimate does not depend on the order of `runs`.
pub fn j_xp(runs: &[PolicyPair], env_spec: &EnvSpec, episodes: usize, seed: u64) -> Result<f64> {
    if runs.len() < 2 {
        return Err(TbsError::TooFew {
            what: "runs for cross-play",
            needed: 2,
            got: runs.len(),
        });
    }
    let pairs: Vec<(usize, usize)> = (0..runs.len())
        .flat_map(|a| (a + 1..runs.len()).map(move |b| (a, b)))
        .collect();
    let mut values = pairs
        .par_iter()
        .map(|&(a, b)| {
            let (sa, sb) = (runs[a].provenance.seed, runs[b].provenance.seed);
            let s = seed::derive(seed::derive(seed, "jxp", sa.min(sb)), "jxp", sa.max(sb));
            let ab = rollout(
                &runs[a].seat1,
                &runs[b].seat2,
                env_spec,
                episodes,
                seed::derive(s, "ab", (sa > sb) as u64),
                false,
            )?;
            let ba = rollout(
                &runs[b].seat1,
                &runs[a].seat2,
                env_spec,
                episodes,
                seed::derive(s, "ab", (sb > sa) as u64),
                false,
            )?;
            Ok((ab.mean_return + ba.mean_return) / 2.0)
        })
        .collect::<Result<Vec<f64>>>()?;
    values.sort_by(f64::total_cmp);
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Percentile bootstrap interval of the mean.
pub fn bootstrap_ci(
    samples: &[f64],
    level: f64,
    resamples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(TbsError::TooFew {
            what: "bootstrap samples",
            needed: 2,
            got: samples.len(),
        });
    }
    if !(level > 0.0 && level < 1.0) || resamples == 0 {
        return Err(TbsError::InvalidArgument(format!(
            "bad bootstrap level {level} or resamples {resamples}"
        )));
    }
    let n = samples.len();
    let mut rng = seed::rng(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| samples[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok((quantile(&means, alpha), quantile(&means, 1.0 - alpha)))
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    }
}

/// Everything a cooperator may draw on: the training pool and trained artifacts.
pub struct Cooperators<'a> {
    pub env: &'a EnvSpec,
    pub train_pool: &'a PartnerPool,
    pub model: Option<&'a ClusterModel>,
    pub single_br: Option<&'a BrSet>,
    pub tbs: TbsConfig,
    pub action_count: usize,
}

impl<'a> Cooperators<'a> {
    pub fn actor(
        &self,
        method: Method,
        seat: Seat,
        partner: &'a PolicyPair,
    ) -> Result<Box<dyn Actor + 'a>> {
        let missing = |what: &str| {
            TbsError::InvalidArgument(format!("method {} needs {what}", method.name()))
        };
        Ok(match method {
            Method::Tbs => Box::new(TbsAgent::new(
                self.model.ok_or_else(|| missing("a cluster model"))?,
                seat,
                self.tbs,
            )?),
            Method::SingleBr => Box::new(Greedy(
                self.single_br
                    .ok_or_else(|| missing("a single BR"))?
                    .get(seat)?,
            )),
            Method::RandomSelection => {
                Box::new(RandomSelection::new(&self.train_pool.pairs, seat)?)
            }
            Method::Oracle => Box::new(Greedy(partner.seat(seat))),
            Method::UniformRandom => Box::new(UniformRandom {
                action_count: self.action_count,
            }),
        })
    }
}

/// Counts how often the wrapped actor picks the oracle's greedy action on its
/// acting steps. Steps where the oracle has no preference are skipped.
struct Matching<'a, 'b> {
    inner: &'b mut dyn Actor,
    oracle: &'a Policy,
    matches: usize,
    total: usize,
}

impl Actor for Matching<'_, '_> {
    fn begin_episode(&mut self, seed: u64) {
        self.inner.begin_episode(seed);
    }

    fn act(&mut self, obs: &Observation, ctx: StepCtx, rng: &mut Rng) -> usize {
        let a = self.inner.act(obs, ctx, rng);
        if ctx.acting {
            if let Some(o) = self.oracle.greedy(obs) {
                self.total += 1;
                self.matches += (o == a) as usize;
            }
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartnerOutcome {
    pub partner: usize,
    pub partner_seed: u64,
    /// Mean over episodes and cooperator seats.
    pub mean_return: f64,
    pub returns: Vec<f64>,
    pub matches: usize,
    pub match_steps: usize,
}

impl PartnerOutcome {
    pub fn action_match(&self) -> Option<f64> {
        (self.match_steps > 0).then(|| self.matches as f64 / self.match_steps as f64)
    }
}

pub fn check_disjoint(train: &PartnerPool, held_out: &PartnerPool) -> Result<()> {
    let train_seeds: std::collections::BTreeSet<u64> = train.seeds().into_iter().collect();
    let overlap: Vec<u64> = held_out
        .seeds()
        .into_iter()
        .filter(|s| train_seeds.contains(s))
        .collect();
    if overlap.is_empty() {
        Ok(())
    } else {
        Err(TbsError::ProvenanceOverlap(overlap))
    }
}

/// Seed of evaluation episode `e` with a partner in a cooperator seat.
pub fn episode_seed(seed: u64, partner_seed: u64, seat: Seat, e: usize) -> u64 {
    seed::derive(
        seed::derive(seed, "eval", partner_seed),
        "episode",
        (seat.index() * 1_000_000 + e) as u64,
    )
}

/// Plays the cooperator with every held-out partner, in every cooperator seat.
/// Episode seeds depend only on `seed` and the partner's provenance, so
/// methods and sweep points see identical episodes.
pub fn j_inter_xp(
    coop: &Cooperators<'_>,
    method: Method,
    held_out: &PartnerPool,
    episodes: usize,
    seed: u64,
) -> Result<Vec<PartnerOutcome>> {
    check_disjoint(coop.train_pool, held_out)?;
    if episodes == 0 {
        return Err(TbsError::InvalidArgument(
            "evaluation needs at least one episode".into(),
        ));
    }
    let seats = coop.env.cooperator_seats();
    held_out
        .pairs
        .par_iter()
        .enumerate()
        .map(|(idx, partner)| {
            let mut env = coop.env.build()?;
            let mut returns = Vec::new();
            let (mut matches, mut match_steps) = (0, 0);
            for &seat in &seats {
                let mut actor = coop.actor(method, seat, partner)?;
                let mut matching = Matching {
                    inner: actor.as_mut(),
                    oracle: partner.seat(seat),
                    matches: 0,
                    total: 0,
                };
                let mut other = Greedy(partner.seat(seat.other()));
                for e in 0..episodes {
                    let s = episode_seed(seed, partner.provenance.seed, seat, e);
                    let actors: [&mut dyn Actor; 2] = match seat {
                        Seat::First => [&mut matching, &mut other],
                        Seat::Second => [&mut other, &mut matching],
                    };
                    returns.push(run_episode(env.as_mut(), actors, s, false)?.0);
                }
                matches += matching.matches;
                match_steps += matching.total;
            }
            Ok(PartnerOutcome {
                partner: idx,
                partner_seed: partner.provenance.seed,
                mean_return: returns.iter().sum::<f64>() / returns.len() as f64,
                returns,
                matches,
                match_steps,
            })
        })
        .collect()
}

/// Fraction of acting steps on which the method's action equals the oracle's greedy action.
pub fn action_match_frequency(
    coop: &Cooperators<'_>,
    method: Method,
    held_out: &PartnerPool,
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    let outcomes = j_inter_xp(coop, method, held_out, episodes, seed)?;
    let freqs: Vec<f64> = outcomes.iter().filter_map(|o| o.action_match()).collect();
    Ok(if freqs.is_empty() {
        0.0
    } else {
        freqs.iter().sum::<f64>() / freqs.len() as f64
    })
}

/// `raw / oracle` clamped at 0; undefined when the oracle return is 0.
pub fn scaled_return(raw: f64, oracle: f64) -> Option<f64> {
    (oracle != 0.0).then(|| (raw / oracle).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartnerRow {
    pub method: Method,
    pub axis: String,
    pub axis_value: String,
    pub partner: usize,
    pub partner_seed: u64,
    pub mean_return: f64,
    pub oracle_return: f64,
    pub scaled_return: Option<f64>,
    pub action_match: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub layout: String,
    pub axis: String,
    pub axis_value: String,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub scaled_mean: Option<f64>,
    pub action_match: Option<f64>,
    pub partners: usize,
    /// Partners left out of the scaled mean because their oracle return is 0.
    pub unscaled_partners: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<PartnerRow>,
    pub summaries: Vec<MethodSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub episodes: usize,
    pub bootstrap_resamples: usize,
    pub level: f64,
    pub methods: Vec<Method>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episodes: 20,
            bootstrap_resamples: 10_000,
            level: 0.95,
            methods: vec![
                Method::Tbs,
                Method::SingleBr,
                Method::RandomSelection,
                Method::Oracle,
            ],
        }
    }
}

impl EvalReport {
    pub fn summary(&self, method: Method, axis_value: &str) -> Option<&MethodSummary> {
        self.summaries
            .iter()
            .find(|s| s.method == method && s.axis_value == axis_value)
    }

    pub fn merge(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
        self.summaries.extend(other.summaries);
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    /// Long format: one line per (method, layout, axis value).
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("method,layout,axis,value,mean,ci_low,ci_high,scaled_mean,action_match\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for s in &self.summaries {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                s.method.name(),
                s.layout,
                s.axis,
                s.axis_value,
                s.mean,
                s.ci_low,
                s.ci_high,
                opt(s.scaled_mean),
                opt(s.action_match)
            )
            .unwrap();
        }
        out
    }
}

/// Evaluates `methods` on the held-out pool and assembles a report tagged with one sweep point.
pub fn evaluate_methods(
    coop: &Cooperators<'_>,
    held_out: &PartnerPool,
    config: &EvalConfig,
    seed: u64,
    axis: &str,
    axis_value: &str,
) -> Result<EvalReport> {
    let oracle = j_inter_xp(coop, Method::Oracle, held_out, config.episodes, seed)?;
    let mut report = EvalReport::default();
    for &method in &config.methods {
        let outcomes = if method == Method::Oracle {
            oracle.clone()
        } else {
            j_inter_xp(coop, method, held_out, config.episodes, seed)?
        };
        let samples: Vec<f64> = outcomes
            .iter()
            .flat_map(|o| o.returns.iter().copied())
            .collect();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let (ci_low, ci_high) = if samples.len() >= 2 {
            bootstrap_ci(
                &samples,
                config.level,
                config.bootstrap_resamples,
                seed::derive(seed, "bootstrap", 0),
            )?
        } else {
            (mean, mean)
        };
        let mut scaled = Vec::new();
        let mut matches = Vec::new();
        for (o, orc) in outcomes.iter().zip(&oracle) {
            let s = scaled_return(o.mean_return, orc.mean_return);
            if s.is_none() {
                log::info!(
                    "partner {} has oracle return 0; left out of scaled averages",
                    o.partner
                );
            }
            scaled.extend(s);
            matches.extend(o.action_match());
            report.rows.push(PartnerRow {
                method,
                axis: axis.to_string(),
                axis_value: axis_value.to_string(),
                partner: o.partner,
                partner_seed: o.partner_seed,
                mean_return: o.mean_return,
                oracle_return: orc.mean_return,
                scaled_return: s,
                action_match: o.action_match(),
            });
        }
        let avg = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        report.summaries.push(MethodSummary {
            method,
            layout: coop.env.id(),
            axis: axis.to_string(),
            axis_value: axis_value.to_string(),
            mean,
            ci_low,
            ci_high,
            scaled_mean: avg(&scaled),
            action_match: avg(&matches),
            partners: outcomes.len(),
            unscaled_partners: outcomes.len() - scaled.len(),
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    PoolSize,
    KFixed,
    Window,
    StepsPerSelection,
    ConceptSet,
}

impl AblationAxis {
    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::PoolSize => "pool_size",
            AblationAxis::KFixed => "k_fixed",
            AblationAxis::Window => "window",
            AblationAxis::StepsPerSelection => "steps_per_selection",
            AblationAxis::ConceptSet => "concept_set",
        }
    }

    pub fn parse(name: &str) -> Result<AblationAxis> {
        [
            AblationAxis::PoolSize,
            AblationAxis::KFixed,
            AblationAxis::Window,
            AblationAxis::StepsPerSelection,
            AblationAxis::ConceptSet,
        ]
        .into_iter()
        .find(|a| a.name() == name)
        .ok_or_else(|| TbsError::InvalidArgument(format!("unknown ablation axis `{name}`")))
    }

    /// Applies one grid value to a copy of the base configuration.
    pub fn apply(
        self,
        base: &crate::pipeline::RunConfig,
        value: &str,
    ) -> Result<crate::pipeline::RunConfig> {
        let int = || {
            value.parse::<usize>().map_err(|_| {
                TbsError::InvalidArgument(format!(
                    "{}: expected an integer, got `{value}`",
                    self.name()
                ))
            })
        };
        let mut cfg = base.clone();
        match self {
            AblationAxis::PoolSize => cfg.pool.train_size = int()?,
            AblationAxis::KFixed => cfg.cluster.fixed_k = Some(int()?),
            AblationAxis::Window => {
                cfg.coordinator.window = match value {
                    "unbounded" | "inf" => None,
                    _ => Some(int()?),
                }
            }
            AblationAxis::StepsPerSelection => cfg.coordinator.steps_per_selection = int()?,
            AblationAxis::ConceptSet => {
                cfg.env = cfg.env.with_concepts(Granularity::parse(value)?)?
            }
        }
        Ok(cfg)
    }

    /// Whether the axis only changes the online coordinator, leaving trained artifacts intact.
    pub fn coordinator_only(self) -> bool {
        matches!(self, AblationAxis::Window | AblationAxis::StepsPerSelection)
    }
}

/// One full evaluation per grid point with shared seeds across points.
pub fn run_ablation(
    axis: AblationAxis,
    grid: &[String],
    base: &crate::pipeline::RunConfig,
) -> Result<EvalReport> {
    use crate::pipeline;
    let mut report = EvalReport::default();
    let shared = if axis.coordinator_only() {
        Some(pipeline::train_all(base)?)
    } else {
        None
    };
    for value in grid {
        let cfg = axis.apply(base, value)?;
        let point = match &shared {
            Some(trained) => pipeline::evaluate(&cfg, trained, axis.name(), value)?,
            None => {
                let trained = pipeline::train_all(&cfg)?;
                pipeline::evaluate(&cfg, &trained, axis.name(), value)?
            }
        };
        report.merge(point);
    }
    Ok(report)
}

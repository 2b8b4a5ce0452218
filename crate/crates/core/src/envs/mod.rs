//! Two-player cooperative environments.
//!
//! Both environments share the [`Environment`] trait: simultaneous joint actions,
//! fixed-length integer observations described by an [`ObsSpec`], a sparse team
//! reward, and per-agent interaction events indexed by the active [`ConceptSet`].
//! In the turn-based signaling game the inactive seat's action is ignored.

pub mod concepts;
pub mod kitchen;
pub mod layout;
pub mod signaling;

use serde::{Deserialize, Serialize};

use crate::{Result, Seat};

pub use concepts::{ConceptSet, Granularity, HighLevelAction};
pub use kitchen::{KitchenEnv, KitchenState};
pub use layout::Layout;
pub use signaling::{SignalingEnv, SignalingState};

/// Number of random-shaping game events (place onion, pickup plate, pickup soup,
/// pickup from counter, drop on counter, deliver soup).
pub const GAME_EVENT_COUNT: usize = 6;

pub const EV_PLACE_ONION: usize = 0;
pub const EV_PICKUP_PLATE: usize = 1;
pub const EV_PICKUP_SOUP: usize = 2;
pub const EV_PICKUP_COUNTER: usize = 3;
pub const EV_DROP_COUNTER: usize = 4;
pub const EV_DELIVER: usize = 5;

pub const GAME_EVENT_NAMES: [&str; GAME_EVENT_COUNT] = [
    "place_onion_in_pot",
    "pickup_plate",
    "pickup_soup",
    "pickup_from_counter",
    "drop_on_counter",
    "deliver_soup",
];

/// Per-agent indicator vector over the shaping game events of one transition.
pub type GameEvents = [u8; GAME_EVENT_COUNT];

/// Flat integer observation of one agent.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Observation(pub Vec<u16>);

impl Observation {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// How a field of the observation is consumed downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    /// Categorical state; part of the policy table key and one-hot encoded for ToM.
    Categorical,
    /// Partner event observed on the transition into this state (0 = none).
    /// Excluded from policy keys; accumulated into decayed counts for ToM.
    Event,
    /// Clock value; excluded from policy keys, used as a time fraction for ToM.
    Time,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObsField {
    pub name: String,
    pub cardinality: u16,
    pub kind: FieldKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObsSpec {
    pub fields: Vec<ObsField>,
}

impl ObsSpec {
    pub fn push(&mut self, name: impl Into<String>, cardinality: u16, kind: FieldKind) {
        self.fields.push(ObsField {
            name: name.into(),
            cardinality,
            kind,
        });
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    /// Indices of the categorical fields, in order.
    pub fn key_indices(&self) -> Vec<usize> {
        self.fields
            .iter()
            .enumerate()
            .filter(|(_, f)| f.kind == FieldKind::Categorical)
            .map(|(i, _)| i)
            .collect()
    }

    /// Projects an observation onto its categorical fields (the tabular key).
    pub fn policy_key(&self, obs: &Observation) -> Vec<u16> {
        self.fields
            .iter()
            .zip(&obs.0)
            .filter(|(f, _)| f.kind == FieldKind::Categorical)
            .map(|(_, &v)| v)
            .collect()
    }
}

/// Outcome of one joint step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Sparse team reward.
    pub reward: f64,
    pub done: bool,
    /// Concept index of the interact event each agent fired this step, if any.
    pub interactions: [Option<usize>; 2],
    /// Shaping game events each agent triggered this step.
    pub game_events: [GameEvents; 2],
}

impl Transition {
    /// Dense interaction vector `I_t` of one agent.
    pub fn interaction_vector(&self, seat: Seat, concept_count: usize) -> Vec<u8> {
        let mut v = vec![0u8; concept_count];
        if let Some(i) = self.interactions[seat.index()] {
            v[i] = 1;
        }
        v
    }
}

/// Shaping events of one agent for a transition.
pub fn game_events(transition: &Transition, seat: Seat) -> GameEvents {
    transition.game_events[seat.index()]
}

pub trait Environment: Send {
    fn obs_spec(&self) -> &ObsSpec;
    fn num_actions(&self) -> usize;
    fn concept_set(&self) -> &ConceptSet;
    /// Maximum number of steps in an episode.
    fn horizon(&self) -> usize;
    fn reset(&mut self, seed: u64);
    fn observe(&self, seat: Seat) -> Observation;
    /// Whether the seat's action has any effect in the current state.
    fn is_acting(&self, seat: Seat) -> bool;
    fn step(&mut self, actions: [usize; 2]) -> Result<Transition>;
}

/// Serializable description of an environment instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    Signaling,
    Kitchen {
        /// Built-in layout name or path to a layout text file.
        layout: String,
        #[serde(default)]
        concepts: Granularity,
    },
}

impl EnvSpec {
    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvSpec::Signaling => Box::new(SignalingEnv::new()),
            EnvSpec::Kitchen { layout, concepts } => {
                Box::new(KitchenEnv::new(Layout::load(layout)?, *concepts))
            }
        })
    }

    /// Short identifier used in reports and provenance.
    pub fn id(&self) -> String {
        match self {
            EnvSpec::Signaling => "signaling".to_string(),
            EnvSpec::Kitchen { layout, concepts } => {
                format!("kitchen:{}:{}", layout, concepts.name())
            }
        }
    }

    /// Seats a cooperator can occupy. In the signaling game the cooperator adapts as Bob.
    pub fn cooperator_seats(&self) -> Vec<Seat> {
        match self {
            EnvSpec::Signaling => vec![Seat::Second],
            EnvSpec::Kitchen { .. } => Seat::BOTH.to_vec(),
        }
    }

    pub fn with_concepts(&self, granularity: Granularity) -> Result<EnvSpec> {
        match self {
            EnvSpec::Signaling if granularity == Granularity::Signal => Ok(self.clone()),
            EnvSpec::Signaling => Err(crate::TbsError::InvalidArgument(format!(
                "signaling game only supports the `signal` concept set, got `{}`",
                granularity.name()
            ))),
            EnvSpec::Kitchen { layout, .. } if granularity != Granularity::Signal => {
                Ok(EnvSpec::Kitchen {
                    layout: layout.clone(),
                    concepts: granularity,
                })
            }
            EnvSpec::Kitchen { .. } => Err(crate::TbsError::InvalidArgument(
                "the `signal` concept set only applies to the signaling game".into(),
            )),
        }
    }
}

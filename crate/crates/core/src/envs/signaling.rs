//! Sixteen-round signaling game.
//!
//! Each round Alice sees a number in 1..=4 and either sends one of four
//! symbols (A-D) or bails. Bob sees the symbol and guesses the number
//! (+1 correct, -1 wrong) or bails (0). The number is then revealed to Bob.
//! A round takes three steps (Alice, Bob, reveal), or two if Alice bails.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    concepts::ConceptSet, Environment, FieldKind, Granularity, ObsSpec, Observation, Transition,
    GAME_EVENT_COUNT,
};
use crate::seed::{self, Rng as SeedRng};
use crate::{Result, Seat, TbsError};

pub const ROUNDS: u8 = 16;
pub const NUM_ACTIONS: usize = 5;
/// Action index shared by both seats for bailing out.
pub const BAIL: usize = 4;
/// Longest possible episode: three steps per round.
pub const HORIZON: usize = 3 * ROUNDS as usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    AliceTurn,
    BobTurn,
    Reveal,
}

impl Phase {
    pub fn code(self) -> u16 {
        match self {
            Phase::AliceTurn => 0,
            Phase::BobTurn => 1,
            Phase::Reveal => 2,
        }
    }
}

/// Alice's move: a symbol index 0..=3 (A-D) or bail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AliceMove {
    Signal(u8),
    Bail,
}

impl AliceMove {
    pub fn from_index(i: usize) -> Option<AliceMove> {
        match i {
            0..=3 => Some(AliceMove::Signal(i as u8)),
            BAIL => Some(AliceMove::Bail),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        match self {
            AliceMove::Signal(s) => s as usize,
            AliceMove::Bail => BAIL,
        }
    }
}

/// Bob's move: a guessed number 1..=4 or bail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BobMove {
    Guess(u8),
    Bail,
}

impl BobMove {
    pub fn from_index(i: usize) -> Option<BobMove> {
        match i {
            0..=3 => Some(BobMove::Guess(i as u8 + 1)),
            BAIL => Some(BobMove::Bail),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        match self {
            BobMove::Guess(n) => n as usize - 1,
            BobMove::Bail => BAIL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalingAction {
    Alice(AliceMove),
    Bob(BobMove),
    /// Advances past the reveal phase.
    Advance,
}

#[derive(Debug, Clone)]
pub struct SignalingState {
    pub round_index: u8,
    pub hidden_number: u8,
    pub phase: Phase,
    pub alice_action: Option<AliceMove>,
    pub bob_action: Option<BobMove>,
    /// Number revealed at the end of the previous round.
    pub last_revealed: Option<u8>,
    pub cumulative_reward: f64,
    pub done: bool,
    rng: SeedRng,
}

impl SignalingState {
    pub fn reset(seed: u64) -> SignalingState {
        let mut rng = seed::rng(seed);
        let hidden_number = rng.random_range(1..=4);
        SignalingState {
            round_index: 0,
            hidden_number,
            phase: Phase::AliceTurn,
            alice_action: None,
            bob_action: None,
            last_revealed: None,
            cumulative_reward: 0.0,
            done: false,
            rng,
        }
    }

    /// Applies one move, returning the successor state, the reward and the done flag.
    pub fn step(&self, action: SignalingAction) -> Result<(SignalingState, f64, bool)> {
        if self.done {
            return Err(TbsError::EpisodeOver);
        }
        let mut next = self.clone();
        let reward = match (self.phase, action) {
            (Phase::AliceTurn, SignalingAction::Alice(m)) => {
                next.alice_action = Some(m);
                next.phase = match m {
                    AliceMove::Bail => Phase::Reveal,
                    AliceMove::Signal(_) => Phase::BobTurn,
                };
                0.0
            }
            (Phase::BobTurn, SignalingAction::Bob(m)) => {
                next.bob_action = Some(m);
                next.phase = Phase::Reveal;
                match m {
                    BobMove::Bail => 0.0,
                    BobMove::Guess(n) if n == self.hidden_number => 1.0,
                    BobMove::Guess(_) => -1.0,
                }
            }
            (Phase::Reveal, SignalingAction::Advance) => {
                next.last_revealed = Some(self.hidden_number);
                if self.round_index + 1 == ROUNDS {
                    next.done = true;
                } else {
                    next.round_index += 1;
                    next.hidden_number = next.rng.random_range(1..=4);
                    next.phase = Phase::AliceTurn;
                    next.alice_action = None;
                    next.bob_action = None;
                }
                0.0
            }
            (phase, action) => {
                return Err(TbsError::InvalidAction {
                    action: format!("{action:?}"),
                    phase: format!("{phase:?}"),
                })
            }
        };
        next.cumulative_reward += reward;
        let done = next.done;
        Ok((next, reward, done))
    }

    pub fn observe(&self, seat: Seat) -> Observation {
        let after_bob = matches!(self.phase, Phase::BobTurn | Phase::Reveal);
        let revealing = self.phase == Phase::Reveal;
        let fields = match seat {
            Seat::First => [
                self.phase.code(),
                self.hidden_number as u16,
                match (revealing, self.bob_action) {
                    (true, Some(m)) => m.index() as u16 + 1,
                    _ => 0,
                },
                if revealing {
                    self.hidden_number as u16
                } else {
                    0
                },
                0,
                self.round_index as u16,
            ],
            Seat::Second => [
                self.phase.code(),
                0,
                match (after_bob, self.alice_action) {
                    (true, Some(m)) => m.index() as u16 + 1,
                    _ => 0,
                },
                if revealing {
                    self.hidden_number as u16
                } else {
                    0
                },
                match (revealing, self.alice_action) {
                    (true, Some(m)) => {
                        ConceptSet::signal_index(self.hidden_number, m.index()) as u16 + 1
                    }
                    _ => 0,
                },
                self.round_index as u16,
            ],
        };
        Observation(fields.to_vec())
    }
}

pub fn obs_spec() -> ObsSpec {
    let mut spec = ObsSpec { fields: Vec::new() };
    spec.push("phase", 3, FieldKind::Categorical);
    spec.push("private_number", 5, FieldKind::Categorical);
    spec.push("partner_action", 6, FieldKind::Categorical);
    // shown during the reveal phase only, 0 otherwise
    spec.push("revealed_number", 5, FieldKind::Categorical);
    spec.push("partner_signal_event", 21, FieldKind::Event);
    spec.push("round", ROUNDS as u16, FieldKind::Time);
    spec
}

/// [`Environment`] wrapper over [`SignalingState`].
pub struct SignalingEnv {
    state: SignalingState,
    spec: ObsSpec,
    concepts: ConceptSet,
}

impl SignalingEnv {
    pub fn new() -> SignalingEnv {
        SignalingEnv {
            state: SignalingState::reset(0),
            spec: obs_spec(),
            concepts: ConceptSet::new(Granularity::Signal),
        }
    }

    pub fn state(&self) -> &SignalingState {
        &self.state
    }
}

impl Default for SignalingEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for SignalingEnv {
    fn obs_spec(&self) -> &ObsSpec {
        &self.spec
    }

    fn num_actions(&self) -> usize {
        NUM_ACTIONS
    }

    fn concept_set(&self) -> &ConceptSet {
        &self.concepts
    }

    fn horizon(&self) -> usize {
        HORIZON
    }

    fn reset(&mut self, seed: u64) {
        self.state = SignalingState::reset(seed);
    }

    fn observe(&self, seat: Seat) -> Observation {
        self.state.observe(seat)
    }

    fn is_acting(&self, seat: Seat) -> bool {
        matches!(
            (self.state.phase, seat),
            (Phase::AliceTurn, Seat::First) | (Phase::BobTurn, Seat::Second)
        )
    }

    fn step(&mut self, actions: [usize; 2]) -> Result<Transition> {
        let invalid = |a: usize| TbsError::InvalidAction {
            action: a.to_string(),
            phase: format!("{:?}", self.state.phase),
        };
        let (action, alice_event) = match self.state.phase {
            Phase::AliceTurn => {
                let m = AliceMove::from_index(actions[0]).ok_or_else(|| invalid(actions[0]))?;
                let event = ConceptSet::signal_index(self.state.hidden_number, m.index());
                (SignalingAction::Alice(m), Some(event))
            }
            Phase::BobTurn => (
                SignalingAction::Bob(
                    BobMove::from_index(actions[1]).ok_or_else(|| invalid(actions[1]))?,
                ),
                None,
            ),
            Phase::Reveal => (SignalingAction::Advance, None),
        };
        let (next, reward, done) = self.state.step(action)?;
        self.state = next;
        Ok(Transition {
            reward,
            done,
            interactions: [alice_event, None],
            game_events: [[0u8; GAME_EVENT_COUNT]; 2],
        })
    }
}

//! Theory-of-Mind-based best-response selection (TBS) for zero-shot coordination.
//!
//! The crate is organised as the pipeline runs:
//!
//! - [`envs`]: seedable two-player cooperative environments (signaling game, grid kitchen).
//! - [`learners`]: tabular/linear value learners for VDN self-play and best-response training.
//! - [`pool`]: partner populations and greedy rollouts.
//! - [`cluster`]: cross-play similarity and self-tuning spectral clustering.
//! - [`tom`]: concept labels and Theory-of-Mind concept predictors.
//! - [`coordinator`]: the online TBS agent plus baseline cooperators.
//! - [`eval`]: cross-play objectives, bootstrap CIs and ablation sweeps.
//! - [`pipeline`]: end-to-end run configuration and stage functions.

pub mod cluster;
pub mod coordinator;
pub mod envs;
pub mod error;
pub mod eval;
pub mod learners;
pub mod pipeline;
pub mod play;
pub mod pool;
pub mod seed;
pub mod tom;

pub use error::{Result, TbsError};

use serde::{Deserialize, Serialize};

/// One of the two seats of a two-player game (agent 1 / agent 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Seat {
    #[serde(rename = "1")]
    First,
    #[serde(rename = "2")]
    Second,
}

impl Seat {
    pub const BOTH: [Seat; 2] = [Seat::First, Seat::Second];

    /// Zero-based index into per-seat arrays.
    pub fn index(self) -> usize {
        match self {
            Seat::First => 0,
            Seat::Second => 1,
        }
    }

    pub fn other(self) -> Seat {
        match self {
            Seat::First => Seat::Second,
            Seat::Second => Seat::First,
        }
    }

    /// Parses the one-based agent number used on the command line and in files.
    pub fn from_number(n: usize) -> Result<Seat> {
        match n {
            1 => Ok(Seat::First),
            2 => Ok(Seat::Second),
            _ => Err(TbsError::InvalidArgument(format!(
                "agent index must be 1 or 2, got {n}"
            ))),
        }
    }

    pub fn number(self) -> usize {
        self.index() + 1
    }
}

impl std::fmt::Display for Seat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.number())
    }
}

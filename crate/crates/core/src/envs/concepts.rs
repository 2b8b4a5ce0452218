//! Concept sets: the high-level intentions a ToM model predicts.

use serde::{Deserialize, Serialize};

use crate::{Result, TbsError};

/// The eleven interact-button uses of the kitchen, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HighLevelAction {
    OnionPickupFromPile,
    PlatePickupFromPile,
    DishPickupFromPot,
    OnionPickupFromCounter,
    PlatePickupFromCounter,
    DishPickupFromCounter,
    OnionDropInPot,
    OnionDropOnCounter,
    PlateDropOnCounter,
    DishDropOnCounter,
    DishDelivery,
}

impl HighLevelAction {
    pub const ALL: [HighLevelAction; 11] = [
        HighLevelAction::OnionPickupFromPile,
        HighLevelAction::PlatePickupFromPile,
        HighLevelAction::DishPickupFromPot,
        HighLevelAction::OnionPickupFromCounter,
        HighLevelAction::PlatePickupFromCounter,
        HighLevelAction::DishPickupFromCounter,
        HighLevelAction::OnionDropInPot,
        HighLevelAction::OnionDropOnCounter,
        HighLevelAction::PlateDropOnCounter,
        HighLevelAction::DishDropOnCounter,
        HighLevelAction::DishDelivery,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&a| a == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            HighLevelAction::OnionPickupFromPile => "onion_pickup_from_pile",
            HighLevelAction::PlatePickupFromPile => "plate_pickup_from_pile",
            HighLevelAction::DishPickupFromPot => "dish_pickup_from_pot",
            HighLevelAction::OnionPickupFromCounter => "onion_pickup_from_counter",
            HighLevelAction::PlatePickupFromCounter => "plate_pickup_from_counter",
            HighLevelAction::DishPickupFromCounter => "dish_pickup_from_counter",
            HighLevelAction::OnionDropInPot => "onion_drop_in_pot",
            HighLevelAction::OnionDropOnCounter => "onion_drop_on_counter",
            HighLevelAction::PlateDropOnCounter => "plate_drop_on_counter",
            HighLevelAction::DishDropOnCounter => "dish_drop_on_counter",
            HighLevelAction::DishDelivery => "dish_delivery",
        }
    }

    /// Item-kind collapse used by the very coarse set:
    /// pickup onion/plate/dish, drop onion/plate/dish.
    pub fn very_coarse_index(self) -> usize {
        use HighLevelAction::*;
        match self {
            OnionPickupFromPile | OnionPickupFromCounter => 0,
            PlatePickupFromPile | PlatePickupFromCounter => 1,
            DishPickupFromPot | DishPickupFromCounter => 2,
            OnionDropInPot | OnionDropOnCounter => 3,
            PlateDropOnCounter => 4,
            DishDropOnCounter | DishDelivery => 5,
        }
    }
}

/// Maximum number of distinguished special tiles per tile type.
pub const SLOTS_PER_TILE: usize = 4;

const VERY_COARSE_NAMES: [&str; 6] = [
    "pickup_onion",
    "pickup_plate",
    "pickup_dish",
    "drop_onion",
    "drop_plate",
    "drop_dish",
];

const ACTION_NAMES: [&str; 6] = ["up", "down", "left", "right", "stay", "interact"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// Eleven high-level actions, each split over up to four special tiles (44).
    #[default]
    Granular,
    /// The eleven high-level actions.
    Coarse,
    /// Six item-kind pickup/drop concepts.
    VeryCoarse,
    /// The six low-level actions.
    ActionBased,
    /// Signaling game: one concept per (hidden number, Alice action) pair (20).
    Signal,
}

impl Granularity {
    pub fn name(self) -> &'static str {
        match self {
            Granularity::Granular => "granular",
            Granularity::Coarse => "coarse",
            Granularity::VeryCoarse => "very_coarse",
            Granularity::ActionBased => "action_based",
            Granularity::Signal => "signal",
        }
    }

    pub fn parse(name: &str) -> Result<Granularity> {
        match name {
            "granular" => Ok(Granularity::Granular),
            "coarse" => Ok(Granularity::Coarse),
            "very_coarse" => Ok(Granularity::VeryCoarse),
            "action_based" => Ok(Granularity::ActionBased),
            "signal" => Ok(Granularity::Signal),
            other => Err(TbsError::InvalidArgument(format!(
                "unknown concept set `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptSet {
    pub granularity: Granularity,
    pub names: Vec<String>,
}

impl ConceptSet {
    pub fn new(granularity: Granularity) -> ConceptSet {
        let names = match granularity {
            Granularity::Granular => HighLevelAction::ALL
                .iter()
                .flat_map(|a| (0..SLOTS_PER_TILE).map(move |s| format!("{}_{}", a.name(), s)))
                .collect(),
            Granularity::Coarse => HighLevelAction::ALL
                .iter()
                .map(|a| a.name().to_string())
                .collect(),
            Granularity::VeryCoarse => VERY_COARSE_NAMES.iter().map(|s| s.to_string()).collect(),
            Granularity::ActionBased => ACTION_NAMES.iter().map(|s| s.to_string()).collect(),
            Granularity::Signal => (1..=4)
                .flat_map(|n| {
                    ["A", "B", "C", "D", "bail"]
                        .into_iter()
                        .map(move |a| format!("signal_{a}_for_{n}"))
                })
                .collect(),
        };
        ConceptSet { granularity, names }
    }

    pub fn name(&self) -> &'static str {
        self.granularity.name()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Concept index for a kitchen step given the high-level event (with its tile
    /// slot) and the low-level action taken.
    pub fn kitchen_index(
        &self,
        event: Option<(HighLevelAction, usize)>,
        low_level_action: usize,
    ) -> Option<usize> {
        match self.granularity {
            Granularity::Granular => {
                event.map(|(a, slot)| a.index() * SLOTS_PER_TILE + slot.min(SLOTS_PER_TILE - 1))
            }
            Granularity::Coarse => event.map(|(a, _)| a.index()),
            Granularity::VeryCoarse => event.map(|(a, _)| a.very_coarse_index()),
            Granularity::ActionBased => Some(low_level_action),
            Granularity::Signal => None,
        }
    }

    /// Concept index of Alice's move in the signaling game.
    /// `number` is 1-based, `action` is 0..=4 (A-D, bail).
    pub fn signal_index(number: u8, action: usize) -> usize {
        (number as usize - 1) * 5 + action
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concept_set_sizes() {
        assert_eq!(ConceptSet::new(Granularity::Granular).len(), 44);
        assert_eq!(ConceptSet::new(Granularity::Coarse).len(), 11);
        assert_eq!(ConceptSet::new(Granularity::VeryCoarse).len(), 6);
        assert_eq!(ConceptSet::new(Granularity::ActionBased).len(), 6);
        assert_eq!(ConceptSet::new(Granularity::Signal).len(), 20);
    }

    #[test]
    fn coarse_names_follow_canonical_order() {
        let set = ConceptSet::new(Granularity::Coarse);
        assert_eq!(set.names[0], "onion_pickup_from_pile");
        assert_eq!(set.names[6], "onion_drop_in_pot");
        assert_eq!(set.names[10], "dish_delivery");
    }

    #[test]
    fn granular_index_respects_slots() {
        let set = ConceptSet::new(Granularity::Granular);
        let i = set
            .kitchen_index(Some((HighLevelAction::OnionDropInPot, 1)), 5)
            .unwrap();
        assert_eq!(set.names[i], "onion_drop_in_pot_1");
        // slots beyond the fourth collapse onto the last one
        let j = set
            .kitchen_index(Some((HighLevelAction::OnionDropInPot, 9)), 5)
            .unwrap();
        assert_eq!(set.names[j], "onion_drop_in_pot_3");
    }

    #[test]
    fn very_coarse_collapse_covers_all_six() {
        let mut seen = [false; 6];
        for a in HighLevelAction::ALL {
            seen[a.very_coarse_index()] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn parse_round_trips_names() {
        for g in [
            Granularity::Granular,
            Granularity::Coarse,
            Granularity::VeryCoarse,
            Granularity::ActionBased,
            Granularity::Signal,
        ] {
            assert_eq!(Granularity::parse(g.name()).unwrap(), g);
        }
        assert!(Granularity::parse("nope").is_err());
    }
}

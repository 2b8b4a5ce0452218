//! Simplified onion-soup kitchen.
//!
//! Two agents move on a grid, carry one item each and cook three-onion soups.
//! A pot starts cooking on its third onion and is ready after 20 frames; a
//! plate turns a ready pot into a dish, and delivering a dish pays 20. Episodes
//! last 400 frames.

use serde::{Deserialize, Serialize};

use super::concepts::{ConceptSet, Granularity, HighLevelAction};
use super::layout::{Cell, Layout, Tile};
use super::{
    Environment, FieldKind, GameEvents, ObsSpec, Observation, Transition, EV_DELIVER,
    EV_DROP_COUNTER, EV_PICKUP_COUNTER, EV_PICKUP_PLATE, EV_PICKUP_SOUP, EV_PLACE_ONION,
    GAME_EVENT_COUNT,
};
use crate::{Result, Seat, TbsError};

pub const EPISODE_FRAMES: u16 = 400;
pub const COOK_TIME: u8 = 20;
pub const DELIVERY_REWARD: f64 = 20.0;
pub const NUM_ACTIONS: usize = 6;

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;
pub const STAY: usize = 4;
pub const INTERACT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Up,
    Down,
    Left,
    Right,
}

impl Orientation {
    fn delta(self) -> (isize, isize) {
        match self {
            Orientation::Up => (-1, 0),
            Orientation::Down => (1, 0),
            Orientation::Left => (0, -1),
            Orientation::Right => (0, 1),
        }
    }

    fn from_action(action: usize) -> Option<Orientation> {
        match action {
            UP => Some(Orientation::Up),
            DOWN => Some(Orientation::Down),
            LEFT => Some(Orientation::Left),
            RIGHT => Some(Orientation::Right),
            _ => None,
        }
    }

    fn code(self) -> u16 {
        self as u16
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Item {
    Onion,
    Plate,
    /// A plate holding cooked soup.
    Dish,
}

fn item_code(item: Option<Item>) -> u16 {
    match item {
        None => 0,
        Some(Item::Onion) => 1,
        Some(Item::Plate) => 2,
        Some(Item::Dish) => 3,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PotState {
    pub onion_count: u8,
    pub cook_timer: u8,
    pub done: bool,
}

impl PotState {
    fn cooking(&self) -> bool {
        self.onion_count == 3 && !self.done
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KitchenState {
    pub layout_id: String,
    pub agent_positions: [Cell; 2],
    pub agent_orientations: [Orientation; 2],
    pub held_items: [Option<Item>; 2],
    /// One entry per pot of the layout, in reading order.
    pub pots: Vec<PotState>,
    /// One entry per counter of the layout, in reading order.
    pub counter_items: Vec<Option<Item>>,
    pub frame: u16,
    /// High-level action each agent performed on the last step.
    pub last_events: [Option<HighLevelAction>; 2],
}

/// Result of one kitchen step before concept-set projection.
#[derive(Debug, Clone, PartialEq)]
pub struct KitchenOutcome {
    pub reward: f64,
    /// High-level event and tile slot per agent.
    pub events: [Option<(HighLevelAction, usize)>; 2],
    pub game_events: [GameEvents; 2],
    pub done: bool,
}

impl KitchenState {
    pub fn initial(layout: &Layout) -> KitchenState {
        KitchenState {
            layout_id: layout.name.clone(),
            agent_positions: layout.starts,
            agent_orientations: [Orientation::Up; 2],
            held_items: [None; 2],
            pots: vec![PotState::default(); layout.pots.len()],
            counter_items: vec![None; layout.counters.len()],
            frame: 0,
            last_events: [None; 2],
        }
    }

    fn facing(&self, layout: &Layout, agent: usize) -> Option<Cell> {
        let (dr, dc) = self.agent_orientations[agent].delta();
        layout.neighbour(self.agent_positions[agent], dr, dc)
    }

    /// Advances one frame under a joint action. Illegal interacts are silent no-ops.
    pub fn advance(&mut self, layout: &Layout, joint: [usize; 2]) -> Result<KitchenOutcome> {
        if self.frame >= EPISODE_FRAMES {
            return Err(TbsError::EpisodeOver);
        }
        if let Some(&bad) = joint.iter().find(|&&a| a >= NUM_ACTIONS) {
            return Err(TbsError::InvalidAction {
                action: bad.to_string(),
                phase: "kitchen".into(),
            });
        }

        for pot in &mut self.pots {
            if pot.cooking() && pot.cook_timer > 0 {
                pot.cook_timer -= 1;
                pot.done = pot.cook_timer == 0;
            }
        }

        let mut outcome = KitchenOutcome {
            reward: 0.0,
            events: [None, None],
            game_events: [[0; GAME_EVENT_COUNT]; 2],
            done: false,
        };
        for agent in 0..2 {
            if joint[agent] == INTERACT {
                self.interact(layout, agent, &mut outcome);
            }
        }
        self.move_agents(layout, joint);

        self.frame += 1;
        self.last_events = [
            outcome.events[0].map(|e| e.0),
            outcome.events[1].map(|e| e.0),
        ];
        outcome.done = self.frame >= EPISODE_FRAMES;
        Ok(outcome)
    }

    fn interact(&mut self, layout: &Layout, agent: usize, out: &mut KitchenOutcome) {
        let Some(cell) = self.facing(layout, agent) else {
            return;
        };
        let slot = layout.slot(cell) as usize;
        let held = self.held_items[agent];
        let event = match (layout.tile(cell), held) {
            (Tile::OnionPile, None) => {
                self.held_items[agent] = Some(Item::Onion);
                Some(HighLevelAction::OnionPickupFromPile)
            }
            (Tile::PlatePile, None) => {
                self.held_items[agent] = Some(Item::Plate);
                out.game_events[agent][EV_PICKUP_PLATE] = 1;
                Some(HighLevelAction::PlatePickupFromPile)
            }
            (Tile::Pot, Some(item)) => {
                let idx = layout
                    .pots
                    .iter()
                    .position(|&p| p == cell)
                    .expect("pot cell");
                let pot = &mut self.pots[idx];
                match item {
                    Item::Onion if pot.onion_count < 3 => {
                        pot.onion_count += 1;
                        if pot.onion_count == 3 {
                            pot.cook_timer = COOK_TIME;
                        }
                        self.held_items[agent] = None;
                        out.game_events[agent][EV_PLACE_ONION] = 1;
                        Some(HighLevelAction::OnionDropInPot)
                    }
                    Item::Plate if pot.done => {
                        *pot = PotState::default();
                        self.held_items[agent] = Some(Item::Dish);
                        out.game_events[agent][EV_PICKUP_SOUP] = 1;
                        Some(HighLevelAction::DishPickupFromPot)
                    }
                    _ => None,
                }
            }
            (Tile::Counter, _) => {
                let idx = layout
                    .counters
                    .iter()
                    .position(|&p| p == cell)
                    .expect("counter cell");
                match (held, self.counter_items[idx]) {
                    (None, Some(item)) => {
                        self.counter_items[idx] = None;
                        self.held_items[agent] = Some(item);
                        out.game_events[agent][EV_PICKUP_COUNTER] = 1;
                        Some(match item {
                            Item::Onion => HighLevelAction::OnionPickupFromCounter,
                            Item::Plate => HighLevelAction::PlatePickupFromCounter,
                            Item::Dish => HighLevelAction::DishPickupFromCounter,
                        })
                    }
                    (Some(item), None) => {
                        self.counter_items[idx] = Some(item);
                        self.held_items[agent] = None;
                        out.game_events[agent][EV_DROP_COUNTER] = 1;
                        Some(match item {
                            Item::Onion => HighLevelAction::OnionDropOnCounter,
                            Item::Plate => HighLevelAction::PlateDropOnCounter,
                            Item::Dish => HighLevelAction::DishDropOnCounter,
                        })
                    }
                    _ => None,
                }
            }
            (Tile::Serve, Some(Item::Dish)) => {
                self.held_items[agent] = None;
                out.reward += DELIVERY_REWARD;
                out.game_events[agent][EV_DELIVER] = 1;
                Some(HighLevelAction::DishDelivery)
            }
            _ => None,
        };
        out.events[agent] = event.map(|e| (e, slot));
    }

    fn move_agents(&mut self, layout: &Layout, joint: [usize; 2]) {
        let current = self.agent_positions;
        let mut proposed = current;
        for agent in 0..2 {
            if let Some(dir) = Orientation::from_action(joint[agent]) {
                self.agent_orientations[agent] = dir;
                let (dr, dc) = dir.delta();
                if let Some(target) = layout.neighbour(current[agent], dr, dc) {
                    if layout.tile(target) == Tile::Floor {
                        proposed[agent] = target;
                    }
                }
            }
        }
        let same_cell = proposed[0] == proposed[1];
        let swap = proposed[0] == current[1] && proposed[1] == current[0];
        if !(same_cell || swap) {
            self.agent_positions = proposed;
        }
    }

    pub fn observe(&self, layout: &Layout, seat: Seat) -> Observation {
        let me = seat.index();
        let other = seat.other().index();
        let mut v = Vec::with_capacity(10 + 3 * self.pots.len() + self.counter_items.len());
        for agent in [me, other] {
            let (r, c) = self.agent_positions[agent];
            v.push(r as u16);
            v.push(c as u16);
            v.push(self.agent_orientations[agent].code());
            v.push(item_code(self.held_items[agent]));
        }
        for pot in &self.pots {
            v.push(pot.onion_count as u16);
            v.push(pot.cook_timer as u16);
            v.push(pot.done as u16);
        }
        for item in &self.counter_items {
            v.push(item_code(*item));
        }
        v.push(self.last_events[other].map_or(0, |e| e.index() as u16 + 1));
        v.push(self.frame);
        debug_assert_eq!(v.len(), obs_spec(layout).len());
        Observation(v)
    }
}

pub fn obs_spec(layout: &Layout) -> ObsSpec {
    let mut spec = ObsSpec { fields: Vec::new() };
    for who in ["self", "partner"] {
        spec.push(
            format!("{who}_row"),
            layout.height as u16,
            FieldKind::Categorical,
        );
        spec.push(
            format!("{who}_col"),
            layout.width as u16,
            FieldKind::Categorical,
        );
        spec.push(format!("{who}_orientation"), 4, FieldKind::Categorical);
        spec.push(format!("{who}_held"), 4, FieldKind::Categorical);
    }
    for i in 0..layout.pots.len() {
        spec.push(format!("pot{i}_onions"), 4, FieldKind::Categorical);
        spec.push(
            format!("pot{i}_timer"),
            COOK_TIME as u16 + 1,
            FieldKind::Categorical,
        );
        spec.push(format!("pot{i}_done"), 2, FieldKind::Categorical);
    }
    for i in 0..layout.counters.len() {
        spec.push(format!("counter{i}_item"), 4, FieldKind::Categorical);
    }
    spec.push(
        "partner_event",
        HighLevelAction::ALL.len() as u16 + 1,
        FieldKind::Event,
    );
    spec.push("frame", EPISODE_FRAMES + 1, FieldKind::Time);
    spec
}

pub struct KitchenEnv {
    layout: Layout,
    state: KitchenState,
    concepts: ConceptSet,
    spec: ObsSpec,
}

impl KitchenEnv {
    pub fn new(layout: Layout, granularity: Granularity) -> KitchenEnv {
        KitchenEnv {
            state: KitchenState::initial(&layout),
            spec: obs_spec(&layout),
            concepts: ConceptSet::new(granularity),
            layout,
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn state(&self) -> &KitchenState {
        &self.state
    }

    pub fn set_state(&mut self, state: KitchenState) {
        self.state = state;
    }

    /// Steps the kitchen and also returns the raw high-level events.
    pub fn step_detailed(&mut self, joint: [usize; 2]) -> Result<(Transition, KitchenOutcome)> {
        let outcome = self.state.advance(&self.layout, joint)?;
        let interactions = [
            self.concepts.kitchen_index(outcome.events[0], joint[0]),
            self.concepts.kitchen_index(outcome.events[1], joint[1]),
        ];
        let transition = Transition {
            reward: outcome.reward,
            done: outcome.done,
            interactions,
            game_events: outcome.game_events,
        };
        Ok((transition, outcome))
    }
}

impl Environment for KitchenEnv {
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
        EPISODE_FRAMES as usize
    }

    /// The kitchen starts from the layout's fixed initial state; the seed is unused.
    fn reset(&mut self, _seed: u64) {
        self.state = KitchenState::initial(&self.layout);
    }

    fn observe(&self, seat: Seat) -> Observation {
        self.state.observe(&self.layout, seat)
    }

    fn is_acting(&self, _seat: Seat) -> bool {
        true
    }

    fn step(&mut self, actions: [usize; 2]) -> Result<Transition> {
        self.step_detailed(actions).map(|(t, _)| t)
    }
}

use proptest::prelude::*;
use tbs_core::envs::kitchen::{DOWN, INTERACT, LEFT, RIGHT, STAY, UP};
use tbs_core::envs::signaling::{self, SignalingEnv};
use tbs_core::envs::{
    game_events, EnvSpec, Environment, Granularity, HighLevelAction, KitchenEnv, Layout,
    EV_DELIVER, EV_PICKUP_PLATE, EV_PICKUP_SOUP, EV_PLACE_ONION,
};
use tbs_core::Seat;

fn cramped(g: Granularity) -> KitchenEnv {
    KitchenEnv::new(Layout::load("cramped_room").unwrap(), g)
}

/// Agent 2 cooks and serves one soup alone while agent 1 steps out of the way.
fn full_dish_script() -> Vec<[usize; 2]> {
    let mut seat1 = vec![RIGHT, RIGHT, UP];
    let mut seat2 = Vec::new();
    for _ in 0..3 {
        seat2.extend([LEFT, INTERACT, RIGHT, UP, INTERACT]);
    }
    seat2.extend([DOWN, LEFT, DOWN, INTERACT, UP, RIGHT, UP]);
    // interacting with a cooking pot while holding a plate does nothing
    seat2.extend([INTERACT; 13]);
    seat2.extend([DOWN, RIGHT, DOWN, INTERACT]);
    seat1.resize(seat2.len(), STAY);
    seat1.into_iter().zip(seat2).map(|(a, b)| [a, b]).collect()
}

#[test]
fn scripted_full_dish_rollout() {
    let mut env = cramped(Granularity::Coarse);
    env.reset(0);
    let script = full_dish_script();
    let mut counts = [0usize; 6];
    let mut soup_step = None;
    let mut onion3_step = None;
    let mut total = 0.0;
    for (i, joint) in script.iter().enumerate() {
        let tr = env.step(*joint).unwrap();
        let ev = game_events(&tr, Seat::Second);
        assert_eq!(game_events(&tr, Seat::First), [0; 6]);
        for e in 0..6 {
            counts[e] += ev[e] as usize;
        }
        if ev[EV_PLACE_ONION] == 1 && counts[EV_PLACE_ONION] == 3 {
            onion3_step = Some(i);
        }
        if ev[EV_PICKUP_SOUP] == 1 {
            soup_step = Some(i);
        }
        total += tr.reward;
    }
    assert_eq!(counts[EV_PLACE_ONION], 3);
    assert_eq!(counts[EV_PICKUP_PLATE], 1);
    assert_eq!(counts[EV_PICKUP_SOUP], 1);
    assert_eq!(counts[EV_DELIVER], 1);
    assert_eq!(counts.iter().sum::<usize>(), 6);
    // the soup becomes available exactly 20 frames after the third onion
    assert_eq!(soup_step.unwrap() - onion3_step.unwrap(), 20);
    assert_eq!(total, 20.0);

    let mut steps = script.len();
    loop {
        let tr = env.step([STAY, STAY]).unwrap();
        steps += 1;
        if tr.done {
            break;
        }
    }
    assert_eq!(steps, 400);
    assert!(env.step([STAY, STAY]).is_err());
}

#[test]
fn scripted_rollout_concepts_follow_the_taxonomy() {
    let mut env = cramped(Granularity::Coarse);
    env.reset(0);
    let fired: Vec<usize> = full_dish_script()
        .iter()
        .filter_map(|j| env.step(*j).unwrap().interactions[1])
        .collect();
    use HighLevelAction::*;
    let expect: Vec<usize> = [
        OnionPickupFromPile,
        OnionDropInPot,
        OnionPickupFromPile,
        OnionDropInPot,
        OnionPickupFromPile,
        OnionDropInPot,
        PlatePickupFromPile,
        DishPickupFromPot,
        DishDelivery,
    ]
    .iter()
    .map(|a| a.index())
    .collect();
    assert_eq!(fired, expect);
}

#[test]
fn concept_set_sizes() {
    for (g, n) in [
        (Granularity::Granular, 44),
        (Granularity::Coarse, 11),
        (Granularity::VeryCoarse, 6),
        (Granularity::ActionBased, 6),
    ] {
        let env = EnvSpec::Kitchen {
            layout: "large_room".into(),
            concepts: g,
        }
        .build()
        .unwrap();
        assert_eq!(env.concept_set().len(), n);
    }
}

fn kitchen_layouts() -> impl Strategy<Value = &'static str> {
    prop_oneof![
        Just("cramped_room"),
        Just("large_room"),
        Just("forced_coordination")
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kitchen_is_deterministic_and_accounts_rewards(
        layout in kitchen_layouts(),
        actions in prop::collection::vec((0usize..6, 0usize..6), 1..400),
    ) {
        let run = || {
            let mut env = KitchenEnv::new(Layout::load(layout).unwrap(), Granularity::Granular);
            env.reset(3);
            let mut log = Vec::new();
            for &(a, b) in &actions {
                let tr = env.step([a, b]).unwrap();
                let obs = [env.observe(Seat::First), env.observe(Seat::Second)];
                log.push((tr, obs, env.state().agent_positions));
            }
            log
        };
        let first = run();
        let second = run();
        prop_assert_eq!(&first, &second);
        let mut reward = 0.0;
        let mut deliveries = 0;
        for (tr, obs, pos) in &first {
            reward += tr.reward;
            for seat in Seat::BOTH {
                let v = tr.interaction_vector(seat, 44);
                prop_assert!(v.iter().map(|&x| x as u32).sum::<u32>() <= 1);
                deliveries += game_events(tr, seat)[EV_DELIVER] as usize;
            }
            prop_assert_ne!(pos[0], pos[1]);
            prop_assert_eq!(obs[0].len(), obs[1].len());
        }
        prop_assert_eq!(reward, 20.0 * deliveries as f64);
    }

    #[test]
    fn signaling_reward_is_correct_minus_incorrect(
        seed in any::<u64>(),
        moves in prop::collection::vec((0usize..5, 0usize..5), 48),
    ) {
        let mut env = SignalingEnv::new();
        env.reset(seed);
        let (mut correct, mut wrong, mut total) = (0i32, 0i32, 0.0);
        for (a, b) in moves {
            if env.is_acting(Seat::Second) {
                let hidden = env.state().hidden_number as usize;
                if b < signaling::BAIL {
                    if b + 1 == hidden { correct += 1 } else { wrong += 1 }
                }
            }
            let tr = env.step([a, b]).unwrap();
            prop_assert!(tr.interactions[1].is_none());
            total += tr.reward;
            if tr.done { break; }
        }
        prop_assert_eq!(total, (correct - wrong) as f64);
    }
}

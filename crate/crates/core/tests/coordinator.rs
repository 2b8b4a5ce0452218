use proptest::prelude::*;
use rand::Rng;
use tbs_core::coordinator::{
    argmin_sticky, decision_log_csv, RandomSelection, TbsAgent, TbsConfig,
};
use tbs_core::envs::{signaling, ConceptSet, EnvSpec, Granularity, Observation};
use tbs_core::learners::{Policy, TrainConfig};
use tbs_core::play::{run_episode, Actor, Greedy, StepCtx};
use tbs_core::pool::{build_pool, planted_signaling_pool};
use tbs_core::seed;
use tbs_core::tom::{kl_bernoulli, FeatureSpec, Scope, ToMModel};
use tbs_core::Seat;

fn concepts() -> ConceptSet {
    ConceptSet::new(Granularity::Signal)
}

/// ToM model whose predictions are the fixed bias logits plus random feature weights.
fn model(scope: Scope, bias: &[f64], noise: f64, rng: &mut impl Rng) -> ToMModel {
    let mut m = ToMModel::zeros(
        scope,
        &concepts(),
        FeatureSpec::new(signaling::obs_spec(), 32, 0.9),
    );
    let c = m.concept_count;
    for (i, w) in m.weights.iter_mut().enumerate() {
        *w = if i < c {
            bias[i]
        } else if noise > 0.0 {
            rng.random_range(-noise..noise)
        } else {
            0.0
        };
    }
    m
}

fn const_bias(v: f64) -> Vec<f64> {
    vec![v; concepts().len()]
}

fn random_obs(rng: &mut impl Rng) -> Observation {
    Observation(
        signaling::obs_spec()
            .fields
            .iter()
            .map(|f| rng.random_range(0..f.cardinality))
            .collect(),
    )
}

fn ctx(t: usize) -> StepCtx {
    StepCtx { t, acting: true }
}

#[test]
fn initial_selection_is_uniform() {
    let pool = planted_signaling_pool(&[0, 1, 2, 3], 0, "pool");
    let policies: Vec<&Policy> = pool.pairs.iter().map(|p| &p.seat2).collect();
    let mut rng = seed::rng(0);
    let toms: Vec<ToMModel> = (0..4)
        .map(|i| model(Scope::Cluster(i), &const_bias(0.0), 0.0, &mut rng))
        .collect();
    let global = model(Scope::Global, &const_bias(0.0), 0.0, &mut rng);
    let mut agent = TbsAgent::from_parts(policies, &toms, &global, TbsConfig::default()).unwrap();
    let draws = 8_000;
    let mut counts = [0usize; 4];
    for s in 0..draws {
        agent.reset(s);
        counts[agent.active_index()] += 1;
    }
    let expected = draws as f64 / 4.0;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    // 3 degrees of freedom, p = 0.001
    assert!(chi2 < 16.27, "{counts:?}");
}

#[test]
fn random_selection_draws_uniformly_per_episode() {
    let pool = planted_signaling_pool(&[0, 1, 2], 0, "pool");
    let mut rs = RandomSelection::new(&pool.pairs, Seat::Second).unwrap();
    let mut counts = [0usize; 3];
    for s in 0..6_000 {
        rs.begin_episode(s);
        counts[rs.current()] += 1;
    }
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - 2_000.0).powi(2) / 2_000.0)
        .sum();
    assert!(chi2 < 13.82, "{counts:?}");
    assert!(RandomSelection::new(&[], Seat::Second).is_err());
}

#[test]
fn selection_moves_to_the_cluster_matching_the_global_model() {
    let pool = planted_signaling_pool(&[0, 1, 2], 0, "pool");
    let policies: Vec<&Policy> = pool.pairs.iter().map(|p| &p.seat2).collect();
    let mut rng = seed::rng(1);
    let toms = vec![
        model(Scope::Cluster(0), &const_bias(2.0), 0.0, &mut rng),
        model(Scope::Cluster(1), &const_bias(-2.0), 0.0, &mut rng),
        model(Scope::Cluster(2), &const_bias(0.1), 0.0, &mut rng),
    ];
    let global = model(Scope::Global, &const_bias(0.0), 0.0, &mut rng);
    let mut agent = TbsAgent::from_parts(policies, &toms, &global, TbsConfig::default()).unwrap();
    for episode in 0..20 {
        agent.reset(episode);
        let start = agent.active_index();
        let obs = random_obs(&mut rng);
        agent.act(&obs, ctx(0), &mut rng);
        assert_eq!(agent.active_index(), start);
        agent.act(&obs, ctx(1), &mut rng);
        assert_eq!(agent.active_index(), 2);
    }
}

#[test]
fn no_reselection_when_the_period_exceeds_the_horizon() {
    let pool = planted_signaling_pool(&[0, 1, 2], 0, "pool");
    let policies: Vec<&Policy> = pool.pairs.iter().map(|p| &p.seat2).collect();
    let mut rng = seed::rng(2);
    let toms: Vec<ToMModel> = (0..3)
        .map(|i| {
            model(
                Scope::Cluster(i),
                &const_bias(i as f64 - 1.0),
                0.5,
                &mut rng,
            )
        })
        .collect();
    let global = model(Scope::Global, &const_bias(0.0), 0.5, &mut rng);
    let cfg = TbsConfig {
        window: None,
        steps_per_selection: 400,
    };
    let mut agent = TbsAgent::from_parts(policies, &toms, &global, cfg).unwrap();
    for episode in 0..10 {
        agent.reset(episode);
        let start = agent.active_index();
        for t in 0..400 {
            agent.act(&random_obs(&mut rng), ctx(t), &mut rng);
            assert_eq!(agent.active_index(), start);
        }
    }
}

#[test]
fn single_cluster_tbs_replays_the_best_response_exactly() {
    let kitchen = EnvSpec::Kitchen {
        layout: "cramped_room".into(),
        concepts: Granularity::Coarse,
    };
    let cfg = TrainConfig {
        total_steps: 30_000,
        eval_episodes: 2,
        ..TrainConfig::vdn_default()
    };
    let pool = build_pool(&kitchen, 2, &cfg, 3, "pool").unwrap();
    let br = &pool.pairs[0].seat1;
    let partner = &pool.pairs[1].seat2;
    let env = kitchen.build().unwrap();
    let cset = env.concept_set().clone();
    let mut rng = seed::rng(3);
    let noisy = |scope, rng: &mut _| {
        let mut m = ToMModel::zeros(
            scope,
            &cset,
            FeatureSpec::new(env.obs_spec().clone(), 32, 0.9),
        );
        m.weights
            .iter_mut()
            .for_each(|w| *w = rand::Rng::random_range(rng, -1.0..1.0));
        m
    };
    let toms = vec![noisy(Scope::Cluster(0), &mut rng)];
    let global = noisy(Scope::Global, &mut rng);
    let mut env = kitchen.build().unwrap();
    for episode in 0..100u64 {
        let s = seed::derive(99, "episode", episode);
        let mut tbs = TbsAgent::from_parts(vec![br], &toms, &global, TbsConfig::default()).unwrap();
        let (_, a) = run_episode(env.as_mut(), [&mut tbs, &mut Greedy(partner)], s, true).unwrap();
        let (_, b) = run_episode(
            env.as_mut(),
            [&mut Greedy(br), &mut Greedy(partner)],
            s,
            true,
        )
        .unwrap();
        let acts =
            |t: tbs_core::play::Trajectory| t.steps.iter().map(|x| x.actions).collect::<Vec<_>>();
        assert_eq!(acts(a.unwrap()), acts(b.unwrap()));
    }
}

#[test]
fn trace_records_every_decision() {
    let pool = planted_signaling_pool(&[0, 1], 0, "pool");
    let policies: Vec<&Policy> = pool.pairs.iter().map(|p| &p.seat2).collect();
    let mut rng = seed::rng(4);
    let toms: Vec<ToMModel> = (0..2)
        .map(|i| model(Scope::Cluster(i), &const_bias(i as f64), 0.2, &mut rng))
        .collect();
    let global = model(Scope::Global, &const_bias(0.0), 0.2, &mut rng);
    let mut agent = TbsAgent::from_parts(policies, &toms, &global, TbsConfig::default()).unwrap();
    agent.enable_trace();
    let mut env = EnvSpec::Signaling.build().unwrap();
    let partner = &pool.pairs[0].seat1;
    run_episode(env.as_mut(), [&mut Greedy(partner), &mut agent], 5, false).unwrap();
    let rows = agent.take_trace();
    assert_eq!(rows.len(), signaling::HORIZON);
    let csv = decision_log_csv(&rows);
    assert!(csv.starts_with("t,active_index,action,acc_0,acc_1\n"));
    assert_eq!(csv.lines().count(), rows.len() + 1);
}

#[test]
fn mismatched_parts_are_rejected() {
    let pool = planted_signaling_pool(&[0, 1], 0, "pool");
    let mut rng = seed::rng(5);
    let toms = vec![model(Scope::Cluster(0), &const_bias(0.0), 0.0, &mut rng)];
    let global = model(Scope::Global, &const_bias(0.0), 0.0, &mut rng);
    let two: Vec<&Policy> = pool.pairs.iter().map(|p| &p.seat2).collect();
    assert!(TbsAgent::from_parts(two, &toms, &global, TbsConfig::default()).is_err());
    let zero = TbsConfig {
        window: None,
        steps_per_selection: 0,
    };
    assert!(TbsAgent::from_parts(vec![&pool.pairs[0].seat2], &toms, &global, zero).is_err());
}

fn agent_inputs() -> impl Strategy<Value = (usize, u64, usize)> {
    (1usize..5, any::<u64>(), 1usize..80)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sticky_argmin_is_scale_invariant(
        values in prop::collection::vec(prop_oneof![Just(0.0), Just(1.0), 0.0f64..5.0], 1..8),
        current in 0usize..8,
        scale in 1e-3f64..1e3,
    ) {
        let current = current % values.len();
        let a = argmin_sticky(&values, current);
        let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
        prop_assert_eq!(argmin_sticky(&scaled, current), a);
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(values[a], min);
        if values[current] == min {
            prop_assert_eq!(a, current);
        } else {
            prop_assert!(values[..a].iter().all(|&v| v > min));
        }
    }

    #[test]
    fn accumulators_follow_their_definition((k, sd, len) in agent_inputs(), window in 1usize..60, period in 1usize..10) {
        let mut rng = seed::rng(sd);
        let pool = planted_signaling_pool(&vec![0; k], 0, "pool");
        let policies: Vec<&Policy> = pool.pairs.iter().map(|p| &p.seat2).collect();
        let toms: Vec<ToMModel> = (0..k).map(|i| model(Scope::Cluster(i), &const_bias(0.0), 1.0, &mut rng)).collect();
        let global = model(Scope::Global, &const_bias(0.0), 1.0, &mut rng);
        let mk = |w| TbsAgent::from_parts(policies.clone(), &toms, &global, TbsConfig { window: w, steps_per_selection: period }).unwrap();
        let mut windowed = mk(Some(window));
        let mut unbounded = mk(None);
        let mut long = mk(Some(len));
        windowed.reset(sd);
        unbounded.reset(sd);
        long.reset(sd);
        let history: Vec<Observation> = (0..len).map(|_| random_obs(&mut rng)).collect();
        let mut incs: Vec<Vec<f64>> = Vec::new();
        let mut act_rng = seed::rng(0);
        for (t, obs) in history.iter().enumerate() {
            let before = windowed.active_index();
            windowed.act(obs, ctx(t), &mut act_rng);
            unbounded.act(obs, ctx(t), &mut act_rng);
            long.act(obs, ctx(t), &mut act_rng);
            let p = tbs_core::tom::predict_concepts(&global, &history[..=t], &concepts()).unwrap();
            let inc: Vec<f64> = toms.iter().map(|m| {
                let q = tbs_core::tom::predict_concepts(m, &history[..=t], &concepts()).unwrap();
                q.iter().zip(&p).map(|(&a, &b)| kl_bernoulli(a, b)).sum()
            }).collect();
            incs.push(inc);
            for i in 0..k {
                let tail: f64 = incs.iter().rev().take(window).map(|r| r[i]).sum();
                let all: f64 = incs.iter().map(|r| r[i]).sum();
                prop_assert!((windowed.accumulators()[i] - tail).abs() <= 1e-9 * (1.0 + tail));
                prop_assert!((unbounded.accumulators()[i] - all).abs() <= 1e-9 * (1.0 + all));
                prop_assert_eq!(long.accumulators()[i].to_bits(), unbounded.accumulators()[i].to_bits());
            }
            if t == 0 || t % period != 0 {
                prop_assert_eq!(windowed.active_index(), before);
            } else {
                prop_assert_eq!(windowed.active_index(), argmin_sticky(windowed.accumulators(), before));
            }
            if window == 1 {
                prop_assert_eq!(windowed.accumulators(), &incs[t][..]);
            }
        }
    }
}

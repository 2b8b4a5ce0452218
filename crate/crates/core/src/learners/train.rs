//! Training loops: VDN self-play and best response against a frozen partner set.

use rand::Rng as _;

use crate::envs::{game_events, EnvSpec, Environment, ObsSpec, Observation};
use crate::learners::value::argmax;
use crate::learners::{Policy, PolicyProvenance, ShapingSpec, TrainConfig, ValueFunction};
use crate::play::{run_episode, Greedy};
use crate::pool::{PairProvenance, PolicyPair};
use crate::seed::{self, Rng};
use crate::{Result, Seat, TbsError};

struct SegStep {
    obs: [Observation; 2],
    acting: [bool; 2],
    actions: [usize; 2],
    reward: f64,
}

fn explore(q: &ValueFunction, spec: &ObsSpec, obs: &Observation, eps: f64, rng: &mut Rng) -> usize {
    let n = q.action_count();
    if rng.random::<f64>() < eps {
        return rng.random_range(0..n);
    }
    match q.values(spec, obs) {
        Some(v) => argmax(&v),
        None => rng.random_range(0..n),
    }
}

fn conventional_shaping(config: &TrainConfig) -> ShapingSpec {
    ShapingSpec {
        coefficients: config.annealed_shaping.clone(),
        anneal_horizon: config.annealed_shaping_horizon,
        base_magnitudes: vec![0.0; config.annealed_shaping.len()],
    }
}

fn diverged(what: &str, config: &TrainConfig, step: u64) -> TbsError {
    TbsError::Divergence(format!(
        "{what}: non-finite value after step {step} (seed {}, lr {}, gamma {}, lambda {})",
        config.seed, config.learning_rate, config.gamma, config.lambda
    ))
}

/// Sum of greedy per-agent values over the acting seats.
fn joint_greedy_value(
    q: &[ValueFunction; 2],
    spec: &ObsSpec,
    obs: &[Observation; 2],
    acting: [bool; 2],
) -> f64 {
    (0..2)
        .filter(|&i| acting[i])
        .map(|i| q[i].max_q(spec, &obs[i]))
        .sum()
}

/// Mean greedy sparse return of a seat pairing.
fn greedy_return(
    env: &mut dyn Environment,
    p1: &Policy,
    p2: &Policy,
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    let mut total = 0.0;
    for e in 0..episodes {
        let (ret, _) = run_episode(
            env,
            [&mut Greedy(p1), &mut Greedy(p2)],
            seed::derive(seed, "episode", e as u64),
            false,
        )?;
        total += ret;
    }
    Ok(total / episodes.max(1) as f64)
}

/// Co-trains two agents with a value-decomposed joint Q (VDN) on a team reward
/// made of the sparse reward, the annealed conventional shaping and each
/// agent's random shaping.
pub fn train_selfplay_pair(
    env_spec: &EnvSpec,
    shaping: &[ShapingSpec; 2],
    config: &TrainConfig,
) -> Result<PolicyPair> {
    config.validate()?;
    let mut env = env_spec.build()?;
    let spec = env.obs_spec().clone();
    let n_act = env.num_actions();
    let mut q = [
        ValueFunction::new(config.representation, &spec, n_act),
        ValueFunction::new(config.representation, &spec, n_act),
    ];
    let conventional = conventional_shaping(config);
    let mut rng = seed::rng(seed::derive(config.seed, "vdn", 0));
    let mut episode = 0u64;
    env.reset(seed::derive(config.seed, "vdn-env", episode));
    let mut step = 0u64;

    while step < config.total_steps {
        let mut seg: Vec<SegStep> = Vec::with_capacity(config.segment_steps);
        let mut ended = false;
        while seg.len() < config.segment_steps && step < config.total_steps {
            let obs = [env.observe(Seat::First), env.observe(Seat::Second)];
            let acting = [env.is_acting(Seat::First), env.is_acting(Seat::Second)];
            let eps = config.epsilon(step);
            let mut actions = [0; 2];
            for i in 0..2 {
                if acting[i] {
                    actions[i] = explore(&q[i], &spec, &obs[i], eps, &mut rng);
                }
            }
            let tr = env.step(actions)?;
            let mut reward = tr.reward;
            for seat in Seat::BOTH {
                let ev = game_events(&tr, seat);
                reward += conventional.bonus(&ev, step) + shaping[seat.index()].bonus(&ev, step);
            }
            seg.push(SegStep {
                obs,
                acting,
                actions,
                reward,
            });
            step += 1;
            if tr.done {
                ended = true;
                break;
            }
        }

        let lr = config.lr(step.saturating_sub(seg.len() as u64));
        if lr > 0.0 {
            let mut values: Vec<f64> = seg
                .iter()
                .map(|s| joint_greedy_value(&q, &spec, &s.obs, s.acting))
                .collect();
            values.push(if ended {
                0.0
            } else {
                let obs = [env.observe(Seat::First), env.observe(Seat::Second)];
                let acting = [env.is_acting(Seat::First), env.is_acting(Seat::Second)];
                joint_greedy_value(&q, &spec, &obs, acting)
            });
            let rewards: Vec<f64> = seg.iter().map(|s| s.reward).collect();
            let targets =
                super::compute_lambda_targets(&rewards, &values, config.gamma, config.lambda)?;
            for (s, g) in seg.iter().zip(targets) {
                let seats: Vec<usize> = (0..2).filter(|&i| s.acting[i]).collect();
                if seats.is_empty() {
                    continue;
                }
                let joint: f64 = seats
                    .iter()
                    .map(|&i| q[i].q(&spec, &s.obs[i], s.actions[i]))
                    .sum();
                let delta = g - joint;
                for &i in &seats {
                    q[i].update(&spec, &s.obs[i], s.actions[i], lr * delta);
                }
            }
            if !(q[0].all_finite() && q[1].all_finite()) {
                return Err(diverged("self-play", config, step));
            }
        }

        if ended {
            episode += 1;
            env.reset(seed::derive(config.seed, "vdn-env", episode));
        }
    }

    let config_hash = seed::hash_json(config);
    let [q1, q2] = q;
    let policy = |value, i: usize| {
        Policy::new(
            spec.clone(),
            value,
            PolicyProvenance {
                seed: config.seed,
                shaping: Some(shaping[i].clone()),
                config_hash: config_hash.clone(),
                note: format!("vdn seat {}", i + 1),
            },
        )
    };
    let seat1 = policy(q1, 0);
    let seat2 = policy(q2, 1);
    let self_play_return = greedy_return(
        env.as_mut(),
        &seat1,
        &seat2,
        config.eval_episodes,
        seed::derive(config.seed, "vdn-eval", 0),
    )?;
    Ok(PolicyPair {
        seat1,
        seat2,
        self_play_return,
        provenance: PairProvenance {
            seed: config.seed,
            shaping: shaping.clone(),
            config_hash,
            family: None,
        },
    })
}

/// Trains one policy for `seat` against partners drawn uniformly from
/// `partners` at the start of every episode. Partners play greedily and are frozen.
pub fn train_best_response(
    env_spec: &EnvSpec,
    partners: &[PolicyPair],
    seat: Seat,
    config: &TrainConfig,
) -> Result<Policy> {
    if partners.is_empty() {
        return Err(TbsError::EmptyPartnerSet);
    }
    config.validate()?;
    let mut env = env_spec.build()?;
    let spec = env.obs_spec().clone();
    let mut q = ValueFunction::new(config.representation, &spec, env.num_actions());
    let conventional = conventional_shaping(config);
    let me = seat.index();
    let mut rng = seed::rng(seed::derive(config.seed, "br", 0));
    let mut partner_rng = seed::rng(seed::derive(config.seed, "br-partner", 0));
    let mut episode = 0u64;
    let mut partner = partners[rng.random_range(0..partners.len())].seat(seat.other());
    env.reset(seed::derive(config.seed, "br-env", episode));
    let mut step = 0u64;

    while step < config.total_steps {
        // (observation, acting, action, reward) for the learner
        let mut seg: Vec<(Observation, bool, usize, f64)> =
            Vec::with_capacity(config.segment_steps);
        let mut ended = false;
        while seg.len() < config.segment_steps && step < config.total_steps {
            let obs = env.observe(seat);
            let acting = env.is_acting(seat);
            let mut actions = [0; 2];
            if acting {
                actions[me] = explore(&q, &spec, &obs, config.epsilon(step), &mut rng);
            }
            if env.is_acting(seat.other()) {
                actions[1 - me] = partner.act(&env.observe(seat.other()), &mut partner_rng);
            }
            let tr = env.step(actions)?;
            let reward = tr.reward + conventional.bonus(&game_events(&tr, seat), step);
            seg.push((obs, acting, actions[me], reward));
            step += 1;
            if tr.done {
                ended = true;
                break;
            }
        }

        let lr = config.lr(step.saturating_sub(seg.len() as u64));
        if lr > 0.0 {
            let value =
                |o: &Observation, acting: bool| if acting { q.max_q(&spec, o) } else { 0.0 };
            let mut values: Vec<f64> = seg.iter().map(|(o, a, _, _)| value(o, *a)).collect();
            values.push(if ended {
                0.0
            } else {
                value(&env.observe(seat), env.is_acting(seat))
            });
            let rewards: Vec<f64> = seg.iter().map(|s| s.3).collect();
            let targets =
                super::compute_lambda_targets(&rewards, &values, config.gamma, config.lambda)?;
            for ((o, acting, a, _), g) in seg.iter().zip(targets) {
                if *acting {
                    let delta = g - q.q(&spec, o, *a);
                    q.update(&spec, o, *a, lr * delta);
                }
            }
            if !q.all_finite() {
                return Err(diverged("best response", config, step));
            }
        }

        if ended {
            episode += 1;
            partner = partners[rng.random_range(0..partners.len())].seat(seat.other());
            env.reset(seed::derive(config.seed, "br-env", episode));
        }
    }

    Ok(Policy::new(
        spec,
        q,
        PolicyProvenance {
            seed: config.seed,
            shaping: None,
            config_hash: seed::hash_json(config),
            note: format!(
                "best response seat {} over {} partners",
                seat,
                partners.len()
            ),
        },
    ))
}

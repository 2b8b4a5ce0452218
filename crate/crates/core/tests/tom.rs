use proptest::prelude::*;
use rand::Rng;
use tbs_core::envs::{signaling, ConceptSet, EnvSpec, FieldKind, Granularity, Observation};
use tbs_core::play::{TrajStep, Trajectory};
use tbs_core::pool::planted_signaling_pool;
use tbs_core::seed;
use tbs_core::tom::{
    extract_concept_labels, generate_dataset, kl_bernoulli, mean_bce, next_interact_concepts,
    predict_concepts, train_tom, train_tom_with_history, EpisodeRecord, FeatureSpec, Scope,
    ToMDataset, ToMModel, TomConfig,
};
use tbs_core::Seat;

fn backward_scan(interactions: &[Option<usize>]) -> Vec<Option<usize>> {
    let mut out = vec![None; interactions.len()];
    let mut next = None;
    for t in (0..interactions.len()).rev() {
        if interactions[t].is_some() {
            next = interactions[t];
        }
        out[t] = next;
    }
    out
}

fn trajectory(inter: &[[Option<usize>; 2]], concept_count: usize) -> Trajectory {
    Trajectory {
        steps: inter
            .iter()
            .map(|&interactions| TrajStep {
                obs: [Observation(vec![]), Observation(vec![])],
                actions: [0, 0],
                reward: 0.0,
                interactions,
                acting: [true, true],
            })
            .collect(),
        concept_count,
    }
}

fn random_obs(rng: &mut impl Rng) -> Observation {
    let spec = signaling::obs_spec();
    Observation(
        spec.fields
            .iter()
            .map(|f| rng.random_range(0..f.cardinality))
            .collect(),
    )
}

fn signal_concepts() -> ConceptSet {
    ConceptSet::new(Granularity::Signal)
}

/// Dense features recomputed from the whole history.
fn dense_features(spec: &FeatureSpec, history: &[Observation]) -> Vec<f64> {
    let mut x = vec![1.0];
    let last = history.last().unwrap();
    for (i, f) in spec.obs_spec.fields.iter().enumerate() {
        match f.kind {
            FieldKind::Categorical => {
                let mut block = vec![0.0; f.cardinality as usize];
                block[last.0[i] as usize] = 1.0;
                x.extend(block);
            }
            FieldKind::Event => {
                let mut block = vec![0.0; f.cardinality as usize - 1];
                for (age, obs) in history.iter().rev().take(spec.window).enumerate() {
                    if obs.0[i] > 0 {
                        block[obs.0[i] as usize - 1] += spec.decay.powi(age as i32);
                    }
                }
                x.extend(block);
            }
            FieldKind::Time => x.push(last.0[i] as f64 / (f.cardinality - 1) as f64),
        }
    }
    x
}

#[test]
fn kl_reference_value() {
    let direct = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
    assert!((kl_bernoulli(0.5, 0.25) - direct).abs() < 1e-12);
    assert!((kl_bernoulli(0.5, 0.25) - 0.14384).abs() < 1e-5);
}

#[test]
fn kl_is_nonnegative_and_zero_only_on_equal_arguments() {
    let mut rng = seed::rng(1);
    let clamp = |p: f64| p.clamp(1e-6, 1.0 - 1e-6);
    for _ in 0..10_000 {
        let p: f64 = rng.random();
        let q: f64 = if rng.random_bool(0.1) {
            p
        } else {
            rng.random()
        };
        let kl = kl_bernoulli(p, q);
        assert!(kl >= 0.0 && kl.is_finite());
        if clamp(p) == clamp(q) {
            assert!(kl <= 1e-15);
        } else if (clamp(p) - clamp(q)).abs() > 1e-4 {
            assert!(kl > 0.0, "{p} {q}");
        }
    }
    assert_eq!(kl_bernoulli(0.0, 1e-9), 0.0);
    assert!(kl_bernoulli(0.0, 1.0) > 10.0);
}

#[test]
fn forward_labels_match_backward_scan_on_random_trajectories() {
    let mut rng = seed::rng(2);
    for _ in 0..1_000 {
        let len = rng.random_range(0..200);
        let density = rng.random_range(0.0..0.5);
        let inter: Vec<[Option<usize>; 2]> = (0..len)
            .map(|_| [0, 1].map(|_| rng.random_bool(density).then(|| rng.random_range(0..11))))
            .collect();
        let t = trajectory(&inter, 11);
        for seat in Seat::BOTH {
            let column: Vec<Option<usize>> = inter.iter().map(|s| s[seat.index()]).collect();
            let expected = backward_scan(&column);
            assert_eq!(next_interact_concepts(&t, seat), expected);
            let dense = extract_concept_labels(&t, seat);
            for (row, e) in dense.iter().zip(&expected) {
                assert_eq!(row.len(), 11);
                assert_eq!(
                    row.iter().map(|&v| v as usize).sum::<usize>(),
                    e.is_some() as usize
                );
                if let Some(c) = e {
                    assert_eq!(row[*c], 1);
                }
            }
        }
    }
}

#[test]
fn labels_after_the_last_interact_are_zero() {
    let t = trajectory(&[[None, None], [Some(2), None], [None, None]], 4);
    assert_eq!(
        next_interact_concepts(&t, Seat::First),
        vec![Some(2), Some(2), None]
    );
    assert_eq!(extract_concept_labels(&t, Seat::First)[2], vec![0, 0, 0, 0]);
    assert_eq!(next_interact_concepts(&t, Seat::Second), vec![None; 3]);
}

fn synthetic_dataset(label: Option<usize>, episodes: usize, seed_value: u64) -> ToMDataset {
    let mut rng = seed::rng(seed_value);
    let mut d = ToMDataset::empty(&signal_concepts());
    for _ in 0..episodes {
        let observations: Vec<Observation> = (0..30).map(|_| random_obs(&mut rng)).collect();
        let labels = vec![label; observations.len()];
        d.episodes.push(EpisodeRecord {
            observations,
            labels,
        });
    }
    d
}

#[test]
fn single_behavior_partner_is_predicted_confidently() {
    let concepts = signal_concepts();
    let d = synthetic_dataset(Some(3), 20, 4);
    let model = train_tom(
        &d,
        Scope::Cluster(0),
        &concepts,
        &signaling::obs_spec(),
        &TomConfig::default(),
    )
    .unwrap();
    let mut rng = seed::rng(5);
    for _ in 0..20 {
        let history: Vec<Observation> = (0..10).map(|_| random_obs(&mut rng)).collect();
        let p = predict_concepts(&model, &history, &concepts).unwrap();
        for (j, pj) in p.iter().enumerate() {
            if j == 3 {
                assert!(*pj > 0.9, "{pj}");
            } else {
                assert!(*pj < 0.1, "{j} {pj}");
            }
        }
    }
}

#[test]
fn partner_without_interacts_predicts_near_zero() {
    let concepts = signal_concepts();
    let d = synthetic_dataset(None, 20, 6);
    let model = train_tom(
        &d,
        Scope::Global,
        &concepts,
        &signaling::obs_spec(),
        &TomConfig::default(),
    )
    .unwrap();
    let mut rng = seed::rng(7);
    let history: Vec<Observation> = (0..10).map(|_| random_obs(&mut rng)).collect();
    let p = predict_concepts(&model, &history, &concepts).unwrap();
    assert!(p.iter().sum::<f64>() / (p.len() as f64) < 0.05);
}

#[test]
fn training_on_planted_partners_lowers_the_loss_monotonically() {
    let env = EnvSpec::Signaling;
    let pool = planted_signaling_pool(&[0, 1, 2], 3, "pool");
    let partners: Vec<_> = pool.pairs.iter().collect();
    let brs: Vec<_> = pool
        .pairs
        .iter()
        .map(|p| (Seat::Second, &p.seat2))
        .collect();
    let cfg = TomConfig {
        episodes_per_pairing: 5,
        ..TomConfig::default()
    };
    let d = generate_dataset(&env, &partners, &brs, &cfg, 8).unwrap();
    assert_eq!(d.episodes.len(), 3 * 3 * 5);
    let again = generate_dataset(&env, &partners, &brs, &cfg, 8).unwrap();
    assert_eq!(d, again);

    let concepts = signal_concepts();
    let (model, hist) =
        train_tom_with_history(&d, Scope::Global, &concepts, &signaling::obs_spec(), &cfg).unwrap();
    for w in hist.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
    }
    let m = concepts.len() as f64;
    let zero = ToMModel::zeros(Scope::Global, &concepts, model.features.clone());
    assert!((mean_bce(&zero, &d) - m * std::f64::consts::LN_2).abs() < 1e-9);
    assert!(mean_bce(&model, &d) <= m * std::f64::consts::LN_2);
    assert!(mean_bce(&model, &d) < 0.5 * m * std::f64::consts::LN_2);
}

#[test]
fn empty_dataset_and_mismatched_concepts_are_errors() {
    let concepts = signal_concepts();
    let empty = ToMDataset::empty(&concepts);
    assert!(train_tom(
        &empty,
        Scope::Global,
        &concepts,
        &signaling::obs_spec(),
        &TomConfig::default()
    )
    .is_err());
    let coarse = ConceptSet::new(Granularity::Coarse);
    let d = synthetic_dataset(None, 1, 0);
    assert!(train_tom(
        &d,
        Scope::Global,
        &coarse,
        &signaling::obs_spec(),
        &TomConfig::default()
    )
    .is_err());
    let model = ToMModel::zeros(
        Scope::Global,
        &concepts,
        FeatureSpec::new(signaling::obs_spec(), 32, 0.9),
    );
    assert!(predict_concepts(&model, &[], &concepts).is_err());
    assert!(predict_concepts(&model, &[Observation(vec![0; 6])], &coarse).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prediction_matches_dense_recomputation(
        sd in any::<u64>(),
        len in 1usize..80,
        window in 1usize..40,
        decay in 0.0f64..=1.0,
    ) {
        let mut rng = seed::rng(sd);
        let concepts = signal_concepts();
        let features = FeatureSpec::new(signaling::obs_spec(), window, decay);
        let mut model = ToMModel::zeros(Scope::Cluster(1), &concepts, features.clone());
        model.weights.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
        let history: Vec<Observation> = (0..len).map(|_| random_obs(&mut rng)).collect();
        let p = predict_concepts(&model, &history, &concepts).unwrap();
        let x = dense_features(&features, &history);
        prop_assert_eq!(x.len(), features.dim());
        let m = concepts.len();
        for j in 0..m {
            let z: f64 = x.iter().enumerate().map(|(f, v)| v * model.weights[f * m + j]).sum();
            let expect = 1.0 / (1.0 + (-z).exp());
            prop_assert!((p[j] - expect).abs() < 1e-12);
            prop_assert!(p[j] > 0.0 && p[j] < 1.0);
        }
        prop_assert_eq!(predict_concepts(&model, &history, &concepts).unwrap(), p);
    }
}

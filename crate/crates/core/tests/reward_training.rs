use proptest::prelude::*;
use std::sync::Arc;

use rewardsim::env::*;
use rewardsim::reward::*;
use rewardsim::rng::SeedStream;
use rewardsim::stats::{log_sigmoid, sigmoid};

fn universe(seed: u64) -> Universe {
    make_universe(
        &UniverseConfig {
            pilot_size: 500,
            ..UniverseConfig::default()
        },
        seed,
    )
    .unwrap()
}

fn random_model(kind: RmKind, seed: u64) -> RewardModel {
    let rep = Arc::new(Representation::new(seed % 5 + 1, RepDims::default()).unwrap());
    let s = SeedStream::new(seed).derive("head");
    let w = (0..32).map(|i| 2.0 * s.index(i).unit() - 1.0).collect();
    RewardModel::new(kind, rep, 1, w, s.index(99).unit() - 0.5).unwrap()
}

fn central_difference(rm: &RewardModel, f: &dyn Fn(&RewardModel) -> f64, i: usize) -> f64 {
    let h = 1e-5;
    let shift = |d: f64| {
        let mut m = rm.clone();
        if i < m.w.len() {
            m.w[i] += d;
        } else {
            m.b += d;
        }
        f(&m)
    };
    (shift(h) - shift(-h)) / (2.0 * h)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn pairwise_gradient_matches_finite_differences(seed in 0u64..1000, eta in 0.0f64..0.1) {
        let u = universe(seed % 3);
        let batch = gen_preference_data(&u, 16, SeedStream::new(seed)).unwrap();
        let rm = random_model(RmKind::Pairwise, seed);
        let (_, grad) = bt_loss(&rm, &u, &batch, eta).unwrap();
        let f = |m: &RewardModel| bt_loss(m, &u, &batch, eta).unwrap().0;
        for i in [0, 7, 31, 32] {
            prop_assert!(rel_err(grad[i], central_difference(&rm, &f, i)) < 1e-4);
        }
    }

    #[test]
    fn pointwise_gradient_matches_finite_differences(seed in 0u64..1000) {
        let u = universe(seed % 3);
        let batch = gen_pointwise_data(&u, 16, SeedStream::new(seed)).unwrap();
        let rm = random_model(RmKind::Pointwise, seed);
        let (_, grad) = pointwise_loss(&rm, &u, &batch).unwrap();
        let f = |m: &RewardModel| pointwise_loss(m, &u, &batch).unwrap().0;
        for i in [1, 13, 30, 32] {
            prop_assert!(rel_err(grad[i], central_difference(&rm, &f, i)) < 1e-4);
        }
    }
}

#[test]
fn losses_match_the_formula_on_model_scores() {
    let u = universe(4);
    let pairs = gen_preference_data(&u, 40, SeedStream::new(1)).unwrap();
    let rm = random_model(RmKind::Pairwise, 8);
    let eta = 0.05;
    let expected = pairs
        .iter()
        .map(|e| {
            let a = rm_score(&rm, &u, &e.prompt, &e.preferred).unwrap().value();
            let b = rm_score(&rm, &u, &e.prompt, &e.rejected).unwrap().value();
            -log_sigmoid(a - b) + eta * (a + b) * (a + b)
        })
        .sum::<f64>()
        / pairs.len() as f64;
    assert!((bt_loss(&rm, &u, &pairs, eta).unwrap().0 - expected).abs() < 1e-10);

    let points = gen_pointwise_data(&u, 40, SeedStream::new(2)).unwrap();
    let rm = random_model(RmKind::Pointwise, 9);
    let expected = points
        .iter()
        .map(|e| {
            let p = sigmoid(rm_score(&rm, &u, &e.prompt, &e.response).unwrap().value());
            let l = f64::from(e.label);
            -(l * p.ln() + (1.0 - l) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / points.len() as f64;
    assert!((pointwise_loss(&rm, &u, &points).unwrap().0 - expected).abs() < 1e-10);
}

#[test]
fn untrained_heads_rank_at_chance() {
    let u = universe(2);
    let train = gen_preference_data(&u, 200, SeedStream::new(1)).unwrap();
    let heldout = gen_preference_data(&u, 1000, SeedStream::new(2)).unwrap();
    let set = TrainingSet {
        train: Labeled::Pairwise(train),
        validation: None,
    };
    let cfg = TrainConfig {
        steps: 0,
        ..TrainConfig::default()
    };
    let grid = train_grid(&u, &set, &[1, 2, 3, 4], &[1, 2, 3, 4, 5], &cfg).unwrap();
    let accs: Vec<f64> = grid.all().iter().map(|m| rm_accuracy(m, &u, &heldout).unwrap()).collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    // 20 random heads: the average sits near chance.
    assert!((mean - 0.5).abs() < 0.1, "mean untrained accuracy {mean}");
}

#[test]
fn trained_models_beat_chance() {
    let u = universe(2);
    let data = gen_preference_data(&u, 2000, SeedStream::new(1)).unwrap();
    let heldout = gen_preference_data(&u, 1000, SeedStream::new(2)).unwrap();
    let split = split_dataset(&data, [0.8, 0.1, 0.1], SeedStream::new(3)).unwrap();
    let set = TrainingSet {
        train: Labeled::Pairwise(split.rm_half),
        validation: Some(Labeled::Pairwise(split.validation)),
    };
    let rm = train_rm(&u, &set, 1, 1, &TrainConfig::default()).unwrap();
    let acc = rm_accuracy(&rm, &u, &heldout).unwrap();
    assert!(acc > 0.55, "accuracy {acc}");
}

#[test]
fn grid_cells_match_individual_training() {
    let u = universe(3);
    let data = gen_preference_data(&u, 400, SeedStream::new(1)).unwrap();
    let split = split_dataset(&data, [0.8, 0.1, 0.1], SeedStream::new(3)).unwrap();
    let set = TrainingSet {
        train: Labeled::Pairwise(split.rm_half),
        validation: Some(Labeled::Pairwise(split.validation)),
    };
    let cfg = TrainConfig {
        steps: 300,
        ..TrainConfig::default()
    };
    let grid = train_grid(&u, &set, &[2, 5], &[1, 3], &cfg).unwrap();
    // Each cell depends only on its own seeds.
    let alone = train_rm(&u, &set, 5, 3, &cfg).unwrap();
    assert_eq!(grid.get(5, 3).unwrap(), &alone);
    let other = train_grid(&u, &set, &[5], &[3, 4], &cfg).unwrap();
    assert_eq!(other.get(5, 3).unwrap(), &alone);
    assert_ne!(grid.get(2, 3).unwrap().w, alone.w);
}

#[test]
fn pointwise_models_learn_the_labels() {
    let u = universe(5);
    let data = gen_pointwise_data(&u, 3000, SeedStream::new(1)).unwrap();
    let heldout = gen_preference_data(&u, 1000, SeedStream::new(2)).unwrap();
    let set = TrainingSet {
        train: Labeled::Pointwise(data),
        validation: None,
    };
    let rm = train_rm(&u, &set, 1, 1, &TrainConfig::default()).unwrap();
    assert_eq!(rm.kind, RmKind::Pointwise);
    assert!(rm_accuracy(&rm, &u, &heldout).unwrap() > 0.55);
}

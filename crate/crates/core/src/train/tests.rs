use proptest::prelude::*;

use super::*;
use crate::data::{gen_synthetic, SyntheticSpec};
use crate::model::{Level, ModelConfig, ParamStore, Variant};
use crate::tensor::Tensor;

fn scene(points: usize, seed: u64) -> PointCloud {
    gen_synthetic(&SyntheticSpec { points, num_classes: 4, seed, ..SyntheticSpec::default() }).unwrap()
}

fn small_model(variant: &str, seed: u64) -> Model {
    let cfg = ModelConfig {
        levels: vec![Level { divisor: 4, dim: 8 }, Level { divisor: 16, dim: 16 }],
        k: 6,
        head_dims: vec![16, 8],
        num_classes: 4,
        aug_loss_weights: vec![0.1, 0.3],
        variant: Variant::preset(variant).unwrap(),
        ..ModelConfig::default()
    };
    Model::new(cfg, seed).unwrap()
}

fn quick(epochs: usize, batch_size: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size, crop_size: 128, crops_per_cloud: 2, ..TrainConfig::default() }
}

fn run(model: &mut Model, clouds: &[PointCloud], cfg: &TrainConfig) -> Result<TrainReport> {
    let samples = prepare_samples(model, clouds, cfg)?;
    train(model, &samples, cfg, &mut |_| Ok(()))
}

#[test]
fn schedule_examples() {
    let cfg = TrainConfig::default();
    assert_eq!(lr_at(0, &cfg), 0.01);
    assert_eq!(lr_at(9, &cfg), 0.01);
    assert_eq!(lr_at(10, &cfg), 0.005);
    assert_eq!(lr_at(25, &cfg), 0.0025);
}

proptest! {
    #[test]
    fn schedule_is_positive_and_nonincreasing(epoch in 0usize..500, decay in 0.05f32..1.0, every in 1usize..20) {
        let cfg = TrainConfig { decay, decay_every: every, ..TrainConfig::default() };
        let (a, b) = (lr_at(epoch, &cfg), lr_at(epoch + 1, &cfg));
        prop_assert!(b <= a);
        prop_assert!(a <= cfg.lr0);
        prop_assert!(b >= 0.0);
    }
}

#[test]
fn total_loss_examples() {
    assert_eq!(total_loss_value(0.7, &[3.0, 4.0], &[0.0, 0.0]).unwrap(), 0.7);
    let w = crate::model::DEFAULT_AUG_WEIGHTS;
    assert!((total_loss_value(1.0, &[1.0; 5], &w).unwrap() - 2.5).abs() < 1e-6);
    assert!(matches!(total_loss_value(1.0, &[1.0; 4], &w), Err(Error::Config(_))));
}

#[test]
fn total_loss_distributes_linearly() {
    let mut g = Graph::new();
    let ce = g.param(Tensor::scalar(0.4));
    let a = g.param(Tensor::scalar(2.0));
    let b = g.param(Tensor::scalar(5.0));
    let t = total_loss(&mut g, ce, &[Some(a), None, Some(b)], &[0.1, 0.3, 0.5]).unwrap();
    assert!((g.value(t).item() - (0.4 + 0.2 + 2.5)).abs() < 1e-6);
    g.backward(t).unwrap();
    assert_eq!(g.grad(ce).unwrap(), [1.0]);
    assert!((g.grad(a).unwrap()[0] - 0.1).abs() < 1e-7);
    assert!((g.grad(b).unwrap()[0] - 0.5).abs() < 1e-7);
    assert!(matches!(total_loss(&mut g, ce, &[Some(a)], &[0.1, 0.2]), Err(Error::Config(_))));
}

fn store() -> ParamStore {
    let mut s = ParamStore::new();
    s.insert("w", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap(), true);
    s.insert("frozen", Tensor::filled(vec![2], 3.0), false);
    s
}

#[test]
fn adam_zero_gradient_is_a_no_op() {
    let mut s = store();
    let mut adam = Adam::new();
    adam.step(&mut s, &HashMap::from([("w".to_string(), vec![0.0; 3])]), 0.01).unwrap();
    assert_eq!(adam.steps(), 1);
    assert_eq!(s.get("w").unwrap().tensor.data(), [1.0, -2.0, 0.5]);
}

#[test]
fn adam_first_step_moves_by_the_learning_rate() {
    let mut s = store();
    let mut adam = Adam::new();
    adam.step(&mut s, &HashMap::from([("w".to_string(), vec![0.3, -4.0, 1e-3])]), 0.01).unwrap();
    let w = s.get("w").unwrap().tensor.data();
    for (now, (before, sign)) in w.iter().zip([(1.0f32, 1.0f32), (-2.0, -1.0), (0.5, 1.0)]) {
        assert!((before - now - 0.01 * sign).abs() < 1e-6, "{now}");
    }
    assert_eq!(s.get("frozen").unwrap().tensor.data(), [3.0, 3.0]);
    let bad = HashMap::from([("w".to_string(), vec![1.0; 2])]);
    assert!(matches!(adam.step(&mut s, &bad, 0.01), Err(Error::Dimension(_))));
}

#[test]
fn adam_is_deterministic() {
    let grads = HashMap::from([("w".to_string(), vec![0.2, 0.1, -0.7])]);
    let (mut s1, mut s2) = (store(), store());
    let (mut a1, mut a2) = (Adam::new(), Adam::new());
    for _ in 0..5 {
        a1.step(&mut s1, &grads, 0.01).unwrap();
        a2.step(&mut s2, &grads, 0.01).unwrap();
    }
    assert_eq!(s1.get("w").unwrap().tensor.data(), s2.get("w").unwrap().tensor.data());
    assert_eq!(a1, a2);
}

#[test]
fn optimizer_steps_follow_batch_size() {
    let clouds = [scene(256, 1)];
    for (batch, steps) in [(1, 2), (2, 1), (3, 1)] {
        let mut model = small_model("A5", 0);
        let report = run(&mut model, &clouds, &quick(1, batch)).unwrap();
        assert_eq!(report.optimizer_steps, steps, "batch {batch}");
        assert_eq!(report.epochs.len(), 1);
        assert_eq!(report.epochs[0].epoch, 1);
    }
}

#[test]
fn zero_loss_weights_match_plain_cross_entropy() {
    let clouds = [scene(256, 2)];
    let cfg = quick(2, 1);
    let mut weighted = small_model("B6", 3);
    let mut plain = small_model("B3", 3);
    weighted.params_mut().load_values(plain.params()).unwrap();
    let mut silent = weighted.config().clone();
    silent.aug_loss_weights = vec![0.0, 0.0];
    let mut silent_model = Model::new(silent, 3).unwrap();
    silent_model.params_mut().load_values(plain.params()).unwrap();
    run(&mut silent_model, &clouds, &cfg).unwrap();
    run(&mut plain, &clouds, &cfg).unwrap();
    for (name, p) in plain.params().iter() {
        assert_eq!(p.tensor.data(), silent_model.params().get(name).unwrap().tensor.data(), "{name}");
    }
    // the active loss does change the trajectory
    run(&mut weighted, &clouds, &cfg).unwrap();
    let moved = weighted.params().iter().any(|(n, p)| p.tensor.data() != plain.params().get(n).unwrap().tensor.data());
    assert!(moved);
}

#[test]
fn training_is_deterministic() {
    let clouds = [scene(256, 4)];
    let mut a = small_model("A5", 5);
    let mut b = small_model("A5", 5);
    let ra = run(&mut a, &clouds, &quick(2, 2)).unwrap();
    let rb = run(&mut b, &clouds, &quick(2, 2)).unwrap();
    assert_eq!(ra, rb);
    for (name, p) in a.params().iter() {
        assert_eq!(p.tensor.data(), b.params().get(name).unwrap().tensor.data(), "{name}");
    }
}

#[test]
fn loss_falls_when_overfitting_one_crop() {
    let clouds = [scene(128, 6)];
    let mut model = small_model("A5", 7);
    let cfg = TrainConfig { crops_per_cloud: 1, ..quick(40, 1) };
    let report = run(&mut model, &clouds, &cfg).unwrap();
    let first = report.epochs[0].loss;
    let last = report.epochs.last().unwrap().loss;
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn nan_parameter_stops_training() {
    let clouds = [scene(256, 8)];
    let mut model = small_model("A5", 9);
    model.params_mut().get_mut("head.out.w").unwrap().tensor.data_mut()[0] = f32::NAN;
    assert!(matches!(run(&mut model, &clouds, &quick(1, 1)), Err(Error::NonFinite(_))));
}

#[test]
fn fully_ignored_crop_is_an_error() {
    let mut cloud = scene(64, 10);
    cloud.labels = Some(vec![2; 64]);
    let mut model = small_model("A5", 0);
    let cfg = TrainConfig { ignore_label: Some(2), crop_size: 64, crops_per_cloud: 1, ..quick(1, 1) };
    assert!(matches!(run(&mut model, &[cloud], &cfg), Err(Error::UndefinedLoss)));
}

#[test]
fn rejects_bad_configs() {
    for cfg in [
        TrainConfig { lr0: 0.0, ..TrainConfig::default() },
        TrainConfig { decay: 1.5, ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { decay_every: 0, ..TrainConfig::default() },
    ] {
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
    let mut model = small_model("A5", 0);
    assert!(matches!(train(&mut model, &[], &TrainConfig::default(), &mut |_| Ok(())), Err(Error::EmptyInput(_))));
}

#[test]
fn evaluation_covers_every_point() {
    let cloud = scene(200, 11);
    let model = small_model("A5", 12);
    let (cm, preds) = evaluate(&model, &cloud).unwrap();
    assert_eq!(preds.len(), 200);
    assert_eq!(cm.total(), 200);
    assert!(preds.iter().all(|&p| p < 4));
}

#[test]
fn epoch_log_line() {
    let log = EpochLog { epoch: 3, lr: 0.005, loss: 1.25, oa: 0.5 };
    assert_eq!(log.to_string(), "3, 0.005, 1.25, 0.5");
}

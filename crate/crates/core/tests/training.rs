mod common;

use alesal_core::eval::{Dmlp, DmlpConfig};
use alesal_core::model::{fit, fit_with_split, split_validation, AlesalModel, ModelConfig, TrainConfig, WindowInput};
use alesal_core::nn::AdamConfig;
use alesal_core::pipeline::{split_inputs, synthetic_examples};
use alesal_core::{DatasetConfig, Error, PreprocessParams};
use common::*;
use proptest::prelude::*;

fn toy_windows(per_class: usize, seed: u64) -> (Vec<WindowInput>, Vec<usize>) {
    let config = DatasetConfig { per_class: [per_class; 3], subcarriers: 30, ..DatasetConfig::default() };
    let ex = synthetic_examples(&config, &PreprocessParams::default(), seed).unwrap();
    let (xs, ys) = split_inputs(&ex).unwrap();
    (xs.into_iter().cloned().collect(), ys)
}

fn tiny_inputs(n: usize, seed: u64) -> (Vec<WindowInput>, Vec<usize>) {
    let config = tiny_config();
    let mut r = rng(seed);
    ((0..n).map(|_| random_input(&config, &mut r)).collect(), (0..n).map(|i| i % 3).collect())
}

#[test]
fn attention_network_overfits_ten_windows() {
    let (xs, ys) = toy_windows(4, 1);
    let (xs, ys) = (xs[..10].to_vec(), ys[..10].to_vec());
    let mut model = AlesalModel::new(ModelConfig::default(), 2).unwrap();
    let cfg = TrainConfig { max_epochs: 200, val_fraction: 0.0, batch_size: 10, seed: 3, ..TrainConfig::default() };
    let h = fit(&mut model, &xs, &ys, &cfg).unwrap();
    let best = h.epochs.iter().map(|e| e.train_loss).fold(f64::INFINITY, f64::min);
    assert!(best < 0.05, "best train loss {best}");
}

#[test]
fn baseline_overfits_ten_windows() {
    let (xs, ys) = toy_windows(4, 4);
    let (xs, ys) = (xs[..10].to_vec(), ys[..10].to_vec());
    let mut model = Dmlp::new(DmlpConfig::default(), 5).unwrap();
    let cfg = TrainConfig { max_epochs: 200, val_fraction: 0.0, batch_size: 10, seed: 6, ..TrainConfig::default() };
    let h = fit(&mut model, &xs, &ys, &cfg).unwrap();
    let best = h.epochs.iter().map(|e| e.train_loss).fold(f64::INFINITY, f64::min);
    assert!(best < 0.05, "best train loss {best}");
    let refs: Vec<&WindowInput> = xs.iter().collect();
    use alesal_core::model::Trainable;
    for p in model.predict_proba(&refs).unwrap() {
        assert_eq!(p.len(), 3);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn training_is_deterministic() {
    let (xs, ys) = tiny_inputs(30, 7);
    let cfg = TrainConfig { max_epochs: 4, batch_size: 8, seed: 9, ..TrainConfig::default() };
    let run = || {
        let mut m = AlesalModel::new(tiny_config(), 8).unwrap();
        let h = fit(&mut m, &xs, &ys, &cfg).unwrap();
        (m.to_checkpoint().unwrap().to_bytes().unwrap(), h)
    };
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(a, b);
    assert_eq!(ha, hb);
    let mut other = AlesalModel::new(tiny_config(), 8).unwrap();
    fit(&mut other, &xs, &ys, &TrainConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(other.to_checkpoint().unwrap().to_bytes().unwrap(), a);
}

#[test]
fn validation_labels_never_reach_the_gradient() {
    let (xs, ys) = tiny_inputs(30, 11);
    let (train, val) = split_validation(&ys, 0.2, 12);
    let mut permuted = ys.clone();
    let vals: Vec<usize> = val.iter().map(|&i| ys[i]).collect();
    for (k, &i) in val.iter().enumerate() {
        permuted[i] = vals[(k + 1) % vals.len()];
    }
    assert_ne!(permuted, ys);
    let cfg = TrainConfig { max_epochs: 5, batch_size: 8, patience: 100, seed: 13, ..TrainConfig::default() };
    let run = |labels: &[usize]| {
        let mut m = AlesalModel::new(tiny_config(), 14).unwrap();
        fit_with_split(&mut m, &xs, labels, train.clone(), val.clone(), &cfg).unwrap()
    };
    let a = run(&ys);
    let b = run(&permuted);
    let digests = |h: &alesal_core::model::TrainHistory| h.epochs.iter().map(|e| e.param_digest.clone()).collect::<Vec<_>>();
    assert_eq!(digests(&a), digests(&b));
    assert_eq!(a.epochs.len(), 5);
}

#[test]
fn early_stopping_restores_best_parameters() {
    let (xs, ys) = tiny_inputs(30, 15);
    let cfg = TrainConfig { max_epochs: 40, batch_size: 8, patience: 2, seed: 16, ..TrainConfig::default() };
    let mut m = AlesalModel::new(tiny_config(), 17).unwrap();
    let h = fit(&mut m, &xs, &ys, &cfg).unwrap();
    let best = &h.epochs[h.best_epoch - 1];
    assert_eq!(alesal_core::nn::params::digest(&m.params), best.param_digest);
    let min = h.epochs.iter().filter_map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(best.val_loss, Some(min));
    if h.stopped_early {
        assert_eq!(h.epochs.len(), h.best_epoch + cfg.patience);
    }
}

#[test]
fn exploding_learning_rate_reports_divergence() {
    let (xs, ys) = tiny_inputs(12, 18);
    let cfg = TrainConfig {
        max_epochs: 50,
        batch_size: 4,
        adam: AdamConfig { lr: 1e200, ..AdamConfig::default() },
        seed: 19,
        ..TrainConfig::default()
    };
    let mut m = AlesalModel::new(tiny_config(), 20).unwrap();
    match fit(&mut m, &xs, &ys, &cfg) {
        Err(Error::Divergence { epoch }) => assert!(epoch >= 1),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn invalid_training_inputs_rejected() {
    let (xs, ys) = tiny_inputs(6, 21);
    let mut m = AlesalModel::new(tiny_config(), 22).unwrap();
    assert!(fit(&mut m, &xs, &ys[..5], &TrainConfig::default()).is_err());
    assert!(fit(&mut m, &xs, &[0, 1, 2, 3, 0, 1], &TrainConfig::default()).is_err());
    assert!(fit(&mut m, &xs, &ys, &TrainConfig { val_fraction: 1.0, ..TrainConfig::default() }).is_err());
    assert!(fit(&mut m, &xs, &ys, &TrainConfig { batch_size: 0, ..TrainConfig::default() }).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn validation_split_is_stratified_partition(labels in prop::collection::vec(0usize..3, 1..200), frac in 0.0f64..0.9, seed in 0u64..100) {
        let (train, val) = split_validation(&labels, frac, seed);
        let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for c in 0..3 {
            let n = labels.iter().filter(|&&y| y == c).count();
            let v = val.iter().filter(|&&i| labels[i] == c).count();
            let want = ((frac * n as f64).round() as usize).min(n.saturating_sub(1));
            prop_assert_eq!(v, want);
        }
        prop_assert_eq!(split_validation(&labels, frac, seed), (train, val));
    }
}

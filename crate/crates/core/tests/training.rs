mod common;

use common::single_fact;
use qdren::data::Dataset;
use qdren::model::{forward, init_params, ModelParams, Slot};
use qdren::rng;
use qdren::training::{
    compare_configs, compare_modes, evaluate, prepare, random_search, train, train_from, SearchSpace, StopReason,
};
use qdren::{Error, Mode, ModelConfig, Tensor};

fn setup(n: usize) -> (ModelConfig, Dataset) {
    let data = single_fact(n, 100, 100, 3);
    let mut config = ModelConfig {
        dim: 16,
        blocks: 5,
        max_epochs: 4,
        dropout: 0.0,
        lr: 0.01,
        ..ModelConfig::default()
    };
    let data = prepare(&data, &mut config).unwrap();
    (config, data)
}

#[test]
fn zero_patience_runs_one_epoch() {
    let (config, data) = setup(100);
    let (_, report) = train(&config, &data, 0).unwrap();
    assert_eq!(report.epochs.len(), 1);
    assert_eq!(report.best_epoch, 1);
    assert_eq!(report.stop, StopReason::Patience);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let (mut config, data) = setup(100);
    config.lr = 0.0;
    config.dropout = 0.5;
    let init = init_params(&config, &mut rng::stream(config.seed, rng::streams::INIT)).unwrap();
    let (params, report) = train(&config, &data, 10).unwrap();
    assert_eq!(params, init);
    assert_eq!(report.epochs.len(), config.max_epochs);
    assert_eq!(report.stop, StopReason::MaxEpochs);
    let first = report.epochs[0].val_acc;
    assert!(report.epochs.iter().all(|e| e.val_acc == first));
}

#[test]
fn early_stopping_keeps_the_best_parameters() {
    let (mut config, data) = setup(200);
    config.max_epochs = 8;
    let (params, report) = train(&config, &data, 3).unwrap();
    let best = report.epochs.iter().map(|e| e.val_acc).fold(0.0, f64::max);
    assert_eq!(report.best_val_acc, best);
    assert_eq!(report.epochs[report.best_epoch - 1].val_acc, best);
    assert!(report.best_epoch <= report.epochs.len());
    assert_eq!(evaluate(&params, &config, &data.valid).unwrap().accuracy, best);
    for e in &report.epochs {
        assert!((0.0..=1.0).contains(&e.val_acc));
    }
}

#[test]
fn training_is_reproducible() {
    let (mut config, data) = setup(100);
    config.dropout = 0.5;
    let (p1, r1) = train(&config, &data, 10).unwrap();
    let (p2, r2) = train(&config, &data, 10).unwrap();
    assert_eq!(p1, p2);
    let strip = |r: &qdren::training::TrainReport| {
        r.epochs.iter().map(|e| (e.train_loss, e.val_loss, e.val_acc)).collect::<Vec<_>>()
    };
    assert_eq!(strip(&r1), strip(&r2));
    assert_eq!(r1.to_csv(), r2.to_csv());
    assert!(r1.to_csv().starts_with("epoch,train_loss,val_loss,val_acc\n"));
}

#[test]
fn non_finite_parameters_abort_with_diagnostics() {
    let (config, data) = setup(100);
    let mut params = init_params(&config, &mut rng::stream(0, rng::streams::INIT)).unwrap();
    params.get_mut(Slot::H).data_mut()[0] = f32::NAN;
    match train_from(&config, &data, 5, params) {
        Err(Error::NonFiniteLoss { epoch, batch, .. }) => assert_eq!((epoch, batch), (1, 0)),
        other => panic!("expected a non-finite loss error, got {other:?}"),
    }
}

/// Zero embeddings make every story look alike, so the model predicts one
/// fixed class; `R` is set so that class is a location.
#[test]
fn constant_predictor_scores_chance() {
    let data = single_fact(10, 10, 3000, 4);
    let mut config = ModelConfig {
        dim: 8,
        blocks: 3,
        ..ModelConfig::default()
    };
    let data = prepare(&data, &mut config).unwrap();
    let mut params: ModelParams = init_params(&config, &mut rng::stream(1, rng::streams::INIT)).unwrap();
    *params.get_mut(Slot::Embedding) = Tensor::zeros(&[config.vocab_size, config.dim]);
    *params.get_mut(Slot::R) = Tensor::zeros(&[config.vocab_size, config.dim]);
    let place = data.vocab.id("kitchen");
    let probe = forward(&params, &data.test[0], &config).unwrap();
    assert!(probe.logits.data().iter().all(|&x| x == 0.0));
    // Read the output activation back through a unit R row per coordinate.
    let mut r = Tensor::zeros(&[config.vocab_size, config.dim]);
    for k in 0..config.dim {
        r.row_mut(2 + k)[k] = 1.0;
    }
    *params.get_mut(Slot::R) = r;
    let z: Vec<f32> = forward(&params, &data.test[0], &config).unwrap().logits.data()[2..2 + config.dim].to_vec();
    let mut r = Tensor::zeros(&[config.vocab_size, config.dim]);
    r.row_mut(place).copy_from_slice(&z);
    *params.get_mut(Slot::R) = r;

    let m = evaluate(&params, &config, &data.test).unwrap();
    let share = data.test.iter().filter(|s| s.answer == place).count() as f64 / data.test.len() as f64;
    assert_eq!(m.accuracy, share);
    assert!((m.accuracy - 1.0 / 6.0).abs() <= 0.03, "accuracy {}", m.accuracy);
    assert_eq!(m.accuracy + m.error, 1.0);
}

#[test]
fn random_search_is_ranked_and_deterministic() {
    let (mut config, data) = setup(60);
    config.max_epochs = 2;
    let space = SearchSpace {
        lr: vec![0.01, 0.001],
        blocks: vec![3, 4],
        l2: vec![0.0],
        dropout: vec![0.0, 0.3],
        window: vec![3],
        optimizer: vec![qdren::optim::OptimizerKind::Adam, qdren::optim::OptimizerKind::Rmsprop],
        batch_size: vec![16],
    };
    let a = random_search(&space, &config, &data, 4, 30, 1, 9).unwrap();
    let b = random_search(&space, &config, &data, 4, 30, 1, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 4);
    for w in a.windows(2) {
        assert!(w[0].val_acc > w[1].val_acc || (w[0].val_acc == w[1].val_acc && w[0].index < w[1].index));
    }
    let mut idx: Vec<usize> = a.iter().map(|t| t.index).collect();
    idx.sort_unstable();
    assert_eq!(idx, vec![0, 1, 2, 3]);
    assert_eq!(random_search(&space, &config, &data, 1, 30, 1, 9).unwrap().len(), 1);
    assert!(random_search(&space, &config, &data, 0, 30, 1, 9).is_err());
    let empty = SearchSpace { lr: vec![], ..space };
    assert!(random_search(&empty, &config, &data, 1, 30, 1, 9).is_err());
}

#[test]
fn self_comparison_has_zero_delta() {
    let (mut config, data) = setup(60);
    config.max_epochs = 2;
    let r = compare_configs(&data, &config, &config, &[1, 2, 3], 1, ("a", "b")).unwrap();
    assert_eq!(r.rows.len(), 3);
    assert!(r.rows.iter().all(|row| row.delta == 0.0));
    assert_eq!(r.mean_delta, 0.0);
    assert!(r.to_csv().starts_with("seed,a,b,delta\n"));
    assert!(compare_modes(&data, &config, &[1, 2], 1).is_err());
    let m = compare_modes(&data, &ModelConfig { mode: Mode::Ren, ..config }, &[1, 2, 3], 1).unwrap();
    assert_eq!((m.label_a.as_str(), m.label_b.as_str()), ("ren", "qdren"));
}

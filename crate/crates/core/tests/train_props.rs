use std::fs;
use std::path::Path;

use q2p_core::sampler::{generate_dataset, Dataset, SampleConfig};
use q2p_core::synthetic::{generate, SyntheticConfig};
use q2p_core::train::{init_model, load_checkpoint, save_checkpoint, train_loop, OptimizerState};
use q2p_core::{ModelConfig, TrainConfig};
use serde_json::json;

fn dataset() -> (Dataset, usize, usize) {
    let kg = generate(&SyntheticConfig {
        fanout: 3,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let splits = kg.splits().unwrap();
    let cfg = SampleConfig {
        train: 30,
        valid: 5,
        test: 5,
        ..SampleConfig::default()
    };
    let ds = generate_dataset(&splits, &cfg).unwrap();
    (ds, splits.vocab.entities.len(), splits.vocab.relations.len())
}

fn config(steps: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.01,
        batch_size: 8,
        steps,
        seed: 5,
        checkpoint_every: 10,
        ..TrainConfig::default()
    }
}

fn model() -> ModelConfig {
    let mut m = ModelConfig::new(8, 2);
    m.dropout = 0.1;
    m.label_smoothing = 0.1;
    m
}

fn losses(dir: &Path) -> Vec<(String, String)> {
    fs::read_to_string(dir.join("loss.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_owned(), f[1].to_owned())
        })
        .collect()
}

#[test]
fn identical_seeds_give_identical_runs() {
    let (ds, ne, nr) = dataset();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        let mut params = init_model(model(), ne, nr, 5).unwrap();
        let mut opt = OptimizerState::new(&params);
        train_loop(&mut params, &mut opt, &ds.train, None, &config(25), dir, &json!({})).unwrap();
    }
    assert_eq!(losses(a.path()), losses(b.path()));
    for f in ["params.bin", "optimizer.bin", "manifest.json"] {
        assert_eq!(
            fs::read(a.path().join("final").join(f)).unwrap(),
            fs::read(b.path().join("final").join(f)).unwrap()
        );
    }
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let (ds, ne, nr) = dataset();
    let whole = tempfile::tempdir().unwrap();
    let mut params = init_model(model(), ne, nr, 5).unwrap();
    let mut opt = OptimizerState::new(&params);
    train_loop(
        &mut params,
        &mut opt,
        &ds.train,
        None,
        &config(30),
        whole.path(),
        &json!({}),
    )
    .unwrap();

    let split = tempfile::tempdir().unwrap();
    let mut params = init_model(model(), ne, nr, 5).unwrap();
    let mut opt = OptimizerState::new(&params);
    train_loop(
        &mut params,
        &mut opt,
        &ds.train,
        None,
        &config(30),
        split.path(),
        &json!({}),
    )
    .unwrap();
    // discard everything after step 10 and continue from that checkpoint
    let (mut params, mut opt, _) = load_checkpoint(&split.path().join("ckpt-10"), None).unwrap();
    assert_eq!(opt.step, 10);
    let resumed = train_loop(
        &mut params,
        &mut opt,
        &ds.train,
        None,
        &config(30),
        split.path(),
        &json!({}),
    )
    .unwrap();
    assert_eq!(resumed.losses.len(), 30);
    assert_eq!(losses(whole.path()), losses(split.path()));
    assert_eq!(
        fs::read(whole.path().join("final/params.bin")).unwrap(),
        fs::read(split.path().join("final/params.bin")).unwrap()
    );
}

#[test]
fn zero_steps_write_only_the_initial_checkpoint() {
    let (ds, ne, nr) = dataset();
    let dir = tempfile::tempdir().unwrap();
    let mut params = init_model(model(), ne, nr, 5).unwrap();
    let mut opt = OptimizerState::new(&params);
    let out = train_loop(
        &mut params,
        &mut opt,
        &ds.train,
        None,
        &config(0),
        dir.path(),
        &json!({}),
    )
    .unwrap();
    assert!(out.losses.is_empty());
    assert!(dir.path().join("ckpt-0").is_dir());
    assert!(!dir.path().join("ckpt-10").exists());
}

#[test]
fn checkpoints_round_trip_bit_exactly() {
    let (_, ne, nr) = dataset();
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..5 {
        let params = init_model(model(), ne, nr, seed).unwrap();
        let mut opt = OptimizerState::new(&params);
        opt.step = seed;
        opt.m[0].data_mut()[0] = 0.25;
        let path = dir.path().join(format!("c{seed}"));
        save_checkpoint(&path, &params, &opt, &json!({"seed": seed})).unwrap();
        let (back, back_opt, manifest) = load_checkpoint(&path, Some(&model())).unwrap();
        assert_eq!(manifest.optimizer_step, seed);
        for (a, b) in params.store.iter().zip(back.store.iter()) {
            assert_eq!(a.name, b.name);
            let bits = |t: &q2p_core::Tensor<f32>| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
        assert_eq!(back_opt.m, opt.m);
        assert_eq!(back_opt.v, opt.v);
    }
}

#[test]
fn validation_tags_a_best_checkpoint() {
    let (ds, ne, nr) = dataset();
    let dir = tempfile::tempdir().unwrap();
    let mut params = init_model(model(), ne, nr, 5).unwrap();
    let before = params.store.clone();
    let mut opt = OptimizerState::new(&params);
    let cfg = TrainConfig {
        eval_every: 10,
        ..config(20)
    };
    let out = train_loop(
        &mut params,
        &mut opt,
        &ds.train,
        Some(&ds.valid),
        &cfg,
        dir.path(),
        &json!({}),
    )
    .unwrap();
    assert!(out.best.is_some());
    assert!(dir.path().join("best/params.bin").is_file());
    assert!(dir.path().join("best.json").is_file());
    assert_ne!(
        before.iter().next().unwrap().value,
        params.store.iter().next().unwrap().value
    );
}

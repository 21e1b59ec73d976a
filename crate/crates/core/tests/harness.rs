use rand::Rng;
use sparsekit::checkpoint::load_checkpoint;
use sparsekit::harness::{
    accuracy, generate_dataset, run, train, write_csv, CompareMatrix, DatasetSpec, ExperimentConfig, MlpModel,
    OptimizerKind, OptimizerSpec, OutputSpec, RunOptions,
};
use sparsekit::mask::sparsity_summary;
use sparsekit::prelude::*;

fn config(updater: UpdaterConfig) -> ExperimentConfig {
    ExperimentConfig {
        layer_dims: vec![2, 16, 3],
        dataset: DatasetSpec::blobs(300, 3, 1.0, 4),
        optimizer: OptimizerSpec {
            kind: OptimizerKind::Adam,
            learning_rate: 0.01,
        },
        updater,
        total_steps: 200,
        batch_size: 16,
        eval_every: 50,
        seed: 1,
        output: OutputSpec::default(),
    }
}

fn pruning(kind: AlgorithmKind, s: f64) -> UpdaterConfig {
    UpdaterConfig::new(
        kind,
        DistributionSpec::uniform(s),
        ScheduleConfig::polynomial(0, 100, 20, 0.0, s),
    )
}

#[test]
fn zero_noise_blobs_are_learned_exactly() {
    let data = generate_dataset(&DatasetSpec::blobs(90, 3, 0.0, 0)).unwrap();
    let model = MlpModel::new(vec![2, 8, 3]).unwrap();
    let tx = sgd(0.5).unwrap();
    let mut params = model.init(RngKey::new(0));
    let mut state = tx.init(&params).unwrap();
    for _ in 0..300 {
        let (_, g) = model.loss_and_grads(&params, data.view(), &data.labels).unwrap();
        let (u, next) = tx.update(&g, &state, &params).unwrap();
        state = next;
        params = apply_updates(&params, &u).unwrap();
    }
    let logits = model.forward(&params, data.view()).unwrap();
    assert_eq!(accuracy(&logits, &data.labels), 1.0);
}

#[test]
fn identical_config_gives_identical_metric_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for i in 0..2 {
        let mut cfg = config(pruning(AlgorithmKind::RandomPrune, 0.6));
        cfg.output.metrics = Some(dir.path().join(format!("m{i}.jsonl")));
        train(&cfg).unwrap();
        bytes.push(std::fs::read(cfg.output.metrics.unwrap()).unwrap());
    }
    assert!(!bytes[0].is_empty());
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn dense_run_matches_unwrapped_training() {
    // The harness with a no-op updater against a hand-rolled loop over the
    // same batches.
    let cfg = config(UpdaterConfig::dense());
    let out = train(&cfg).unwrap();

    let data = generate_dataset(&cfg.dataset).unwrap();
    let (train_set, _) = data.split(cfg.dataset.eval_fraction);
    let model = MlpModel::new(cfg.layer_dims.clone()).unwrap();
    let tx = adam(0.01).unwrap();
    let key = RngKey::new(cfg.seed);
    let mut params = model.init(key.derive("model"));
    let mut state = tx.init(&params).unwrap();
    for step in 0..cfg.total_steps {
        let mut rng = key.derive("batch").fold_in(step).generator();
        let idx: Vec<usize> = (0..cfg.batch_size)
            .map(|_| rng.random_range(0..train_set.len()))
            .collect();
        let (x, y) = train_set.select(&idx);
        let (_, g) = model.loss_and_grads(&params, x.view(), &y).unwrap();
        let (u, next) = tx.update(&g, &state, &params).unwrap();
        state = next;
        params = apply_updates(&params, &u).unwrap();
    }
    assert_eq!(out.params, params);
}

#[test]
fn metrics_sparsity_matches_checkpoint_summary() {
    let dir = tempfile::tempdir().unwrap();
    for kind in [
        AlgorithmKind::MagnitudePrune,
        AlgorithmKind::SaliencyPrune,
        AlgorithmKind::GlobalMagnitudePrune,
        AlgorithmKind::SteMagnitude,
    ] {
        let mut cfg = config(pruning(kind, 0.5));
        let ckpt = dir.path().join(kind.name());
        cfg.output.checkpoint = Some(ckpt.clone());
        let out = train(&cfg).unwrap();
        let last = out.records.last().unwrap();
        let summary = sparsity_summary(&load_checkpoint(&ckpt).unwrap().state.masks);
        assert_eq!(last.total_sparsity, summary.total.sparsity, "{kind}");
        for (path, c) in &summary.layers {
            assert_eq!(last.per_layer_sparsity[path], c.sparsity, "{kind} {path}");
        }
        assert!((summary.masked.sparsity - 0.5).abs() <= 1.0 / 80.0, "{kind}");
    }
}

#[test]
fn sparse_training_algorithms_keep_their_sparsity() {
    for kind in [
        AlgorithmKind::StaticSparse,
        AlgorithmKind::SetSparse,
        AlgorithmKind::RiglSparse,
    ] {
        let up = UpdaterConfig::new(
            kind,
            DistributionSpec::erk(0.7),
            ScheduleConfig::periodic(0, 150, 10, 0.7),
        );
        let out = train(&config(up)).unwrap();
        let first = &out.records[0];
        for r in &out.records {
            assert_eq!(r.total_sparsity, first.total_sparsity, "{kind}");
        }
        for (path, t) in out.params.iter() {
            if let Some(m) = out.state.masks.get(path) {
                assert!(t.count_nonzero() <= m.count_ones(), "{kind} {path}");
            }
        }
        assert!(out.final_accuracy().unwrap() > 0.5, "{kind}");
    }
}

#[test]
fn resume_rejects_a_different_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(pruning(AlgorithmKind::MagnitudePrune, 0.5));
    cfg.output.checkpoint = Some(dir.path().join("c"));
    run(
        &cfg,
        &RunOptions {
            stop_at: Some(60),
            resume_from: None,
        },
    )
    .unwrap();
    let mut other = cfg.clone();
    other.seed = 99;
    let err = run(
        &other,
        &RunOptions {
            stop_at: None,
            resume_from: cfg.output.checkpoint.clone(),
        },
    )
    .unwrap_err();
    assert_eq!(err.kind(), "config");
}

#[test]
fn compare_grid_shape() {
    let matrix = CompareMatrix {
        base: config(pruning(AlgorithmKind::MagnitudePrune, 0.9)),
        algorithms: ["dense", "mag", "rand"].map(String::from).to_vec(),
        sparsities: vec![0.9],
        seeds: (0..5).collect(),
        pruning_schedule: None,
        sparse_schedule: None,
    };
    let cells = matrix.run().unwrap();
    assert_eq!(cells.len(), 3);
    assert!(cells.iter().all(|c| c.accuracies.len() == 5));
    let mut out = Vec::new();
    write_csv(&matrix, &cells, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "algorithm,0.9_mean,0.9_std");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("dense,"));
}

#[test]
fn config_roundtrips_through_json() {
    let cfg = config(pruning(AlgorithmKind::SteMagnitude, 0.4));
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
}

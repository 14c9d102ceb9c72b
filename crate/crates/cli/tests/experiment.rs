use pad_cli::ablate::default_config;
use pad_cli::checkpoint::Checkpoint;
use pad_cli::config::{DataSource, ExperimentConfig, ToyName};
use pad_cli::experiment::{evaluate_predictor, load_dataset, make_splits, persist, run_experiment, RunResult};
use pad_cli::tune::{Protocol, TuneConfig};
use pad_core::train::Method;

fn config(method: Method, count: usize, epochs: usize) -> ExperimentConfig {
    let mut cfg = default_config();
    cfg.data = DataSource::Toy {
        name: ToyName::TwoManifold,
        n_per: 60,
        seed: 4,
    };
    cfg.method = method;
    if !method.is_pad() {
        cfg.pad = None;
    }
    cfg.training.epochs = epochs;
    cfg.training.ensemble_size = 2;
    cfg.split.count = count;
    cfg.split.k = 4;
    cfg
}

fn splits(cfg: &ExperimentConfig) -> (pad_core::datashift::Dataset, Vec<pad_core::datashift::SplitSpec>) {
    let data = load_dataset(&cfg.data).unwrap();
    let s = make_splits(
        &data,
        cfg.split.k,
        cfg.split.count,
        cfg.split.min_test_frac,
        cfg.split.cluster_seed,
    )
    .unwrap();
    (data, s)
}

#[test]
fn single_split_aggregate_is_the_run() {
    let cfg = config(Method::PadMcDropout, 1, 3);
    let (data, s) = splits(&cfg);
    let out = run_experiment(&cfg, &data, &s).unwrap();
    assert_eq!(out.aggregate.succeeded, 1);
    let nll = &out.aggregate.metrics["ood.nll"];
    assert_eq!(nll.mean, out.results[0].ood.nll);
    assert_eq!(nll.std, 0.0);
    assert!(out.aggregate.metrics.values().all(|m| m.std == 0.0 && m.n == 1));
}

#[test]
fn ten_splits_give_ten_results() {
    let cfg = config(Method::BaselineMcDropout, 10, 2);
    let (data, s) = splits(&cfg);
    assert_eq!(s.len(), 10);
    let out = run_experiment(&cfg, &data, &s).unwrap();
    assert_eq!(out.results.len(), 10);
    assert_eq!(out.aggregate.succeeded, 10);
    assert_eq!(out.aggregate.metrics["ood.nll"].n, 10);
    let idx: Vec<usize> = out.results.iter().map(|r| r.split_index).collect();
    assert_eq!(idx, (0..10).collect::<Vec<_>>());
}

#[test]
fn same_seed_same_digest() {
    for method in [Method::PadMcDropout, Method::PadEnsemble] {
        let cfg = config(method, 2, 3);
        let (data, s) = splits(&cfg);
        let a = run_experiment(&cfg, &data, &s).unwrap();
        let b = run_experiment(&cfg, &data, &s).unwrap();
        let digests = |o: &[RunResult]| o.iter().map(|r| r.digest.clone()).collect::<Vec<_>>();
        assert_eq!(digests(&a.results), digests(&b.results));
        let mut other = cfg.clone();
        other.training.seed += 1;
        let c = run_experiment(&other, &data, &s).unwrap();
        assert_ne!(digests(&a.results), digests(&c.results));
    }
}

#[test]
fn failed_splits_are_recorded() {
    let cfg = config(Method::BaselineMcDropout, 2, 2);
    let (data, mut s) = splits(&cfg);
    s[1].train_idx.push(data.len() + 5);
    let out = run_experiment(&cfg, &data, &s).unwrap();
    assert_eq!(out.aggregate.succeeded, 1);
    assert_eq!(out.aggregate.failed, 1);
    assert_eq!(out.failures[0].split_index, 1);
    let dir = tempfile::tempdir().unwrap();
    persist(&out, dir.path()).unwrap();
    assert!(dir.path().join("failures.json").exists());
    assert!(!dir.path().join("run_1.json").exists());
}

#[test]
fn checkpoints_reproduce_persisted_metrics() {
    for method in [Method::PadMcDropout, Method::BaselineEnsemble] {
        let cfg = config(method, 2, 3);
        let (data, s) = splits(&cfg);
        let out = run_experiment(&cfg, &data, &s).unwrap();
        let dir = tempfile::tempdir().unwrap();
        persist(&out, dir.path()).unwrap();
        for (i, split) in s.iter().enumerate() {
            let text = std::fs::read_to_string(dir.path().join(format!("run_{i}.json"))).unwrap();
            let stored: RunResult = serde_json::from_str(&text).unwrap();
            assert_eq!(stored, out.results[i]);
            let ckpt = Checkpoint::load(&dir.path().join(format!("checkpoint_{i}.json"))).unwrap();
            let test = data.subset(&split.test_idx).unwrap();
            let x = ckpt.x_scaler.transform(&test.x).unwrap();
            let report = evaluate_predictor(
                &ckpt.predictor().unwrap(),
                &x,
                &test.y,
                ckpt.y_scaler.as_ref(),
                &ckpt.eval,
                ckpt.seed,
            )
            .unwrap();
            assert_eq!(report, stored.ood);
        }
        for name in ["metrics.csv", "aggregate.json"] {
            assert!(dir.path().join(name).exists());
        }
    }
}

#[test]
fn configs_without_tune_record_no_tuning() {
    let cfg = config(Method::BaselineMcDropout, 1, 2);
    assert!(!serde_json::to_string(&cfg).unwrap().contains("tune"));
    let (data, s) = splits(&cfg);
    let out = run_experiment(&cfg, &data, &s).unwrap();
    assert!(out.results[0].tuning.is_none());
}

#[test]
fn tuning_picks_the_lowest_score_and_trains_with_it() {
    for (method, protocol) in [
        (Method::PadMcDropout, Protocol::ClusterFolds),
        (Method::BaselineEnsemble, Protocol::RandomHoldout),
    ] {
        let mut cfg = config(method, 1, 3);
        let mut grid = TuneConfig {
            lr_f: vec![1e-4, 5e-3],
            validation_frac: 0.2,
            ..Default::default()
        };
        if method.is_pad() {
            grid.length_scale = vec![0.1, 0.3];
        }
        cfg.tune = Some(grid.clone());
        cfg.validate().unwrap();
        let (data, s) = splits(&cfg);
        let out = run_experiment(&cfg, &data, &s).unwrap();
        let tuning = out.results[0].tuning.clone().unwrap();
        assert_eq!(tuning.protocol, protocol);
        assert_eq!(tuning.scores.len(), grid.candidates().len());
        let best = tuning.scores.iter().map(|s| s.score).fold(f64::INFINITY, f64::min);
        let chosen = tuning.scores.iter().find(|s| s.score == best).unwrap().candidate;
        assert_eq!(tuning.chosen, chosen);

        let dir = tempfile::tempdir().unwrap();
        persist(&out, dir.path()).unwrap();
        let ckpt = Checkpoint::load(&dir.path().join("checkpoint_0.json")).unwrap();
        assert_eq!(ckpt.spec.training.lr_f, chosen.lr_f);
        if let Some(l) = chosen.length_scale {
            assert_eq!(ckpt.spec.pad.unwrap().hyper.length_scale, l);
        }
        let again = run_experiment(&cfg, &data, &s).unwrap();
        assert_eq!(again.results[0].digest, out.results[0].digest);
    }
}

#[test]
fn pad_only_grids_are_rejected_for_baselines() {
    let mut cfg = config(Method::BaselineMcDropout, 1, 2);
    cfg.tune = Some(TuneConfig {
        c_boundary: vec![0.1],
        validation_frac: 0.2,
        ..Default::default()
    });
    assert!(cfg.validate().is_err());
}

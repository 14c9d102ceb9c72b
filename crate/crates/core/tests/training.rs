use pad_core::datashift::{gen_gap_sine, Dataset};
use pad_core::nets::{Head, MlpConfig};
use pad_core::objectives::TermSwitches;
use pad_core::rng::{stream, Stream};
use pad_core::train::{train, train_member, Method, PadConfig, TrainConfig, TrainSpec};
use pad_core::Tensor;
use rand::Rng;

fn spec(method: Method, head: Head, input_dim: usize, epochs: usize, seed: u64) -> TrainSpec {
    TrainSpec {
        model: MlpConfig::standard(input_dim, head),
        method,
        training: TrainConfig {
            epochs,
            lr_f: Some(5e-3),
            seed,
            ..TrainConfig::default()
        },
        pad: method.is_pad().then(PadConfig::default),
    }
}

fn separable(n: usize, seed: u64) -> Dataset {
    let mut rng = stream(seed, Stream::Data);
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = x.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
    Dataset::new(Tensor::column(&x), y, None).unwrap()
}

fn degenerate(mut s: TrainSpec) -> TrainSpec {
    let pad = s.pad.as_mut().unwrap();
    pad.hyper.terms = TermSwitches::NONE;
    pad.hyper.fixed_lambda = Some(0.0);
    s
}

#[test]
fn degenerate_pad_replays_baseline_trajectory() {
    let data = gen_gap_sine(40, 40, 5).unwrap();
    for (pad, base) in [
        (Method::PadMcDropout, Method::BaselineMcDropout),
        (Method::PadEnsemble, Method::BaselineEnsemble),
    ] {
        let mut b = spec(base, Head::Gaussian, 1, 5, 11);
        b.training.ensemble_size = 2;
        let mut p = degenerate(spec(pad, Head::Gaussian, 1, 5, 11));
        p.training.ensemble_size = 2;
        let b = train(&b, &data).unwrap();
        let p = train(&p, &data).unwrap();
        for (mb, mp) in b.members.iter().zip(&p.members) {
            assert_eq!(mb.model, mp.model);
            let nb: Vec<u64> = mb.log.iter().map(|e| e.predictor.nll.to_bits()).collect();
            let np: Vec<u64> = mp.log.iter().map(|e| e.predictor.nll.to_bits()).collect();
            assert_eq!(nb, np);
        }
    }
    let cls = separable(60, 2);
    let head = Head::Categorical { classes: 2 };
    let b = train(&spec(Method::BaselineMcDropout, head, 1, 4, 3), &cls).unwrap();
    let p = train(&degenerate(spec(Method::PadMcDropout, head, 1, 4, 3)), &cls).unwrap();
    assert_eq!(b.members[0].model, p.members[0].model);
}

#[test]
fn identical_seeds_train_identical_predictors() {
    let data = gen_gap_sine(30, 30, 0).unwrap();
    let s = spec(Method::PadMcDropout, Head::Gaussian, 1, 4, 21);
    let a = train(&s, &data).unwrap();
    let b = train(&s, &data).unwrap();
    assert_eq!(a.members[0].model, b.members[0].model);
    assert_eq!(a.members[0].generator, b.members[0].generator);
    assert_eq!(a.members[0].log, b.members[0].log);
    let c = train(&spec(Method::PadMcDropout, Head::Gaussian, 1, 4, 22), &data).unwrap();
    assert_ne!(a.members[0].model, c.members[0].model);
}

#[test]
fn separable_toy_nll_decreases() {
    let data = separable(200, 8);
    let p = train(
        &spec(Method::BaselineMcDropout, Head::Categorical { classes: 2 }, 1, 50, 4),
        &data,
    )
    .unwrap();
    let log = &p.members[0].log;
    assert_eq!(log.len(), 50);
    let (first, last) = (log[0].predictor.nll, log[49].predictor.nll);
    assert!(last < first, "nll {first} -> {last}");
}

#[test]
fn single_member_ensemble_matches_single_run() {
    let data = gen_gap_sine(30, 30, 6).unwrap();
    let mut de = spec(Method::BaselineEnsemble, Head::Gaussian, 1, 5, 13);
    de.training.ensemble_size = 1;
    let single = spec(Method::BaselineMcDropout, Head::Gaussian, 1, 5, 13);
    let a = train(&de, &data).unwrap();
    let b = train(&single, &data).unwrap();
    assert_eq!(a.members.len(), 1);
    assert_eq!(a.members[0].model, b.members[0].model);
    assert_eq!(a.members[0].log, b.members[0].log);
}

#[test]
fn ensemble_members_train_independently() {
    let data = gen_gap_sine(30, 30, 7).unwrap();
    let mut s = spec(Method::PadEnsemble, Head::Gaussian, 1, 3, 17);
    s.training.ensemble_size = 3;
    let all = train(&s, &data).unwrap();
    for i in [2, 0, 1] {
        assert_eq!(train_member(&s, &data, i).unwrap(), all.members[i]);
    }
}

#[test]
fn mismatched_inputs_are_rejected() {
    let data = gen_gap_sine(10, 10, 0).unwrap();
    assert!(train(&spec(Method::BaselineMcDropout, Head::Gaussian, 2, 1, 0), &data).is_err());
    let bad = Dataset::new(Tensor::column(&[0.0, 1.0]), vec![0.0, 2.0], None).unwrap();
    assert!(train(
        &spec(Method::BaselineMcDropout, Head::Categorical { classes: 2 }, 1, 1, 0),
        &bad
    )
    .is_err());
}

use pad_cli::toy::{run_toy, toy_spec};
use pad_core::datashift::{gen_gap_sine, standardize};
use pad_core::objectives::{Boundary, TermSwitches};
use pad_core::train::{train, Method};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Change in term C between the first and tenth epoch, median over five seeds.
fn term_c_change(terms: TermSwitches, boundary: Boundary) -> f64 {
    let changes = (0..5)
        .map(|seed| {
            let mut spec = toy_spec(Method::PadMcDropout, seed);
            spec.training.epochs = 10;
            let pad = spec.pad.as_mut().unwrap();
            pad.hyper.terms = terms;
            pad.hyper.c_boundary = boundary;
            let raw = gen_gap_sine(100, 100, seed).unwrap();
            let (_, data, _) = standardize(&raw, &[]).unwrap();
            let p = train(&spec, &data).unwrap();
            let log = &p.members[0].log;
            let c = |e: usize| log[e].generator.unwrap().term_c;
            c(9) - c(0)
        })
        .collect();
    median(changes)
}

#[test]
fn term_c_decreases_when_trained_alone() {
    let c_only = TermSwitches {
        c: true,
        ..TermSwitches::NONE
    };
    let change = term_c_change(c_only, Boundary::Fixed(0.1));
    assert!(change < 0.0, "term C rose by {change}");
}

#[test]
fn baseline_is_overconfident_in_the_gap_on_some_seed() {
    let low = (0..5)
        .filter(|&seed| {
            let r = run_toy(&toy_spec(Method::BaselineMcDropout, seed), seed).unwrap();
            r.gap_std < r.support_std
        })
        .count();
    assert!(low >= 1, "baseline gap std exceeded support std on every seed");
}

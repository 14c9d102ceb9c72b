use pad_core::autodiff::Graph;
use pad_core::datashift::{make_ood_split, Scaler};
use pad_core::generator::{knn_indices, Generator, GeneratorConfig};
use pad_core::generator::{sample_pseudo, standard_normal};
use pad_core::metrics::{ece, regression_calibration_error};
use pad_core::nets::{temperature_scale, GaussianMixture};
use pad_core::nets::{Head, Mlp, MlpConfig};
use pad_core::objectives::{
    c_term, classification_temperature_penalty, gaussian_entropy, gaussian_entropy_diag, generator_loss, kl_weight,
    regression_prior_kl, PadHyperParams, PredictorPass, TermSwitches,
};
use pad_core::rng::{stream, Stream};
use pad_core::Tensor;
use proptest::prelude::*;

fn matrix(rows: std::ops::Range<usize>, cols: usize) -> impl Strategy<Value = Tensor> {
    rows.prop_flat_map(move |r| {
        prop::collection::vec(-5.0f64..5.0, r * cols).prop_map(move |v| Tensor::from_vec(r, cols, v).unwrap())
    })
}

fn min_sq_dist(x: &[f64], batch: &Tensor) -> f64 {
    (0..batch.rows())
        .map(|m| {
            x.iter()
                .zip(batch.row_slice(m))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

proptest! {
    #[test]
    fn kl_weight_bounds_and_monotonicity(
        batch in matrix(1..8, 2),
        x in prop::collection::vec(-5.0f64..5.0, 2),
        ell in 0.05f64..5.0,
        push in 0.0f64..3.0,
    ) {
        let l = kl_weight(&x, &batch, ell).unwrap();
        prop_assert!((0.0..=1.0).contains(&l));
        let d = min_sq_dist(&x, &batch);
        prop_assert!((l - (1.0 - (-d / (2.0 * ell * ell)).exp())).abs() < 1e-12);
        let mut far = Tensor::zeros(batch.rows() + 1, 2);
        for i in 0..batch.rows() {
            for j in 0..2 {
                far.set(i, j, batch.get(i, j));
            }
        }
        let r = d.sqrt() + 1.0;
        far.set(batch.rows(), 0, x[0] + r);
        far.set(batch.rows(), 1, x[1]);
        prop_assert_eq!(kl_weight(&x, &far, ell).unwrap(), l);
        let single = Tensor::row(batch.row_slice(0));
        let away: Vec<f64> = x.iter().zip(batch.row_slice(0)).map(|(a, b)| a + push * (a - b)).collect();
        prop_assert!(kl_weight(&away, &single, ell).unwrap() >= kl_weight(&x, &single, ell).unwrap());
        prop_assert_eq!(kl_weight(batch.row_slice(0), &batch, ell).unwrap(), 0.0);
    }

    #[test]
    fn prior_kl_nonnegative(sigma in 1e-3f64..50.0) {
        let kl = regression_prior_kl(sigma).unwrap();
        prop_assert!(kl >= 0.0);
        prop_assert!(kl > 0.0 || (sigma - 1.0).abs() < 1e-6);
    }

    #[test]
    fn entropy_scaling_and_additivity(sigmas in prop::collection::vec(1e-3f64..20.0, 1..6), c in 0.1f64..10.0) {
        let total = gaussian_entropy_diag(&sigmas).unwrap();
        let sum: f64 = sigmas.iter().map(|&s| gaussian_entropy(s).unwrap()).sum();
        prop_assert!((total - sum).abs() < 1e-12);
        let h = gaussian_entropy(sigmas[0] * c).unwrap() - gaussian_entropy(sigmas[0]).unwrap();
        prop_assert!((h - c.ln()).abs() < 1e-12);
    }

    #[test]
    fn temperature_penalty_zero_on_target(lambda in 0.0f64..1.0, tau in 1.5f64..50.0) {
        let t = tau.powf(lambda);
        prop_assert!(classification_temperature_penalty(t, lambda, tau).abs() < 1e-20);
        prop_assert!(classification_temperature_penalty(t + 0.5, lambda, tau) > 0.0);
    }

    #[test]
    fn temperature_flattens_probabilities(logits in prop::collection::vec(-4.0f64..4.0, 2..6), log_t in 0.0f64..3.0) {
        let mut z = logits.clone();
        z.push(0.0);
        let (p1, _) = temperature_scale(&z);
        *z.last_mut().unwrap() = log_t;
        let (pt, t) = temperature_scale(&z);
        prop_assert!((t - log_t.exp()).abs() < 1e-12);
        prop_assert!((pt.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let max = |p: &[f64]| p.iter().copied().fold(0.0, f64::max);
        prop_assert!(max(&pt) <= max(&p1) + 1e-12);
    }

    #[test]
    fn c_term_threshold_properties(batch in matrix(2..8, 2), pseudo in matrix(2..8, 2), c2 in 0.0f64..4.0) {
        let k = 1.max(batch.rows().min(pseudo.rows()) / 2);
        let raw = c_term(&pseudo, &batch, k, None).unwrap();
        let cut = c_term(&pseudo, &batch, k, Some(c2)).unwrap();
        prop_assert!(cut >= 0.0 && cut <= raw + 1e-12);
        prop_assert!(raw - cut <= c2 + 1e-9);
    }

    #[test]
    fn mixture_cdf_is_monotone(
        comps in prop::collection::vec((-3.0f64..3.0, 0.05f64..3.0), 1..6),
        a in -10.0f64..10.0,
        b in -10.0f64..10.0,
    ) {
        let m = GaussianMixture::new(comps).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (fl, fh) = (m.cdf(lo), m.cdf(hi));
        prop_assert!((0.0..=1.0).contains(&fl) && (0.0..=1.0).contains(&fh));
        prop_assert!(fl <= fh);
        prop_assert!(m.variance() > 0.0);
        let s = m.affine(2.0, 3.0);
        prop_assert!((s.cdf(2.0 + 3.0 * lo) - fl).abs() < 1e-12);
    }

    #[test]
    fn calibration_error_is_bounded(cdfs in prop::collection::vec(0.0f64..=1.0, 1..200), levels in 1usize..200) {
        let e = regression_calibration_error(&cdfs, levels).unwrap();
        prop_assert!((0.0..=100.0).contains(&e));
    }

    #[test]
    fn ece_is_bounded(rows in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..100), bins in 1usize..30) {
        let probs: Vec<Vec<f64>> = rows.iter().map(|&(p, _)| vec![0.5 + p / 2.0, 0.5 - p / 2.0]).collect();
        let labels: Vec<f64> = rows.iter().map(|&(_, c)| if c { 0.0 } else { 1.0 }).collect();
        let e = ece(&probs, &labels, bins).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
    }

    #[test]
    fn scaler_round_trip(x in matrix(2..20, 3)) {
        let s = Scaler::fit(&x).unwrap();
        let z = s.transform(&x).unwrap();
        for j in 0..3 {
            let col: Vec<f64> = (0..x.rows()).map(|i| z.get(i, j)).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            prop_assert!(mean.abs() < 1e-9);
            if s.std[j] > 0.0 {
                for i in 0..x.rows() {
                    prop_assert!((s.inverse_value(j, z.get(i, j)) - x.get(i, j)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn ood_split_invariants(sizes in prop::collection::vec(1usize..40, 2..10), frac in 0.05f64..0.6, seed in 0u64..1000) {
        let assignments: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        match make_ood_split(&assignments, sizes.len(), frac, seed) {
            Ok(s) => {
                s.validate(frac).unwrap();
                prop_assert!(!s.train_idx.is_empty());
                let mut all: Vec<usize> = s.train_idx.iter().chain(&s.test_idx).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..assignments.len()).collect::<Vec<_>>());
            }
            Err(_) => {
                // only legal when reaching the fraction would take every cluster
                let n = assignments.len() as f64;
                let biggest = *sizes.iter().max().unwrap() as f64;
                prop_assert!(n - biggest < frac * n + biggest);
            }
        }
    }

    #[test]
    fn knn_matches_brute_force(points in matrix(2..25, 3), n_frac in 0.0f64..1.0, k_frac in 0.0f64..1.0) {
        let rows = points.rows();
        let n = ((rows as f64 * n_frac) as usize).min(rows - 1);
        let k = 1 + ((rows / 2 - 1) as f64 * k_frac) as usize;
        let got = knn_indices(&points, n, k).unwrap();
        prop_assert!(!got.contains(&n));
        let d = |m: usize| points.row_slice(n).iter().zip(points.row_slice(m)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let mut oracle: Vec<usize> = (0..rows).filter(|&m| m != n).collect();
        oracle.sort_by(|&a, &b| d(a).total_cmp(&d(b)).then(a.cmp(&b)));
        oracle.truncate(k);
        prop_assert_eq!(got, oracle);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn generator_is_permutation_equivariant(x in matrix(4..12, 2), seed in 0u64..1000, perm_seed in any::<u64>(), k_frac in 0.0f64..1.0) {
        use rand::seq::SliceRandom;
        let gen = Generator::new(GeneratorConfig::new(2), 1, &mut stream(seed, Stream::GeneratorInit)).unwrap();
        let k = 1 + ((x.rows() / 2 - 1) as f64 * k_frac) as usize;
        let mut perm: Vec<usize> = (0..x.rows()).collect();
        perm.shuffle(&mut stream(perm_seed, Stream::Shuffle));
        let a = gen.distribution(&x, k).unwrap();
        let b = gen.distribution(&x.select_rows(&perm), k).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            prop_assert_eq!(b.mu.row_slice(i), a.mu.row_slice(p));
            prop_assert_eq!(b.sigma.row_slice(i), a.sigma.row_slice(p));
        }
    }

    #[test]
    fn generator_terms_are_switch_independent(seed in 0u64..1000, rows in 4usize..10) {
        let x = Tensor::from_fn(rows, 2, |i, j| ((i * 7 + j * 3 + seed as usize) % 11) as f64 * 0.3 - 1.5);
        let gen = Generator::new(GeneratorConfig::new(2), 1, &mut stream(seed, Stream::GeneratorInit)).unwrap();
        let mlp = Mlp::new(MlpConfig::standard(2, Head::Gaussian), 0, &mut stream(seed, Stream::Init)).unwrap();
        let noise = standard_normal(rows, 2, &mut stream(seed, Stream::GeneratorNoise));
        let eval = |terms: TermSwitches| {
            let hyper = PadHyperParams { terms, ..PadHyperParams::default() };
            let mut g = Graph::new();
            let bound = gen.bind(&mut g);
            let net = mlp.bind_detached(&mut g);
            let xv = g.constant(x.clone());
            let pb = bound.forward(&mut g, xv, 2).unwrap();
            let xt = sample_pseudo(&mut g, &pb, &noise).unwrap();
            let pass = PredictorPass { net: &net, from_layer: 0, depth: mlp.config().depth(), head: Head::Gaussian, masks: None };
            let direct = c_term(g.value(xt), &x, 2, Some(2.0)).unwrap();
            (generator_loss(&mut g, &pass, &pb, xt, &x, &hyper, Some(2.0)).unwrap().1, direct)
        };
        let (full, direct) = eval(TermSwitches::ALL);
        prop_assert_eq!(full.total, full.term_a + full.term_b + full.term_c);
        for mask in 0..8u8 {
            let s = TermSwitches { a: mask & 1 != 0, b: mask & 2 != 0, c: mask & 4 != 0 };
            let (r, _) = eval(s);
            prop_assert_eq!(r.term_a, if s.a { full.term_a } else { 0.0 });
            prop_assert_eq!(r.term_b, if s.b { full.term_b } else { 0.0 });
            prop_assert_eq!(r.term_c, if s.c { full.term_c } else { 0.0 });
            prop_assert!((r.total - (r.term_a + r.term_b + r.term_c)).abs() < 1e-12);
        }
        let c_only = eval(TermSwitches { c: true, ..TermSwitches::NONE }).0;
        prop_assert!((c_only.total - direct).abs() < 1e-12);
    }
}

use numrep::patchkit::{make_alpha_schedule, PatchPlan};
use numrep::probe::Locus;
use numrep::regress::{fit_ols_oracle, fit_pca, fit_pls, norm, r_squared, Matrix, PlsOptions};
use numrep::stats::{aggregate_effects, spearman_rho, RankedPairSeries};
use numrep::synthworld::{generate_world, WorldConfig};
use numrep::tinylm::{LanguageModel, ModelConfig, TinyLm};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_problem(seed: u64, n: usize, d: usize) -> (Matrix, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Matrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
    let beta: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = (0..n)
        .map(|i| x.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + 0.2 * rng.random_range(-1.0..1.0))
        .collect();
    (x, y)
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pls_train_r2_non_decreasing_in_k(seed in any::<u64>(), n in 12usize..60, d in 2usize..10) {
        let (x, y) = random_problem(seed, n, d);
        let k = d.min(n - 1);
        let m = fit_pls(&x, &y, k, PlsOptions::default()).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for kk in 1..=k {
            let r2 = r_squared(&y, &m.predict(&x, kk).unwrap()).unwrap();
            prop_assert!(r2 >= prev - 1e-10, "k {} r2 {} < {}", kk, r2, prev);
            prev = r2;
        }
        for w in &m.weights {
            prop_assert!((norm(w) - 1.0).abs() <= 1e-9);
        }
        for &(lo, hi) in &m.train_score_range {
            prop_assert!(lo <= hi);
        }
    }

    #[test]
    fn pls_full_rank_matches_ols(seed in any::<u64>(), n in 20usize..60, d in 2usize..8) {
        let (x, y) = random_problem(seed, n, d);
        let pls = fit_pls(&x, &y, d, PlsOptions::default()).unwrap().predict(&x, d).unwrap();
        let ols = fit_ols_oracle(&x, &y, 0.0).unwrap().predict(&x);
        let diff: Vec<f64> = pls.iter().zip(&ols).map(|(a, b)| a - b).collect();
        prop_assert!(norm(&diff) <= 1e-6 * norm(&ols));
    }

    #[test]
    fn pls_centering_invariance(seed in any::<u64>(), shift in prop::collection::vec(-50.0f64..50.0, 5)) {
        let (x, y) = random_problem(seed, 40, 5);
        let moved = Matrix::from_fn(40, 5, |i, j| x.get(i, j) + shift[j]);
        let a = fit_pls(&x, &y, 3, PlsOptions::default()).unwrap();
        let b = fit_pls(&moved, &y, 3, PlsOptions::default()).unwrap();
        for (u, v) in a.weights.iter().zip(&b.weights) {
            prop_assert!(max_gap(u, v) <= 1e-8);
        }
        prop_assert!(max_gap(&a.predict(&x, 3).unwrap(), &b.predict(&moved, 3).unwrap()) <= 1e-8);
    }

    #[test]
    fn pls_target_affine_equivariance(seed in any::<u64>(), a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0], b in -10.0f64..10.0) {
        let (x, y) = random_problem(seed, 40, 5);
        let ya: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        let p = fit_pls(&x, &y, 3, PlsOptions::default()).unwrap().predict(&x, 3).unwrap();
        let q = fit_pls(&x, &ya, 3, PlsOptions::default()).unwrap().predict(&x, 3).unwrap();
        let expect: Vec<f64> = p.iter().map(|v| a * v + b).collect();
        prop_assert!(max_gap(&q, &expect) <= 1e-8);
    }

    #[test]
    fn pca_orthonormal_and_sorted(seed in any::<u64>(), n in 10usize..40, d in 2usize..8) {
        let (x, _) = random_problem(seed, n, d);
        let k = d.min(n - 1);
        let p = fit_pca(&x, k).unwrap();
        for i in 0..p.components.len() {
            for j in 0..p.components.len() {
                let dot: f64 = p.components[i].iter().zip(&p.components[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((dot - want).abs() <= 1e-8);
            }
        }
        prop_assert!(p.explained_variance.windows(2).all(|w| w[0] >= w[1] - 1e-12));
    }

    #[test]
    fn spearman_ignores_monotone_maps(
        y in prop::collection::vec(-100i32..100, 3..30),
        scale in 0.01f64..10.0,
        shift in -5.0f64..5.0,
    ) {
        let alpha: Vec<f64> = (0..y.len()).map(|i| i as f64).collect();
        let y: Vec<f64> = y.into_iter().map(f64::from).collect();
        let base = spearman_rho(&RankedPairSeries::new(alpha.clone(), y.clone()).unwrap());
        // strictly increasing, nonlinear
        let f = |v: f64| (scale * v / 100.0).exp() + shift + v.powi(3);
        let mapped = spearman_rho(&RankedPairSeries::new(alpha.iter().map(|&a| f(a)).collect(), y.iter().map(|&v| f(v)).collect()).unwrap());
        prop_assert!((base - mapped).abs() <= 1e-12);
        let neg = spearman_rho(&RankedPairSeries::new(alpha, y.iter().map(|v| -v).collect()).unwrap());
        prop_assert_eq!(neg, -base);
        prop_assert!((-1.0..=1.0).contains(&base));
    }

    #[test]
    fn effect_summary_mean_is_convex(ys in prop::collection::vec(prop::collection::vec(-9i32..9, 5), 1..8)) {
        let alpha: Vec<f64> = vec![-2.0, -1.0, 0.0, 1.0, 2.0];
        let series: Vec<RankedPairSeries> = ys
            .iter()
            .map(|y| RankedPairSeries::new(alpha.clone(), y.iter().map(|&v| f64::from(v)).collect()).unwrap())
            .collect();
        let s = aggregate_effects(&series).unwrap();
        let lo = s.per_entity_rho.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = s.per_entity_rho.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(s.mean_rho >= lo - 1e-12 && s.mean_rho <= hi + 1e-12);
        prop_assert!(s.per_entity_rho.iter().all(|r| (-1.0..=1.0).contains(r)));
    }

    #[test]
    fn alpha_schedule_is_increasing_with_zero(seed in any::<u64>(), steps in 3usize..120, k in 1usize..4) {
        let (x, y) = random_problem(seed, 30, 6);
        let m = fit_pls(&x, &y, 4, PlsOptions::default()).unwrap();
        let a = make_alpha_schedule(&m, k, steps).unwrap();
        prop_assert!(a.len() >= steps);
        prop_assert!(a.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(a.contains(&0.0));
        let plan = PatchPlan::from_probe("p", &m, k, steps, Locus::default()).unwrap();
        prop_assert!((norm(&plan.direction) - 1.0).abs() <= 1e-9);
        let mx = plan.alpha_schedule.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (n, a) in plan.normalized_alphas.iter().zip(&plan.alpha_schedule) {
            prop_assert_eq!(*n, a / mx);
        }
    }

    #[test]
    fn edit_window_stays_in_range(
        n_layers in 1usize..12,
        frac in 0.0f64..=1.0,
        window in 0usize..6,
        lo in -5i64..=0,
        hi in 0i64..5,
        len in 1usize..20,
        pos_seed in any::<usize>(),
    ) {
        let (x, y) = random_problem(1, 20, 4);
        let m = fit_pls(&x, &y, 2, PlsOptions::default()).unwrap();
        let mut plan = PatchPlan::from_probe("p", &m, 1, 5, Locus { layer_fraction: frac, token_offset: 0 }).unwrap();
        plan.layer_window = window;
        plan.token_window = (lo, hi);
        let pos = pos_seed % len;
        let pts = plan.edit_points(n_layers, pos, len);
        prop_assert!(!pts.is_empty());
        for (l, p) in pts {
            prop_assert!(l <= n_layers && p < len);
        }
    }

    #[test]
    fn worlds_are_closed_and_in_range(seed in 0u64..500, n in 20usize..80) {
        let w = generate_world(&WorldConfig { seed, n_entities: n, ..WorldConfig::default() }).unwrap();
        let vocab = w.vocab();
        let test: std::collections::HashSet<_> = w.test_entities.iter().collect();
        prop_assert!(w.train_entities.iter().all(|e| !test.contains(e)));
        for f in &w.facts {
            let p = w.property(&f.property_id).unwrap();
            prop_assert!(f.value >= p.min && f.value <= p.max);
            prop_assert!(vocab.render_prompt(p, &f.entity_name, true).is_ok());
            prop_assert!(vocab.answer_for_value(&p.id, f.value).is_ok());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn logits_ignore_future_tokens(seed in any::<u64>(), len in 2usize..10, cut in 0usize..9, repl in 0u32..30) {
        let cfg = ModelConfig { vocab_size: 30, ..ModelConfig::new(30, seed) };
        let m = TinyLm::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<u32> = (0..len).map(|_| rng.random_range(0..30)).collect();
        let t = cut % (len - 1);
        let mut b = a.clone();
        b[t + 1] = repl;
        let la = m.forward(&a, &[], None).unwrap();
        let lb = m.forward(&b, &[], None).unwrap();
        for p in 0..=t {
            prop_assert_eq!(la.logits_at(p), lb.logits_at(p));
        }
    }
}

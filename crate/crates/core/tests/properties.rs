use oodscore_core::closed_form::{
    exgrad_closed, gradnorm_closed, u_term, v_energy, v_msp, v_tv_sum, v_varsum, v_varsum_raw, UTermKind,
};
use oodscore_core::eval::auroc;
use oodscore_core::math::{log_softmax, logsumexp, softmax, vector_norm, Encoding, Logits, NormOrder, Temperature};
use oodscore_core::verify::pairwise_auroc;
use oodscore_core::Polarity;
use proptest::prelude::*;

fn logits() -> impl Strategy<Value = Vec<f64>> {
    (2usize..=100).prop_flat_map(|c| prop::collection::vec(-50.0..50.0f64, c))
}

fn temperature() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.5), Just(1.0), Just(2.0), 0.1..10.0f64]
}

fn norm_order() -> impl Strategy<Value = NormOrder> {
    prop_oneof![
        (0.05..0.95f64).prop_map(NormOrder::Fractional),
        (1.0..8.0f64).prop_map(NormOrder::Finite),
        Just(NormOrder::Infinity),
    ]
}

/// Scores on a 1/8 grid, so monotone transforms keep distinct values distinct.
fn grid_scores(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-40i32..=40).prop_map(|k| k as f64 / 8.0), 1..=max_len)
}

fn rel(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 { 0.0 } else { (a - b).abs() / s }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn softmax_is_a_distribution(f in logits(), t in temperature()) {
        let p = softmax(&Logits::new(f).unwrap(), Temperature::new(t).unwrap());
        let sum: f64 = p.as_slice().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        prop_assert!(p.as_slice().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn softmax_ignores_constant_shift(f in logits(), c in -100.0..100.0f64) {
        let t = Temperature::default();
        let a = softmax(&Logits::new(f.clone()).unwrap(), t);
        let b = softmax(&Logits::new(f.iter().map(|v| v + c).collect()).unwrap(), t);
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn temperature_divides_logits(f in logits(), t in temperature()) {
        let a = softmax(&Logits::new(f.clone()).unwrap(), Temperature::new(t).unwrap());
        let b = softmax(&Logits::new(f.iter().map(|v| v / t).collect()).unwrap(), Temperature::default());
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn log_softmax_exponentiates_to_softmax(f in logits(), t in temperature()) {
        let (f, t) = (Logits::new(f).unwrap(), Temperature::new(t).unwrap());
        let p = softmax(&f, t);
        for (l, q) in log_softmax(&f, t).iter().zip(p.as_slice()) {
            prop_assert!((l.exp() - q).abs() <= 1e-12);
        }
    }

    #[test]
    fn logsumexp_is_bracketed_by_max(f in logits(), t in temperature()) {
        let c = f.len() as f64;
        let f = Logits::new(f).unwrap();
        let lse = logsumexp(&f, Temperature::new(t).unwrap());
        prop_assert!(lse >= f.max());
        prop_assert!(lse <= f.max() + t * c.ln() + 1e-12 * f.max().abs().max(1.0));
    }

    #[test]
    fn norms_are_absolutely_homogeneous(
        v in prop::collection::vec(-10.0..10.0f64, 1..40),
        c in prop_oneof![-5.0..-0.1f64, 0.1..5.0f64],
        order in norm_order(),
    ) {
        let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
        let lhs = vector_norm(&scaled, order);
        let rhs = c.abs() * vector_norm(&v, order);
        prop_assert!(rel(lhs, rhs) <= 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn zero_norm_counts_nonzeros(v in prop::collection::vec(prop_oneof![Just(0.0), -3.0..3.0f64], 1..30)) {
        let count = v.iter().filter(|x| **x != 0.0).count() as f64;
        prop_assert_eq!(vector_norm(&v, NormOrder::Zero), count);
    }

    #[test]
    fn v_terms_stay_in_range(f in logits(), t in temperature()) {
        let c = f.len() as f64;
        let f = Logits::new(f).unwrap();
        let t = Temperature::new(t).unwrap();
        let p = softmax(&f, t);
        let tv = v_tv_sum(&p);
        prop_assert!((-1e-12..=2.0 * (1.0 - 1.0 / c) + 1e-12).contains(&tv));
        let raw = v_varsum_raw(&p);
        prop_assert!((0.0..=1.0 - 1.0 / c + 1e-12).contains(&raw));
        let var = v_varsum(&p);
        prop_assert!(var >= 1.0 / c - 1e-12 && var <= 1.0);
        let msp = v_msp(&p);
        prop_assert!(msp >= 1.0 / c - 1e-12 && msp <= 1.0);
        prop_assert!((var + raw - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn energy_determines_msp(f in logits(), t in temperature()) {
        let f = Logits::new(f).unwrap();
        let t = Temperature::new(t).unwrap();
        let linked = (f.max() / t.get() - v_energy(&f, t) / t.get()).exp();
        prop_assert!(rel(linked, v_msp(&softmax(&f, t))) <= 1e-10);
    }

    #[test]
    fn gradnorm_factors_through_total_variation(
        h in prop::collection::vec(-5.0..5.0f64, 1..64),
        f in logits(),
        t in temperature(),
    ) {
        let t = Temperature::new(t).unwrap();
        let p = softmax(&Logits::new(f).unwrap(), t);
        let h = Encoding::new(h).unwrap();
        let tv = 0.5 * v_tv_sum(&p);
        let factored = 2.0 / t.get() * u_term(&h, UTermKind::EncodingNorm(NormOrder::L1)) * tv;
        prop_assert!(rel(gradnorm_closed(&h, &p, t), factored) <= 1e-12);
        let ex = 2.0 / t.get() * u_term(&h, UTermKind::EncodingNorm(NormOrder::L1)) * v_varsum_raw(&p);
        prop_assert!(rel(exgrad_closed(&h, &p, t), ex) <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auroc_matches_pairwise_oracle(
        id in prop::collection::vec(prop_oneof![(-4i32..4).prop_map(f64::from), -3.0..3.0f64], 1..200),
        ood in prop::collection::vec(prop_oneof![(-4i32..4).prop_map(f64::from), -3.0..3.0f64], 1..200),
        higher_is_id in any::<bool>(),
    ) {
        let pol = if higher_is_id { Polarity::HigherIsId } else { Polarity::HigherIsOod };
        prop_assert_eq!(auroc(&id, &ood, pol).unwrap().value, pairwise_auroc(&id, &ood, pol));
    }

    #[test]
    fn auroc_ignores_strictly_increasing_transforms(id in grid_scores(120), ood in grid_scores(120)) {
        let base = auroc(&id, &ood, Polarity::HigherIsId).unwrap().value;
        let transforms: [fn(f64) -> f64; 4] = [f64::exp, |x| 3.0 * x + 1.0, |x| x * x * x, |x| 4.0 * x];
        for g in transforms {
            let a: Vec<f64> = id.iter().map(|&x| g(x)).collect();
            let b: Vec<f64> = ood.iter().map(|&x| g(x)).collect();
            prop_assert_eq!(auroc(&a, &b, Polarity::HigherIsId).unwrap().value, base);
        }
    }

    #[test]
    fn polarity_flip_complements_auroc(id in grid_scores(100), ood in grid_scores(100)) {
        let a = auroc(&id, &ood, Polarity::HigherIsId).unwrap().value;
        let b = auroc(&id, &ood, Polarity::HigherIsOod).unwrap().value;
        prop_assert!((a + b - 1.0).abs() <= 1e-15);
        let swapped = auroc(&ood, &id, Polarity::HigherIsOod).unwrap().value;
        prop_assert_eq!(swapped, a);
    }

    #[test]
    fn auroc_ignores_sample_order(mut id in grid_scores(100), mut ood in grid_scores(100)) {
        let a = auroc(&id, &ood, Polarity::HigherIsId).unwrap().value;
        id.reverse();
        let mid = ood.len() / 2;
        ood.rotate_left(mid);
        prop_assert_eq!(auroc(&id, &ood, Polarity::HigherIsId).unwrap().value, a);
    }

    #[test]
    fn constant_scores_give_one_half(n in 1usize..300, m in 1usize..300, c in -10.0..10.0f64) {
        prop_assert_eq!(auroc(&vec![c; n], &vec![c; m], Polarity::HigherIsId).unwrap().value, 0.5);
    }
}

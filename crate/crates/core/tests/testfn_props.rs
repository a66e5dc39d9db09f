mod common;

use common::{away_from_kinks, point, reference_eval, rel_err, test_fn, trainable_fn};
use distnet::testfn::{enumerate_family, multi_indices, product, FamilyKind, FamilySpec, MassChannel, TestFunction};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn values_respect_the_documented_bound(
        (g, p) in (1usize..=4).prop_flat_map(|d| (test_fn(d), point(d)))
    ) {
        let v = g.eval(&p).unwrap();
        match &g {
            TestFunction::Monomial { .. } | TestFunction::Bump { .. } => prop_assert!(v.abs() <= 1.0),
            TestFunction::Exp { v: w, .. } => {
                let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                prop_assert!(v.abs() <= (norm * (p.len() as f64).sqrt()).exp());
            }
            _ => {}
        }
    }
}

proptest! {
    #[test]
    fn evaluation_matches_closed_form((g, p) in (1usize..=4).prop_flat_map(|d| (test_fn(d), point(d)))) {
        prop_assert!(rel_err(g.eval(&p).unwrap(), reference_eval(&g, &p)) < 1e-14);
    }

    #[test]
    fn param_grad_matches_central_differences(
        (g, p) in (1usize..=3).prop_flat_map(|d| (trainable_fn(d), point(d)))
    ) {
        let h = 1e-5;
        prop_assume!(away_from_kinks(&g, &p, 1e-2));
        let analytic = g.param_grad(&p).unwrap();
        let base = g.params();
        prop_assert_eq!(analytic.len(), base.len());
        for i in 0..base.len() {
            let shifted = |delta: f64| {
                let mut q = g.clone();
                let mut values = base.clone();
                values[i] += delta;
                q.set_params(&values).unwrap();
                reference_eval(&q, &p)
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            let err = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(1e-6);
            prop_assert!(err < 1e-6, "{g} at {p:?}, parameter {i}: {} vs {fd}", analytic[i]);
        }
    }

    #[test]
    fn product_evaluates_as_pointwise_product(
        (a, b, p) in (1usize..=3).prop_flat_map(|d| (test_fn(d), test_fn(d), point(d)))
    ) {
        let ab = product(&a, &b).unwrap();
        let lhs = ab.eval(&p).unwrap();
        let rhs = a.eval(&p).unwrap() * b.eval(&p).unwrap();
        prop_assert!(rel_err(lhs, rhs) <= 1e-14, "{lhs} vs {rhs}");
    }

    #[test]
    fn mass_channels_are_strictly_increasing(log_m in -3.0..=3.0f64, log_gap in -6.0..=1.0f64) {
        let m1 = 10f64.powf(log_m);
        let m2 = m1 * (1.0 + 10f64.powf(log_gap));
        for g0 in [MassChannel::Arctan, MassChannel::Ratio] {
            prop_assert!(g0.eval(m1) < g0.eval(m2));
            prop_assert!(g0.eval(m2) < g0.bound());
        }
    }
}

#[test]
fn monomial_enumeration_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let names = |dim, n, rng: &mut ChaCha8Rng| -> Vec<String> {
        enumerate_family(&FamilySpec::new(FamilyKind::Monomial, n), dim, rng)
            .unwrap()
            .iter()
            .map(ToString::to_string)
            .collect()
    };
    assert_eq!(names(1, 3, &mut rng), ["x1", "x1^2", "x1^3"]);
    assert_eq!(names(2, 3, &mut rng), ["x1", "x2", "x1*x2"]);
    assert_eq!(multi_indices(2, 3), vec![vec![1, 0], vec![0, 1], vec![1, 1]]);
}

#[test]
fn enumeration_is_a_prefix_of_longer_enumerations() {
    for dim in 1..=3 {
        let long = multi_indices(dim, 30);
        for n in 0..30 {
            assert_eq!(multi_indices(dim, n), long[..n]);
        }
        let mut sorted = long.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), long.len(), "duplicates in dimension {dim}");
    }
}

#[test]
fn monomials_fuse_under_products() {
    let x = TestFunction::monomial(vec![1, 0]).unwrap();
    let y = TestFunction::monomial(vec![1, 2]).unwrap();
    assert_eq!(product(&x, &y).unwrap(), TestFunction::monomial(vec![2, 2]).unwrap());
}

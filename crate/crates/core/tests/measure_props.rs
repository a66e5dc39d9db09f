mod common;

use common::{measure, naive_integral, reference_eval, rel_err, test_fn};
use distnet::testfn::TestFunction;
use proptest::prelude::*;

fn dim_and_measure() -> impl Strategy<Value = (usize, distnet::ParticleMeasure)> {
    (1usize..=3).prop_flat_map(|d| (Just(d), measure(d)))
}

proptest! {
    #[test]
    fn integral_matches_weighted_sum(
        (mu, g, normalized) in (1usize..=3).prop_flat_map(|d| (measure(d), test_fn(d), any::<bool>()))
    ) {
        let lib = mu.integrate(&g, normalized).unwrap();
        let reference = naive_integral(&mu, |x| reference_eval(&g, x), normalized);
        prop_assert!(rel_err(lib, reference) < 1e-12, "{lib} vs {reference}");
    }

    #[test]
    fn integral_is_linear(
        (mu, g1, g2, normalized) in (1usize..=3).prop_flat_map(|d| (measure(d), test_fn(d), test_fn(d), any::<bool>())),
        a in -2.0..=2.0f64,
        b in -2.0..=2.0f64,
    ) {
        let combined = mu
            .integrate_with(|x| Ok(a * g1.eval(x)? + b * g2.eval(x)?), normalized)
            .unwrap();
        let i1 = mu.integrate(&g1, normalized).unwrap();
        let i2 = mu.integrate(&g2, normalized).unwrap();
        let scale = (a * i1).abs() + (b * i2).abs();
        prop_assert!((combined - (a * i1 + b * i2)).abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE));
    }

    #[test]
    fn normalized_integral_ignores_power_of_two_scaling(
        (mu, g) in (1usize..=3).prop_flat_map(|d| (measure(d), test_fn(d))),
        k in -30i32..=30,
    ) {
        let c = 2f64.powi(k);
        let base = mu.integrate(&g, true).unwrap();
        let scaled = mu.scaled(c).unwrap().integrate(&g, true).unwrap();
        prop_assert_eq!(base.to_bits(), scaled.to_bits());
    }

    #[test]
    fn normalized_integral_ignores_general_scaling(
        (mu, g) in (1usize..=3).prop_flat_map(|d| (measure(d), test_fn(d))),
        log_c in -3.0..=3.0f64,
    ) {
        let c = 10f64.powf(log_c);
        let base = mu.integrate(&g, true).unwrap();
        let scaled = mu.scaled(c).unwrap().integrate(&g, true).unwrap();
        prop_assert!(rel_err(base, scaled) < 1e-12);
    }

    #[test]
    fn total_mass_is_homogeneous((_, mu) in dim_and_measure(), log_c in -3.0..=3.0f64) {
        let c = 10f64.powf(log_c);
        prop_assert!(rel_err(mu.scaled(c).unwrap().total_mass(), c * mu.total_mass()) < 1e-12);
    }

    #[test]
    fn total_mass_matches_weight_sum((_, mu) in dim_and_measure()) {
        let naive: f64 = mu.atoms().iter().map(|a| a.weight).sum();
        prop_assert!(rel_err(mu.total_mass(), naive) < 1e-12);
    }

    #[test]
    fn normalized_measure_has_unit_mass((_, mu) in dim_and_measure()) {
        prop_assert!((mu.normalize().total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mgf_is_the_exponential_integral(
        (mu, v) in (1usize..=3).prop_flat_map(|d| (measure(d), prop::collection::vec(-3.0..=3.0f64, d)))
    ) {
        let via_mgf = mu.mgf(&v).unwrap();
        let via_integral = mu.integrate(&TestFunction::exp(v.clone(), false).unwrap(), false).unwrap();
        prop_assert_eq!(via_mgf.to_bits(), via_integral.to_bits());
        let reference = naive_integral(&mu, |x| v.iter().zip(x).map(|(a, b)| a * b).sum::<f64>().exp(), false);
        prop_assert!(rel_err(via_mgf, reference) < 1e-12);
    }

    #[test]
    fn atom_order_is_irrelevant(
        (mu, order, g) in (1usize..=3).prop_flat_map(|d| (measure(d), test_fn(d)))
            .prop_flat_map(|(mu, g)| {
                let order = Just((0..mu.len()).collect::<Vec<_>>()).prop_shuffle();
                (Just(mu), order, Just(g))
            })
    ) {
        let nu = mu.permuted(&order).unwrap();
        prop_assert!(rel_err(mu.total_mass(), nu.total_mass()) < 1e-12);
        for normalized in [false, true] {
            let (a, b) = (mu.integrate(&g, normalized).unwrap(), nu.integrate(&g, normalized).unwrap());
            prop_assert!(rel_err(a, b) < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn documented_examples() {
    let mu = distnet::ParticleMeasure::from_scalar_atoms(&[(0.2, 0.3), (0.7, 0.7)]).unwrap();
    let x = TestFunction::monomial(vec![1]).unwrap();
    let x2 = TestFunction::monomial(vec![2]).unwrap();
    // 0.3 * 0.2 + 0.7 * 0.7 over unit mass.
    assert!((mu.integrate(&x, true).unwrap() - 0.55).abs() < 1e-15);
    // 0.3 * 0.04 + 0.7 * 0.49.
    assert!((mu.integrate(&x2, true).unwrap() - 0.355).abs() < 1e-15);
    let scaled = mu.scaled(3.0).unwrap();
    assert!((scaled.total_mass() - 3.0).abs() < 1e-15);
    assert!((scaled.integrate(&x, false).unwrap() - 1.65).abs() < 1e-15);
}

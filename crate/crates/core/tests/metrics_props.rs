mod common;

use common::{channel, measure, naive_integral, point, reference_eval, rel_err, test_fn};
use distnet::metrics::{sup_distance, SspMetric};
use distnet::testfn::{MassChannel, TestFunction};
use distnet::{Atom, ParticleMeasure};
use proptest::prelude::*;

fn metric(dim: usize) -> impl Strategy<Value = SspMetric> {
    (prop::collection::vec(test_fn(dim), 1..=16), channel()).prop_map(|(f, c)| SspMetric::new(f, c).unwrap())
}

#[derive(Debug, Clone)]
struct Triple {
    metric: SspMetric,
    points: [Vec<f64>; 3],
    measures: [ParticleMeasure; 3],
}

fn triple() -> impl Strategy<Value = Triple> {
    (1usize..=3).prop_flat_map(|d| {
        (
            metric(d),
            [point(d), point(d), point(d)],
            [measure(d), measure(d), measure(d)],
        )
            .prop_map(|(metric, points, measures)| Triple {
                metric,
                points,
                measures,
            })
    })
}

fn reference_point_metric(family: &[TestFunction], x: &[f64], y: &[f64]) -> f64 {
    let mut total = 0.0;
    for (i, g) in family.iter().enumerate() {
        let gap = (reference_eval(g, x) - reference_eval(g, y)).abs().min(1.0);
        total += gap / 2f64.powi(i as i32 + 1);
    }
    total
}

fn reference_measure_metric(m: &SspMetric, mu: &ParticleMeasure, nu: &ParticleMeasure) -> f64 {
    let g0 = |mass: f64| match m.mass_channel() {
        MassChannel::Arctan => mass.atan(),
        MassChannel::Ratio => mass / (1.0 + mass),
    };
    let mass = |p: &ParticleMeasure| p.atoms().iter().map(|a| a.weight).sum::<f64>();
    let mut total = (g0(mass(mu)) - g0(mass(nu))).abs().min(1.0);
    for (k, g) in m.family().iter().enumerate() {
        let a = naive_integral(mu, |x| reference_eval(g, x), true);
        let b = naive_integral(nu, |x| reference_eval(g, x), true);
        total += (a - b).abs().min(1.0) / 2f64.powi(k as i32 + 2);
    }
    total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn pseudometric_axioms(t in triple()) {
        let m = &t.metric;
        let [x, y, z] = &t.points;
        let [a, b, c] = &t.measures;
        let d = |p: &[f64], q: &[f64]| m.point_metric(p, q).unwrap();
        let dm = |p: &ParticleMeasure, q: &ParticleMeasure| m.measure_metric(p, q).unwrap();

        prop_assert_eq!(d(x, y), d(y, x));
        prop_assert_eq!(d(x, x), 0.0);
        prop_assert!(d(x, z) <= d(x, y) + d(y, z) + 1e-12);
        prop_assert!(d(x, y) < 1.0);

        prop_assert_eq!(dm(a, b), dm(b, a));
        prop_assert_eq!(dm(a, a), 0.0);
        prop_assert!(dm(a, c) <= dm(a, b) + dm(b, c) + 1e-12);
        prop_assert!(dm(a, b) < 1.5);
    }
}

proptest! {
    #[test]
    fn point_metric_matches_the_series(t in triple()) {
        let [x, y, _] = &t.points;
        let lib = t.metric.point_metric(x, y).unwrap();
        let reference = reference_point_metric(t.metric.family(), x, y);
        prop_assert!((lib - reference).abs() < 1e-14, "{lib} vs {reference}");
    }

    #[test]
    fn measure_metric_matches_the_series(t in triple()) {
        let [a, b, _] = &t.measures;
        let lib = t.metric.measure_metric(a, b).unwrap();
        let reference = reference_measure_metric(&t.metric, a, b);
        prop_assert!((lib - reference).abs() < 1e-12, "{lib} vs {reference}");
    }

    #[test]
    fn breakdown_sums_to_total(t in triple()) {
        let [a, b, _] = &t.measures;
        let br = t.metric.measure_terms(a, b).unwrap();
        let sum: f64 = br.terms.iter().map(|t| t.value).sum();
        prop_assert!((br.total - sum).abs() <= 1e-12);
        prop_assert_eq!(br.terms[0].index, 0);
        prop_assert_eq!(br.terms[1].index, 2);
    }

    #[test]
    fn scaled_copies_differ_only_in_mass(t in triple(), log_c in -2.0..=2.0f64) {
        let mu = &t.measures[0];
        let br = t.metric.measure_terms(mu, &mu.scaled(10f64.powf(log_c)).unwrap()).unwrap();
        let tail: f64 = br.terms.iter().filter(|t| t.index >= 2).map(|t| t.value).sum();
        prop_assert!(tail < 1e-12);
    }

    #[test]
    fn longer_truncations_never_shrink_the_point_metric(t in triple()) {
        let [x, y, _] = &t.points;
        let mut previous = 0.0;
        for n in 1..=t.metric.family().len() {
            let d = t.metric.truncated(n).unwrap().point_metric(x, y).unwrap();
            prop_assert!(d >= previous);
            previous = d;
        }
    }

    #[test]
    fn converging_atoms_give_vanishing_distance(
        (m, limit, shifts) in (1usize..=3).prop_flat_map(|d| {
            (metric(d), measure(d)).prop_flat_map(move |(m, mu)| {
                let n = mu.len();
                (Just(m), Just(mu), prop::collection::vec(prop::collection::vec(-1.0..=1.0f64, d), n))
            })
        })
    ) {
        // Shrink the limit into [0.25, 0.75] so perturbed atoms stay in the unit box.
        let limit = ParticleMeasure::new(
            limit.atoms().iter()
                .map(|a| Atom::new(a.location.iter().map(|x| 0.25 + 0.5 * x).collect(), a.weight))
                .collect(),
        ).unwrap();
        let at = |k: i32| {
            let s = 0.25 * 0.5f64.powi(k);
            let atoms = limit.atoms().iter().zip(&shifts)
                .map(|(a, u)| Atom::new(a.location.iter().zip(u).map(|(x, d)| x + s * d).collect(), a.weight))
                .collect();
            m.measure_metric(&ParticleMeasure::new(atoms).unwrap(), &limit).unwrap()
        };
        let ds: Vec<f64> = (0..=24).map(at).collect();
        prop_assert!(ds[24] < 1e-3, "{}", ds[24]);
        for k in 13..ds.len() {
            prop_assert!(ds[k] <= ds[k - 1], "step {k}: {:?}", &ds[k - 1..=k]);
        }
    }
}

#[test]
fn sup_distance_on_a_grid() {
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let d = sup_distance(|x: &f64| Ok(x * x), |x: &f64| Ok(*x), &grid).unwrap();
    // max of x - x^2 on [0,1] is 1/4 at x = 1/2, which lies on the grid.
    assert!(rel_err(d, 0.25) < 1e-15);
    assert!(sup_distance(|x: &f64| Ok(*x), |x: &f64| Ok(*x), &grid).unwrap() == 0.0);
    assert!(sup_distance(|x: &f64| Ok(*x), |x: &f64| Ok(*x), &[] as &[f64]).is_err());
}

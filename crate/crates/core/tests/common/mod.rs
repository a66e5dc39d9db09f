//! Strategies and reference computations shared by the integration tests.
#![allow(dead_code)]

use distnet::nets::{Activation, DistributionalNetwork, OutputNetwork, PracticalNetwork};
use distnet::testfn::{MassChannel, PointDistance, TestFunction};
use distnet::{Atom, ParticleMeasure};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn point(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..=1.0f64, dim)
}

pub fn measure(dim: usize) -> impl Strategy<Value = ParticleMeasure> {
    prop::collection::vec((point(dim), 0.1..=2.0f64), 1..=8)
        .prop_map(|atoms| ParticleMeasure::new(atoms.into_iter().map(|(x, w)| Atom::new(x, w)).collect()).unwrap())
}

pub fn distance() -> impl Strategy<Value = PointDistance> {
    prop_oneof![
        Just(PointDistance::Euclidean),
        Just(PointDistance::Manhattan),
        Just(PointDistance::Chebyshev)
    ]
}

pub fn monomial(dim: usize) -> impl Strategy<Value = TestFunction> {
    prop::collection::vec(0u32..=3, dim).prop_map(|p| TestFunction::monomial(p).unwrap())
}

pub fn exp(dim: usize, trainable: bool) -> impl Strategy<Value = TestFunction> {
    let r = 1.0 / (dim as f64).sqrt();
    prop::collection::vec(-r..=r, dim).prop_map(move |v| TestFunction::exp(v, trainable).unwrap())
}

pub fn bump(dim: usize, trainable: bool) -> impl Strategy<Value = TestFunction> {
    (point(dim), 0.5..=3.0f64, distance()).prop_map(move |(c, k, d)| TestFunction::bump(c, k, d, trainable).unwrap())
}

pub fn projection(dim: usize) -> impl Strategy<Value = TestFunction> {
    (0..dim).prop_map(move |i| TestFunction::projection(i, dim).unwrap())
}

/// Any non-product test function on `[0,1]^dim`.
pub fn test_fn(dim: usize) -> BoxedStrategy<TestFunction> {
    prop_oneof![monomial(dim), exp(dim, false), bump(dim, false), projection(dim)].boxed()
}

pub fn trainable_fn(dim: usize) -> BoxedStrategy<TestFunction> {
    prop_oneof![exp(dim, true), bump(dim, true)].boxed()
}

pub fn activation() -> impl Strategy<Value = Activation> {
    prop_oneof![Just(Activation::Tanh), Just(Activation::Logistic)]
}

/// A scalar head with 0 to 2 hidden layers and every parameter in `[-1, 1]`.
pub fn head(inputs: usize) -> BoxedStrategy<OutputNetwork> {
    (prop::collection::vec(1usize..=5, 0..=2), activation())
        .prop_flat_map(move |(hidden, act)| {
            let n = OutputNetwork::zeros(inputs, &hidden, 1, act).unwrap().param_count();
            (Just(hidden), Just(act), prop::collection::vec(-1.0..=1.0f64, n))
        })
        .prop_map(move |(hidden, act, values)| {
            let mut net = OutputNetwork::zeros(inputs, &hidden, 1, act).unwrap();
            net.set_params(&values).unwrap();
            net
        })
        .boxed()
}

/// Left-to-right weighted sum, independent of the library's summation.
pub fn naive_integral(mu: &ParticleMeasure, f: impl Fn(&[f64]) -> f64, normalized: bool) -> f64 {
    let mut total = 0.0;
    let mut mass = 0.0;
    for a in mu.atoms() {
        total += a.weight * f(&a.location);
        mass += a.weight;
    }
    if normalized {
        total / mass
    } else {
        total
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

/// Closed-form evaluation of a test function, written out independently.
pub fn reference_eval(g: &TestFunction, p: &[f64]) -> f64 {
    match g {
        TestFunction::Monomial { powers } => powers.iter().zip(p).map(|(&k, &x)| x.powf(k as f64)).product(),
        TestFunction::Exp { v, .. } => v.iter().zip(p).map(|(a, b)| a * b).sum::<f64>().exp(),
        TestFunction::Projection { index, .. } => p[*index],
        TestFunction::Bump {
            center,
            scale,
            distance,
            ..
        } => {
            let diffs = p.iter().zip(center).map(|(a, b)| (a - b).abs());
            let d = match distance {
                PointDistance::Euclidean => diffs.map(|x| x * x).sum::<f64>().sqrt(),
                PointDistance::Manhattan => diffs.sum(),
                PointDistance::Chebyshev => diffs.fold(0.0, f64::max),
            };
            (1.0 - scale * d).max(0.0)
        }
        TestFunction::Product { left, right } => reference_eval(left, p) * reference_eval(right, p),
    }
}

/// Whether `p` is at least `margin` away from every kink of `g` (bump edge, coordinate ties).
pub fn away_from_kinks(g: &TestFunction, p: &[f64], margin: f64) -> bool {
    match g {
        TestFunction::Bump {
            center,
            scale,
            distance,
            ..
        } => {
            let mut gaps: Vec<f64> = p.iter().zip(center).map(|(a, b)| (a - b).abs()).collect();
            if gaps.iter().any(|&d| d < margin) {
                return false;
            }
            gaps.sort_by(|a, b| b.total_cmp(a));
            if *distance == PointDistance::Chebyshev && gaps.len() > 1 && gaps[0] - gaps[1] < margin {
                return false;
            }
            let dist = match distance {
                PointDistance::Euclidean => gaps.iter().map(|x| x * x).sum::<f64>().sqrt(),
                PointDistance::Manhattan => gaps.iter().sum(),
                PointDistance::Chebyshev => gaps[0],
            };
            (1.0 - scale * dist).abs() > margin * scale.max(1.0)
        }
        TestFunction::Product { left, right } => away_from_kinks(left, p, margin) && away_from_kinks(right, p, margin),
        _ => true,
    }
}

pub fn channel() -> impl Strategy<Value = MassChannel> {
    prop_oneof![Just(MassChannel::Arctan), Just(MassChannel::Ratio)]
}

/// A distributional network with up to four fixed or trainable tests.
pub fn dnn(dim: usize) -> BoxedStrategy<DistributionalNetwork> {
    (
        prop::collection::vec(prop_oneof![test_fn(dim), trainable_fn(dim)], 0..=4),
        channel(),
    )
        .prop_flat_map(|(tests, c)| {
            let n = tests.len();
            (Just(tests), Just(c), head(n + 1))
        })
        .prop_map(|(tests, c, h)| DistributionalNetwork::new(c, tests, h).unwrap())
        .boxed()
}

/// A randomly initialized practical network with small blocks.
pub fn practical_net(dim: usize) -> BoxedStrategy<PracticalNetwork> {
    (1usize..=4, 1usize..=3, 1usize..=4, activation(), any::<u64>())
        .prop_map(move |(n1, m, n2, act, seed)| {
            PracticalNetwork::random(dim, n1, m, n2, act, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
        })
        .boxed()
}

/// Draws one value from `strategy`.
pub fn draw<S: Strategy>(strategy: &S, runner: &mut proptest::test_runner::TestRunner) -> S::Value {
    use proptest::strategy::ValueTree;
    strategy.new_tree(runner).unwrap().current()
}

//! Randomized property suites over every module, run by `distnet verify`.
//!
//! Each suite draws its cases from its own ChaCha stream derived from a single
//! seed and stops at the first counterexample.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_records, Labeled};
use crate::error::Error;
use crate::measure::{Atom, ParticleMeasure};
use crate::metrics::SspMetric;
use crate::nets::{
    deep_set_eval, Activation, DistributionalNetwork, OutputNetwork, PracticalNetwork, TopologicalNetwork,
};
use crate::simulate::{
    bootstrap_filter, hmm_generate, make_belief_dataset, make_functional_dataset, Functional, HmmSpec, MeasureSampler,
};
use crate::testfn::{product, MassChannel, PointDistance, TestFunction};
use crate::training::{fit, gradient, GradientMode, LossSpec, Model, Optimizer, TrainConfig};

/// Deliberate defects used to check that the suites can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Report `-d` instead of `d` from both metrics.
    NegateMetric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Case budget of the cheapest suites; expensive suites run a fraction.
    pub cases: usize,
    pub fault: Option<Fault>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            cases: 200,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub module: &'static str,
    pub name: &'static str,
    pub cases: usize,
    pub passed: bool,
    pub counterexample: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub fault: Option<Fault>,
    pub passed: bool,
    pub suites: Vec<SuiteReport>,
}

/// A failed case, or an error raised while evaluating one.
struct Failure(String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(format!("error: {e}"))
    }
}

type Outcome = std::result::Result<(), Failure>;

fn fail(msg: String) -> Outcome {
    Err(Failure(msg))
}

fn rel_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

struct Ctx {
    fault: Option<Fault>,
}

impl Ctx {
    fn sign(&self) -> f64 {
        match self.fault {
            Some(Fault::NegateMetric) => -1.0,
            None => 1.0,
        }
    }

    fn point_metric(&self, m: &SspMetric, x: &[f64], y: &[f64]) -> crate::Result<f64> {
        Ok(self.sign() * m.point_metric(x, y)?)
    }

    fn measure_metric(&self, m: &SspMetric, mu: &ParticleMeasure, nu: &ParticleMeasure) -> crate::Result<f64> {
        Ok(self.sign() * m.measure_metric(mu, nu)?)
    }
}

struct Suite {
    module: &'static str,
    name: &'static str,
    /// The suite runs `cases / divisor` cases (at least one).
    divisor: usize,
    check: fn(&mut ChaCha8Rng, &Ctx) -> Outcome,
}

const SUITES: &[Suite] = &[
    Suite {
        module: "measure",
        name: "integral_linearity",
        divisor: 1,
        check: measure_linearity,
    },
    Suite {
        module: "measure",
        name: "normalized_scale_invariance",
        divisor: 1,
        check: measure_scale_invariance,
    },
    Suite {
        module: "measure",
        name: "mass_homogeneity",
        divisor: 1,
        check: measure_mass_homogeneity,
    },
    Suite {
        module: "measure",
        name: "mgf_consistency",
        divisor: 1,
        check: measure_mgf,
    },
    Suite {
        module: "measure",
        name: "atom_order",
        divisor: 1,
        check: measure_atom_order,
    },
    Suite {
        module: "testfn",
        name: "boundedness",
        divisor: 1,
        check: testfn_bounded,
    },
    Suite {
        module: "testfn",
        name: "param_grad_fd",
        divisor: 1,
        check: testfn_grad,
    },
    Suite {
        module: "testfn",
        name: "product_consistency",
        divisor: 1,
        check: testfn_product,
    },
    Suite {
        module: "testfn",
        name: "mass_channel_monotone",
        divisor: 1,
        check: testfn_mass_channel,
    },
    Suite {
        module: "metrics",
        name: "symmetry",
        divisor: 1,
        check: metrics_symmetry,
    },
    Suite {
        module: "metrics",
        name: "zero_self_distance",
        divisor: 1,
        check: metrics_identity,
    },
    Suite {
        module: "metrics",
        name: "triangle_inequality",
        divisor: 1,
        check: metrics_triangle,
    },
    Suite {
        module: "metrics",
        name: "range",
        divisor: 1,
        check: metrics_range,
    },
    Suite {
        module: "metrics",
        name: "scale_pair_mass_only",
        divisor: 1,
        check: metrics_scale_pair,
    },
    Suite {
        module: "metrics",
        name: "convergence_surrogate",
        divisor: 10,
        check: metrics_convergence,
    },
    Suite {
        module: "metrics",
        name: "truncation_monotone",
        divisor: 1,
        check: metrics_truncation,
    },
    Suite {
        module: "nets",
        name: "permutation_invariance",
        divisor: 1,
        check: nets_permutation,
    },
    Suite {
        module: "nets",
        name: "mass_scale_factorization",
        divisor: 1,
        check: nets_mass_scale,
    },
    Suite {
        module: "nets",
        name: "deep_set_equivalence",
        divisor: 1,
        check: nets_deep_set,
    },
    Suite {
        module: "nets",
        name: "determinism",
        divisor: 1,
        check: nets_determinism,
    },
    Suite {
        module: "training",
        name: "gradient_fd",
        divisor: 4,
        check: training_gradient,
    },
    Suite {
        module: "training",
        name: "gd_monotone",
        divisor: 10,
        check: training_gd_monotone,
    },
    Suite {
        module: "training",
        name: "fit_determinism",
        divisor: 20,
        check: training_determinism,
    },
    Suite {
        module: "training",
        name: "data_order_invariance",
        divisor: 20,
        check: training_order,
    },
    Suite {
        module: "simulate",
        name: "filter_positivity",
        divisor: 10,
        check: simulate_positivity,
    },
    Suite {
        module: "simulate",
        name: "likelihood_product",
        divisor: 10,
        check: simulate_likelihood,
    },
    Suite {
        module: "simulate",
        name: "dataset_determinism",
        divisor: 40,
        check: simulate_determinism,
    },
    Suite {
        module: "simulate",
        name: "functional_scale",
        divisor: 1,
        check: simulate_functional_scale,
    },
];

/// Names of every suite as `module.name`.
pub fn suite_names() -> Vec<String> {
    SUITES.iter().map(|s| format!("{}.{}", s.module, s.name)).collect()
}

pub fn run(options: &VerifyOptions) -> VerifyReport {
    let ctx = Ctx { fault: options.fault };
    let suites: Vec<SuiteReport> = SUITES
        .iter()
        .enumerate()
        .map(|(i, suite)| {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            rng.set_stream(i as u64);
            let budget = (options.cases / suite.divisor).max(1);
            let mut run = 0;
            let mut counterexample = None;
            while run < budget {
                run += 1;
                if let Err(Failure(msg)) = (suite.check)(&mut rng, &ctx) {
                    counterexample = Some(format!("case {run}: {msg}"));
                    break;
                }
            }
            SuiteReport {
                module: suite.module,
                name: suite.name,
                cases: run,
                passed: counterexample.is_none(),
                counterexample,
            }
        })
        .collect();
    VerifyReport {
        seed: options.seed,
        fault: options.fault,
        passed: suites.iter().all(|s| s.passed),
        suites,
    }
}

fn unit_point<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random()).collect()
}

fn measure_in<R: Rng>(rng: &mut R, dim: usize, lo: f64, hi: f64) -> ParticleMeasure {
    let n = rng.random_range(1..=8);
    let atoms = (0..n)
        .map(|_| {
            let x = (0..dim).map(|_| rng.random_range(lo..=hi)).collect();
            Atom::new(x, rng.random_range(0.1..=2.0))
        })
        .collect();
    ParticleMeasure::new(atoms).expect("valid atoms")
}

fn unit_measure<R: Rng>(rng: &mut R, dim: usize) -> ParticleMeasure {
    measure_in(rng, dim, 0.0, 1.0)
}

fn distance<R: Rng>(rng: &mut R) -> PointDistance {
    [
        PointDistance::Euclidean,
        PointDistance::Manhattan,
        PointDistance::Chebyshev,
    ][rng.random_range(0..3)]
}

fn simple_test<R: Rng>(rng: &mut R, dim: usize, trainable: bool) -> TestFunction {
    let r = 1.0 / (dim as f64).sqrt();
    match rng.random_range(0..4) {
        0 => TestFunction::monomial((0..dim).map(|_| rng.random_range(0..=3)).collect()),
        1 => TestFunction::exp((0..dim).map(|_| rng.random_range(-r..=r)).collect(), trainable),
        2 => TestFunction::projection(rng.random_range(0..dim), dim),
        _ => TestFunction::bump(
            unit_point(rng, dim),
            rng.random_range(0.5..=3.0),
            distance(rng),
            trainable,
        ),
    }
    .expect("valid test function")
}

fn random_test<R: Rng>(rng: &mut R, dim: usize) -> TestFunction {
    if rng.random_bool(0.2) {
        let (a, b) = (simple_test(rng, dim, false), simple_test(rng, dim, false));
        product(&a, &b).expect("same dimension")
    } else {
        simple_test(rng, dim, false)
    }
}

/// Exp or bump test functions with trainable parameters.
fn trainable_test<R: Rng>(rng: &mut R, dim: usize) -> TestFunction {
    let r = 1.0 / (dim as f64).sqrt();
    if rng.random_bool(0.5) {
        TestFunction::exp((0..dim).map(|_| rng.random_range(-r..=r)).collect(), true)
    } else {
        TestFunction::bump(unit_point(rng, dim), rng.random_range(0.5..=3.0), distance(rng), true)
    }
    .expect("valid test function")
}

fn activation<R: Rng>(rng: &mut R) -> Activation {
    if rng.random_bool(0.5) {
        Activation::Tanh
    } else {
        Activation::Logistic
    }
}

/// A head with every parameter (thresholds included) drawn from `[-1, 1]`.
fn random_head<R: Rng>(rng: &mut R, inputs: usize, act: Activation) -> OutputNetwork {
    let depth = rng.random_range(0..=2);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=6)).collect();
    let mut net = OutputNetwork::zeros(inputs, &hidden, 1, act).expect("positive widths");
    let values: Vec<f64> = (0..net.param_count()).map(|_| rng.random_range(-1.0..=1.0)).collect();
    net.set_params(&values).expect("matching length");
    net
}

fn random_dnn<R: Rng>(rng: &mut R, dim: usize, trainable: bool) -> DistributionalNetwork {
    let n = rng.random_range(1..=4);
    let tests = (0..n)
        .map(|_| {
            if trainable && rng.random_bool(0.6) {
                trainable_test(rng, dim)
            } else {
                random_test(rng, dim)
            }
        })
        .collect();
    let channel = if rng.random_bool(0.5) {
        MassChannel::Arctan
    } else {
        MassChannel::Ratio
    };
    let act = activation(rng);
    DistributionalNetwork::new(channel, tests, random_head(rng, n + 1, act)).expect("consistent shapes")
}

fn random_practical<R: Rng>(rng: &mut R, dim: usize) -> PracticalNetwork {
    let act = activation(rng);
    let mut net = PracticalNetwork::zeros(
        dim,
        rng.random_range(1..=5),
        rng.random_range(1..=3),
        rng.random_range(1..=5),
        act,
    )
    .expect("positive widths");
    let values: Vec<f64> = (0..net.param_count()).map(|_| rng.random_range(-1.0..=1.0)).collect();
    net.set_params(&values).expect("matching length");
    net
}

fn random_metric<R: Rng>(rng: &mut R, dim: usize) -> SspMetric {
    let n = rng.random_range(1..=16);
    let family = (0..n).map(|_| random_test(rng, dim)).collect();
    let channel = if rng.random_bool(0.5) {
        MassChannel::Arctan
    } else {
        MassChannel::Ratio
    };
    SspMetric::new(family, channel).expect("common dimension")
}

fn random_order<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

fn measure_linearity(rng: &mut ChaCha8Rng, _: &Ctx) -> Outcome {
    let dim = rng.random_range(1..=3);
    let mu = unit_measure(rng, dim);
    let (g1, g2) = (random_test(rng, dim), random_test(rng, dim));
    let (a, b) = (rng.random_range(-2.0..=2.0), rng.random_range(-2.0..=2.0));
    let normalized = rng.random_bool(0.5);
    let combined = mu.integrate_with(|x| Ok(a * g1.eval(x)? + b * g2.eval(x)?), normalized)?;
    let (i1, i2) = (mu.integrate(&g1, normalized)?, mu.integrate(&g2, normalized)?);
    let scale = (a * i1).abs() + (b * i2).abs();
    if (combined - (a * i1 + b * i2)).abs() > 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return fail(format!(
            "g1={g1}, g2={g2}, a={a}, b={b}: {combined} vs {}",
            a * i1 + b * i2
        ));
    }
    Ok(())
}

fn measure_scale_invariance(rng: &mut ChaCha8Rng, _: &Ctx) -> Outcome {
    let dim = rng.random_range(1..=3);
    let mu = unit_measure(rng, dim);
    let g = random_test(rng, dim);
    let base = mu.integrate(&g, true)?;
    let pow2 = 2f64.powi(rng.random_range(-20..=20));
    let exact = mu.scaled(pow2)?.integrate(&g, true)?;
    if exact.to_bits() != base.to_bits() {
        return fail(format!("g={g}, c={pow2}: {exact} != {base}"));
    }
    let c = 10f64.powf(rng.random_range(-3.0..=3.0));
    let general = mu.scaled(c)?.integrate(&g, true)?;
    if rel_gap(general, base) > 1e-12 {
        return fail(format!("g={g}, c={c}: {general} vs {base}"));
    }
    Ok(())
}

fn measure_mass_homogeneity(rng: &mut ChaCha8Rng, _: &Ctx) -> Outcome {
    let mu = unit_measure(rng, 2);
    let c = 10f64.powf(rng.random_range(-3.0..=3.0));
    let (scaled, direct) = (mu.scaled(c)?.total_mass(), c * mu.total_mass());
    if rel_gap(scaled, direct) > 1e-12 {
        return fail(format!("c={c}: {scaled} vs {direct}"));
    }
    Ok(())
}

fn measure_mgf(rng: &mut ChaCha8Rng, _: &Ctx) -> Outcome {
    let dim = rng.random_range(1..=3);
    let mu = measure_in(rng, dim, -2.0, 2.0);
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..=2.0)).collect();
    let via_mgf = mu.mgf(&v)?;
    let via_integral = mu.integrate(&TestFunction::exp(v.clone(), false)?, false)?;
    if via_mgf.to_bits() != via_integral.to_bits() {
        return fail(format!("v={v:?}: {via_mgf} != {via_integral}"));
    }
    Ok(())
}

fn measure_atom_order(rng: &mut ChaCha8Rng, _: &Ctx) -> Outcome {
    let dim = rng.random_range(1..=3);
    let mu = unit_measure(rng, dim);
    let nu = mu.permuted(&random_order(rng, mu.len()))?;
    let g = random_test(rng, dim);
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let pairs = [
        (mu.total_mass(), nu.total_mass()),
        (mu.integrate(&g, true)?, nu.integrate(&g, true)?),
        (mu.integrate(&g, false)?, nu.integrate(&g, false)?),
        (mu.mgf(&v)?, nu.mgf(&v)?),
    ];
    for (a, b) in pairs {
        if rel_gap(a, b) > 1e-12 {
            return fail(format!("g={g}: {a} vs {b} after permutation"));
        }
    }
    Ok(())
}

fn testfn_bounded(rng: &mut ChaCha8Rng, _: &Ctx) -> Outcome {
    let dim = rng.random_range(1..=4);
    let g = random_test(rng, dim);
    let p = unit_point(rng, dim);
    let value = g.eval(&p)?;
    if value.abs() > g.bound() {
        return fail(format!("{g} at {p:?}: |{value}| > {}", g.bound()));
    }
    Ok(())
}

/// Whether central differences with step `h` stay on one smooth piece of `g` at `p`.
fn smooth_near(g: &TestFunction, p: &[f64], h: f64) -> bool {
    match g {
        TestFunction::Bump {
            center,
            scale,
            distance,
            ..
        } => {
            let margin = 1e3 * h;
            let gaps: Vec<f64> = p.iter().zip(center).map(|(a, b)| (a - b).abs()).collect();
            if gaps.iter().any(|&d| d < margin) {
                return false;
            }
            if *distance == PointDistance::Chebyshev && gaps.len() > 1 {
                let mut sorted = gaps.clone();
                sorted.sort_by(|a, b| b.total_cmp(a));
                if sorted[0] - sorted[1] < margin {
                    return false;
                }
            }
            (1.0 - scale * distance.distance(p, center)).abs() > margin * scale.max(1.0)
        }
        TestFunction::Product { left, right } => smooth_near(left, p, h) && smooth_near(right, p, h),
        _ => true,
    }
}

fn testfn_grad(rng: &mut ChaCha8Rng, _: &Ctx) -> Outcome {
    let h = 1e-5;
    let dim = rng.random_range(1..=3);
    let g = trainable_test(rng, dim);
    let p = unit_point(rng, dim);
    if !smooth_near(&g, &p, h) {
        return Ok(());
    }
    let analytic = g.param_grad(&p)?;
    let base = g.params();
    for (i, a) in analytic.iter().enumerate() {
        let mut up = g.clone();
        let mut down = g.clone();
        let mut shifted = base.clone();
        shifted[i] = base[i] + h;
        up.set_params(&shifted)?;
        shifted[i] = base[i] - h;
        down.set_params(&shifted)?;
        let fd = (up.eval(&p)? - down.eval(&p)?) / (2.0 * h);
        let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
        if err > 1e-6 {
            return fail(format!("{g} at {p:?}, parameter {i}: analytic {a}, fd {fd}"));
        }
    }
    Ok(())
}

fn testfn_product(rng: &mut ChaCha8Rng, _: &Ctx) -> Outcome {
    let dim = rng.random_range(1..=3);
    let trainable = rng.random_bool(0.3);
    let (a, b) = (simple_test(rng, dim, trainable), simple_test(rng, dim, false));
    let ab = product(&a, &b)?;
    let p = unit_point(rng, dim);
    let (lhs, rhs) = (ab.eval(&p)?, a.eval(&p)? * b.eval(&p)?);
    if rel_gap(lhs, rhs) > 1e-14 {
        return fail(format!("({a})*({b}) at {p:?}: {lhs} vs {rhs}"));
    }
    Ok(())
}

fn testfn_mass_channel(rng: &mut ChaCha8Rng, _: &Ctx) -> Outcome {
    let m1 = 10f64.powf(rng.random_range(-3.0..=3.0));
    let m2 = m1 * (1.0 + 10f64.powf(rng.random_range(-6.0..=1.0)));
    for g0 in [MassChannel::Arctan, MassChannel::Ratio] {
        if g0.eval(m1) >= g0.eval(m2) {
            return fail(format!("{g0:?}: g0({m1}) >= g0({m2})"));
        }
    }
    Ok(())
}

/// Three points and three measures on `[0,1]^D` with a random metric.
fn triple(rng: &mut ChaCha8Rng) -> (SspMetric, [Vec<f64>; 3], [ParticleMeasure; 3]) {
    let dim = rng.random_range(1..=3);
    let metric = random_metric(rng, dim);
    let points = [unit_point(rng, dim), unit_point(rng, dim), unit_point(rng, dim)];
    let measures = [unit_measure(rng, dim), unit_measure(rng, dim), unit_measure(rng, dim)];
    (metric, points, measures)
}

fn metrics_symmetry(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Outcome {
    let (m, [x, y, _], [mu, nu, _]) = triple(rng);
    let (a, b) = (ctx.point_metric(&m, &x, &y)?, ctx.point_metric(&m, &y, &x)?);
    if a != b {
        return fail(format!("point metric {a} != {b} for {x:?}, {y:?}"));
    }
    let (a, b) = (ctx.measure_metric(&m, &mu, &nu)?, ctx.measure_metric(&m, &nu, &mu)?);
    if a != b {
        return fail(format!("measure metric {a} != {b}"));
    }
    Ok(())
}

fn metrics_identity(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Outcome {
    let (m, [x, ..], [mu, ..]) = triple(rng);
    let (a, b) = (ctx.point_metric(&m, &x, &x)?, ctx.measure_metric(&m, &mu, &mu)?);
    if a != 0.0 || b != 0.0 {
        return fail(format!("self distances {a} and {b}"));
    }
    Ok(())
}

fn metrics_triangle(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Outcome {
    let (m, [x, y, z], [mu, nu, eta]) = triple(rng);
    let (xz, xy, yz) = (
        ctx.point_metric(&m, &x, &z)?,
        ctx.point_metric(&m, &x, &y)?,
        ctx.point_metric(&m, &y, &z)?,
    );
    if xz > xy + yz + 1e-12 {
        return fail(format!("point metric: d(x,z)={xz} > d(x,y)+d(y,z)={}", xy + yz));
    }
    let (ac, ab, bc) = (
        ctx.measure_metric(&m, &mu, &eta)?,
        ctx.measure_metric(&m, &mu, &nu)?,
        ctx.measure_metric(&m, &nu, &eta)?,
    );
    if ac > ab + bc + 1e-12 {
        return fail(format!("measure metric: d(a,c)={ac} > d(a,b)+d(b,c)={}", ab + bc));
    }
    Ok(())
}

fn metrics_range(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Outcome {
    let (m, [x, y, _], [mu, nu, _]) = triple(rng);
    let d = ctx.point_metric(&m, &x, &y)?;
    if d >= 1.0 {
        return fail(format!("point metric {d} >= 1"));
    }
    let d = ctx.measure_metric(&m, &mu, &nu)?;
    if d >= 1.5 {
        return fail(format!("measure metric {d} >= 1.5"));
    }
    Ok(())
}

fn metrics_scale_pair(rng: &mut ChaCha8Rng, _: &Ctx) -> Outcome {
    let (m, _, [mu, ..]) = triple(rng);
    let c = 10f64.powf(rng.random_range(-2.0..=2.0));
    let terms = m.measure_terms(&mu, &mu.scaled(c)?)?;
    let tail: f64 = terms.terms.iter().filter(|t| t.index >= 2).map(|t| t.value).sum();
    if tail >= 1e-12 {
        return fail(format!("c={c}: normalized terms sum to {tail}"));
    }
    Ok(())
}

fn metrics_convergence(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Outcome {
    let dim = rng.random_range(1..=3);
    let metric = random_metric(rng, dim);
    let limit = measure_in(rng, dim, 0.25, 0.75);
    let directions: Vec<Vec<f64>> = limit
        .atoms()
        .iter()
        .map(|_| (0..dim).map(|_| rng.random_range(-0.25..=0.25)).collect())
        .collect();
    let distances = (0..=24)
        .map(|k| {
            let shrink = 0.5f64.powi(k);
            let atoms = limit
                .atoms()
                .iter()
                .zip(&directions)
                .map(|(a, u)| {
                    let x = a.location.iter().zip(u).map(|(x, d)| x + shrink * d).collect();
                    Atom::new(x, a.weight)
                })
                .collect();
            ctx.measure_metric(&metric, &ParticleMeasure::new(atoms)?, &limit)
        })
        .collect::<crate::Result<Vec<f64>>>()?;
    let last = *distances.last().expect("nonempty");
    if last.is_nan() || last >= 1e-3 {
        return fail(format!("final distance {last} >= 1e-3"));
    }
    if let Some(k) = (12..distances.len()).find(|&k| distances[k] > distances[k - 1]) {
        return fail(format!("distance increases at step {k}: {:?}", &distances[k - 1..=k]));
    }
    Ok(())
}

fn metrics_truncation(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Outcome {
    let (m, [x, y, _], _) = triple(rng);
    let mut previous = 0.0;
    for n in 1..=m.family().len() {
        let d = ctx.point_metric(&m.truncated(n)?, &x, &y)?;
        if d < previous {
            return fail(format!("truncation {n}: {d} < {previous}"));
        }
        previous = d;
    }
    Ok(())
}

fn nets_permutation(rng: &mut ChaCha8Rng, _: &Ctx) -> Outcome {
    let dim = rng.random_range(1..=3);
    let mu = unit_measure(rng, dim);
    let nu = mu.permuted(&random_order(rng, mu.len()))?;
    let dnn = random_dnn(rng, dim, true);
    let practical = random_practical(rng, dim);
    let pairs = [
        (dnn.forward(&mu)?, dnn.forward(&nu)?),
        (practical.forward(&mu)?, practical.forward(&nu)?),
    ];
    for (a, b) in pairs {
        if rel_gap(a, b) > 1e-12 {
            return fail(format!("{a} vs {b} after permuting {} atoms", mu.len()));
        }
    }
    Ok(())
}

fn nets_mass_scale(rng: &mut ChaCha8Rng, _: &Ctx) -> Outcome {
    let dim = rng.random_range(1..=3);
    let mu = unit_measure(rng, dim);
    let mut net = random_dnn(rng, dim, true);
    net.head_mut().mask_input(0)?;
    let base = net.forward(&mu)?;
    for c in [0.5, 2.0, 10.0] {
        let scaled = net.forward(&mu.scaled(c)?)?;
        if (scaled - base).abs() > 1e-9 {
            return fail(format!("c={c}: {scaled} vs {base}"));
        }
    }
    Ok(())
}

fn nets_deep_set(rng: &mut ChaCha8Rng, _: &Ctx) -> Outcome {
    let dim = rng.random_range(1..=3);
    let n = rng.random_range(1..=4);
    let g: Vec<TestFunction> = (0..n).map(|_| random_test(rng, dim)).collect();
    let act = activation(rng);
    let f = random_head(rng, n, act);
    let points: Vec<Vec<f64>> = (0..rng.random_range(1..=8)).map(|_| unit_point(rng, dim)).collect();
    let direct = deep_set_eval(&g, &f, &points)?;
    let counting = ParticleMeasure::counting(points)?;
    let integrals = g
        .iter()
        .map(|gk| counting.integrate(gk, false))
        .collect::<crate::Result<Vec<f64>>>()?;
    let via_measure = f.forward_scalar(&integrals)?;
    if (direct - via_measure).abs() > 1e-9 * direct.abs().max(1.0) {
        return fail(format!("deep set {direct} vs measure form {via_measure}"));
    }
    Ok(())
}

fn nets_determinism(rng: &mut ChaCha8Rng, _: &Ctx) -> Outcome {
    let dim = rng.random_range(1..=3);
    let mu = unit_measure(rng, dim);
    let dnn = random_dnn(rng, dim, true);
    let p = unit_point(rng, dim);
    let n = rng.random_range(1..=4);
    let tests = (0..n).map(|_| random_test(rng, dim)).collect();
    let act = activation(rng);
    let tnn = TopologicalNetwork::new(tests, random_head(rng, n, act))?;
    if dnn.forward(&mu)?.to_bits() != dnn.forward(&mu)?.to_bits()
        || tnn.forward(&p)?.to_bits() != tnn.forward(&p)?.to_bits()
    {
        return fail("repeated evaluation differs".into());
    }
    Ok(())
}

fn compare_gradients<M: Model>(model: &M, data: &[Labeled<M::Input>], loss: LossSpec) -> Outcome {
    let analytic = gradient(model, data, loss, GradientMode::Analytic)?;
    let fd = gradient(model, data, loss, GradientMode::FiniteDifference { h: 1e-5 })?;
    for (i, (a, f)) in analytic.iter().zip(&fd).enumerate() {
        let err = (a - f).abs() / a.abs().max(f.abs()).max(1e-6);
        if err >= 1e-4 {
            let name = model.params().name_of(i);
            return fail(format!("parameter {i} ({name}): analytic {a}, fd {f}"));
        }
    }
    Ok(())
}

fn label<R: Rng>(rng: &mut R, loss: LossSpec) -> f64 {
    match loss {
        LossSpec::Squared => rng.random_range(-1.0..=1.0),
        LossSpec::Logistic => f64::from(rng.random_range(0..=1u8)),
    }
}

fn training_gradient(rng: &mut ChaCha8Rng, _: &Ctx) -> Outcome {
    let h = 1e-5;
    let dim = rng.random_range(1..=3);
    let loss = if rng.random_bool(0.5) {
        LossSpec::Squared
    } else {
        LossSpec::Logistic
    };
    match rng.random_range(0..4) {
        0 => {
            let inputs = rng.random_range(1..=4);
            let act = activation(rng);
            let head = random_head(rng, inputs, act);
            let data: Vec<_> = (0..3)
                .map(|_| Labeled::new(unit_point(rng, inputs), label(rng, loss)))
                .collect();
            compare_gradients(&head, &data, loss)
        }
        1 => {
            let n = rng.random_range(1..=3);
            let tests: Vec<TestFunction> = (0..n).map(|_| trainable_test(rng, dim)).collect();
            let act = activation(rng);
            let net = TopologicalNetwork::new(tests.clone(), random_head(rng, n, act))?;
            let data: Vec<_> = (0..3)
                .map(|_| Labeled::new(unit_point(rng, dim), label(rng, loss)))
                .collect();
            if data.iter().any(|r| tests.iter().any(|g| !smooth_near(g, &r.input, h))) {
                return Ok(());
            }
            compare_gradients(&net, &data, loss)
        }
        2 => {
            let net = random_dnn(rng, dim, true);
            let data: Vec<_> = (0..3)
                .map(|_| Labeled::new(unit_measure(rng, dim), label(rng, loss)))
                .collect();
            let kinked = data.iter().any(|r| {
                r.input
                    .atoms()
                    .iter()
                    .any(|a| net.tests().iter().any(|g| !smooth_near(g, &a.location, h)))
            });
            if kinked {
                return Ok(());
            }
            compare_gradients(&net, &data, loss)
        }
        _ => {
            let net = random_practical(rng, dim);
            let data: Vec<_> = (0..3)
                .map(|_| Labeled::new(unit_measure(rng, dim), label(rng, loss)))
                .collect();
            compare_gradients(&net, &data, loss)
        }
    }
}

fn training_gd_monotone(rng: &mut ChaCha8Rng, _: &Ctx) -> Outcome {
    let slope = rng.random_range(-3.0..=3.0);
    let xs: Vec<f64> = (0..rng.random_range(2..=10))
        .map(|_| rng.random_range(0.1..=1.0))
        .collect();
    let data: Vec<_> = xs.iter().map(|&x| Labeled::new(vec![x], slope * x)).collect();
    let second_moment = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
    let model = OutputNetwork::linear(vec![vec![rng.random_range(-3.0..=3.0)]], Activation::Tanh)?;
    let config = TrainConfig {
        optimizer: Optimizer::GradientDescent,
        step: 0.25 / second_moment,
        iterations: 20,
        ..TrainConfig::default()
    };
    let trace = fit(model, &data, &config)?.trace;
    if let Some(t) = (1..trace.len()).find(|&t| trace[t - 1] > 0.0 && trace[t] >= trace[t - 1]) {
        return fail(format!("risk {} -> {} at iteration {t}", trace[t - 1], trace[t]));
    }
    Ok(())
}

fn small_problem(rng: &mut ChaCha8Rng) -> (DistributionalNetwork, Vec<Labeled<ParticleMeasure>>) {
    let dim = rng.random_range(1..=2);
    let net = random_dnn(rng, dim, true);
    let data = (0..8)
        .map(|_| Labeled::new(unit_measure(rng, dim), rng.random_range(-1.0..=1.0)))
        .collect();
    (net, data)
}

fn training_determinism(rng: &mut ChaCha8Rng, _: &Ctx) -> Outcome {
    let (net, data) = small_problem(rng);
    let config = TrainConfig {
        optimizer: Optimizer::Momentum { beta: 0.9 },
        step: 0.01,
        iterations: 20,
        batch_size: Some(3),
        seed: rng.random(),
        ..TrainConfig::default()
    };
    let first = fit(net.clone(), &data, &config)?;
    let second = fit(net, &data, &config)?;
    let same_trace = first
        .trace
        .iter()
        .zip(&second.trace)
        .all(|(a, b)| a.to_bits() == b.to_bits());
    if !same_trace || first.model != second.model {
        return fail(format!("seed {}: trajectories differ", config.seed));
    }
    Ok(())
}

fn training_order(rng: &mut ChaCha8Rng, _: &Ctx) -> Outcome {
    let (net, data) = small_problem(rng);
    let order = random_order(rng, data.len());
    let shuffled: Vec<_> = order.iter().map(|&i| data[i].clone()).collect();
    let config = TrainConfig {
        optimizer: Optimizer::GradientDescent,
        step: 0.05,
        iterations: 20,
        ..TrainConfig::default()
    };
    let a = fit(net.clone(), &data, &config)?;
    let b = fit(net, &shuffled, &config)?;
    for (t, (x, y)) in a.trace.iter().zip(&b.trace).enumerate() {
        if rel_gap(*x, *y) > 1e-12 {
            return fail(format!("risk at iteration {t}: {x} vs {y}"));
        }
    }
    let (pa, pb) = (a.model.params().into_values(), b.model.params().into_values());
    if let Some(i) = (0..pa.len()).find(|&i| (pa[i] - pb[i]).abs() > 1e-12 * pa[i].abs().max(1.0)) {
        return fail(format!("parameter {i}: {} vs {}", pa[i], pb[i]));
    }
    Ok(())
}

fn random_hmm<R: Rng>(rng: &mut R) -> HmmSpec {
    HmmSpec {
        initial_mean: rng.random_range(-1.0..=1.0),
        initial_sd: rng.random_range(0.0..=1.5),
        transition_coef: rng.random_range(-1.0..=1.0),
        transition_offset: rng.random_range(-1.0..=1.0),
        process_sd: rng.random_range(0.0..=1.0),
        observation_coef: rng.random_range(-1.5..=1.5),
        observation_sd: rng.random_range(0.5..=2.0),
        horizon: rng.random_range(1..=6),
        label: 0.0,
    }
}

fn simulate_positivity(rng: &mut ChaCha8Rng, _: &Ctx) -> Outcome {
    let spec = random_hmm(rng);
    let path = hmm_generate(&spec, rng.random())?;
    let m = rng.random_range(1..=200);
    let states = bootstrap_filter(&spec, &path.observations, m, rng.random(), rng.random_bool(0.5))?;
    for s in &states {
        if s.particle_count() != m {
            return fail(format!(
                "step {}: {} particles, expected {m}",
                s.step,
                s.particle_count()
            ));
        }
        if let Some(a) = s.measure.atoms().iter().find(|a| a.weight.is_nan() || a.weight <= 0.0) {
            return fail(format!("step {}: weight {}", s.step, a.weight));
        }
    }
    Ok(())
}

fn simulate_likelihood(rng: &mut ChaCha8Rng, _: &Ctx) -> Outcome {
    let spec = random_hmm(rng);
    let path = hmm_generate(&spec, rng.random())?;
    let m = rng.random_range(1..=100);
    let states = bootstrap_filter(&spec, &path.observations, m, rng.random(), false)?;
    // Normalized weights and the log of the running total, tracked independently.
    let mut share = vec![1.0 / m as f64; m];
    let mut log_total = (m as f64).ln();
    let r = spec.observation_sd;
    for (state, &y) in states.iter().zip(&path.observations) {
        let log_lik: Vec<f64> = state
            .measure
            .atoms()
            .iter()
            .map(|a| {
                let e = (y - spec.observation_coef * a.location[0]) / r;
                -0.5 * e * e - (r * (2.0 * std::f64::consts::PI).sqrt()).ln()
            })
            .collect();
        let top = log_lik.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scaled: Vec<f64> = share.iter().zip(&log_lik).map(|(s, l)| s * (l - top).exp()).collect();
        let factor: f64 = scaled.iter().sum();
        log_total += top + factor.ln();
        share = scaled.iter().map(|s| s / factor).collect();
        let mass = state.measure.total_mass();
        if rel_gap(mass, log_total.exp()) > 1e-9 {
            return fail(format!(
                "step {}: mass {mass} vs product {}",
                state.step,
                log_total.exp()
            ));
        }
    }
    Ok(())
}

fn encoded(records: &[Labeled<ParticleMeasure>]) -> crate::Result<Vec<u8>> {
    let mut out = Vec::new();
    write_records(&mut out, records)?;
    Ok(out)
}

fn simulate_determinism(rng: &mut ChaCha8Rng, _: &Ctx) -> Outcome {
    let seed = rng.random();
    let sampler = MeasureSampler::default();
    let a = make_functional_dataset(Functional::NormalizedVariance, 20, &sampler, seed)?;
    let b = make_functional_dataset(Functional::NormalizedVariance, 20, &sampler, seed)?;
    if encoded(&a)? != encoded(&b)? {
        return fail(format!("functional dataset differs for seed {seed}"));
    }
    let mut regimes = [random_hmm(rng), random_hmm(rng)];
    regimes[1].label = 1.0;
    let a = make_belief_dataset(&regimes, 3, 16, seed, true)?;
    let b = make_belief_dataset(&regimes, 3, 16, seed, true)?;
    if encoded(&a)? != encoded(&b)? {
        return fail(format!("belief dataset differs for seed {seed}"));
    }
    Ok(())
}

fn simulate_functional_scale(rng: &mut ChaCha8Rng, _: &Ctx) -> Outcome {
    let mu = MeasureSampler::default().sample(rng);
    let c = 10f64.powf(rng.random_range(-2.0..=2.0));
    let nu = mu.scaled(c)?;
    for f in [
        Functional::NormalizedMean,
        Functional::NormalizedVariance,
        Functional::ArctanMass,
        Functional::MixedMassMean,
    ] {
        let (a, b) = (f.evaluate(&mu), f.evaluate(&nu));
        let changed = (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0);
        if changed != f.depends_on_mass() {
            return fail(format!("{f:?} with c={c}: {a} vs {b}"));
        }
    }
    Ok(())
}

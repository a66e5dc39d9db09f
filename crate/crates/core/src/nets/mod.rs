//! Networks on points and on measures.
//!
//! * [`OutputNetwork`]: the dense head `R^k -> R^m`.
//! * [`TopologicalNetwork`]: `p -> f(g_1(p), ..., g_n(p))`.
//! * [`DistributionalNetwork`]: `mu -> f(g0(mu(E)), int g_2 dmu/mu(E), ..., int g_n dmu/mu(E))`.
//! * [`PracticalNetwork`]: an inner dense feature map integrated against `mu / mu(E)`,
//!   followed by an outer dense head.
//!
//! Each measure network also exposes `forward_with_grad`, the reverse-mode
//! derivative of its scalar output with respect to every trainable parameter.

mod output;
mod practical;

pub use output::{Activation, DenseLayer, ForwardTrace, OutputNetwork};
pub use practical::PracticalNetwork;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::measure::ParticleMeasure;
use crate::params::{split_params, ParamVector};
use crate::sum::ordered_sum;
use crate::testfn::{MassChannel, TestFunction};

fn common_dim(tests: &[TestFunction]) -> Result<Option<usize>> {
    let Some(first) = tests.first() else {
        return Ok(None);
    };
    for g in tests {
        check_dim(first.dim(), g.dim())?;
    }
    Ok(Some(first.dim()))
}

fn tests_params(tests: &[TestFunction], out: &mut ParamVector) {
    for (i, g) in tests.iter().enumerate() {
        if g.is_trainable() {
            out.push(format!("tests.{i}"), &g.params());
        }
    }
}

fn load_tests_and_head(tests: &mut [TestFunction], head: &mut OutputNetwork, values: &[f64]) -> Result<()> {
    let mut lens: Vec<usize> = tests.iter().map(TestFunction::param_count).collect();
    lens.push(head.param_count());
    let chunks = split_params(values, &lens)?;
    for (g, chunk) in tests.iter_mut().zip(&chunks) {
        g.set_params(chunk)?;
    }
    head.set_params(chunks[chunks.len() - 1])
}

/// `p -> f(g_1(p), ..., g_n(p))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTopological")]
pub struct TopologicalNetwork {
    tests: Vec<TestFunction>,
    head: OutputNetwork,
}

#[derive(Deserialize)]
struct RawTopological {
    tests: Vec<TestFunction>,
    head: OutputNetwork,
}

impl TryFrom<RawTopological> for TopologicalNetwork {
    type Error = Error;
    fn try_from(raw: RawTopological) -> Result<Self> {
        Self::new(raw.tests, raw.head)
    }
}

impl TopologicalNetwork {
    pub fn new(tests: Vec<TestFunction>, head: OutputNetwork) -> Result<Self> {
        if common_dim(&tests)?.is_none() {
            return Err(Error::Shape(
                "a topological network needs at least one test function".into(),
            ));
        }
        check_dim(tests.len(), head.inputs())?;
        check_dim(1, head.outputs())?;
        Ok(Self { tests, head })
    }

    pub fn dim(&self) -> usize {
        self.tests[0].dim()
    }

    pub fn tests(&self) -> &[TestFunction] {
        &self.tests
    }

    pub fn head(&self) -> &OutputNetwork {
        &self.head
    }

    pub fn features(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.tests.iter().map(|g| g.eval(p)).collect()
    }

    pub fn forward(&self, p: &[f64]) -> Result<f64> {
        self.head.forward_scalar(&self.features(p)?)
    }

    pub fn forward_with_grad(&self, p: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim(self.dim(), p.len())?;
        let mut features = Vec::with_capacity(self.tests.len());
        let mut test_grads = Vec::with_capacity(self.tests.len());
        for g in &self.tests {
            let (v, grad) = g.value_and_grad(p)?;
            features.push(v);
            test_grads.push(grad);
        }
        let trace = self.head.forward_trace(&features)?;
        let (head_grad, d_features) = self.head.backward(&trace, &[1.0]);
        let mut grad = Vec::with_capacity(self.param_count());
        for (tg, d) in test_grads.iter().zip(&d_features) {
            grad.extend(tg.iter().map(|x| x * d));
        }
        grad.extend(head_grad);
        Ok((trace.output[0], grad))
    }

    pub fn param_count(&self) -> usize {
        self.tests.iter().map(TestFunction::param_count).sum::<usize>() + self.head.param_count()
    }

    pub fn params(&self) -> ParamVector {
        let mut p = ParamVector::new();
        tests_params(&self.tests, &mut p);
        p.append("head", self.head.params());
        p
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        load_tests_and_head(&mut self.tests, &mut self.head, values)
    }

    pub fn constrain(&mut self) {
        self.tests.iter_mut().for_each(TestFunction::constrain);
    }
}

/// `mu -> f(g0(mu(E)), int g_2 dmu/mu(E), ..., int g_n dmu/mu(E))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistributional")]
pub struct DistributionalNetwork {
    mass_channel: MassChannel,
    tests: Vec<TestFunction>,
    head: OutputNetwork,
}

#[derive(Deserialize)]
struct RawDistributional {
    mass_channel: MassChannel,
    tests: Vec<TestFunction>,
    head: OutputNetwork,
}

impl TryFrom<RawDistributional> for DistributionalNetwork {
    type Error = Error;
    fn try_from(raw: RawDistributional) -> Result<Self> {
        Self::new(raw.mass_channel, raw.tests, raw.head)
    }
}

impl DistributionalNetwork {
    /// The head reads `1 + tests.len()` inputs: the mass channel first.
    pub fn new(mass_channel: MassChannel, tests: Vec<TestFunction>, head: OutputNetwork) -> Result<Self> {
        common_dim(&tests)?;
        check_dim(tests.len() + 1, head.inputs())?;
        check_dim(1, head.outputs())?;
        Ok(Self {
            mass_channel,
            tests,
            head,
        })
    }

    pub fn mass_channel(&self) -> MassChannel {
        self.mass_channel
    }

    pub fn tests(&self) -> &[TestFunction] {
        &self.tests
    }

    pub fn head(&self) -> &OutputNetwork {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut OutputNetwork {
        &mut self.head
    }

    fn check_measure(&self, mu: &ParticleMeasure) -> Result<()> {
        if let Some(g) = self.tests.first() {
            check_dim(g.dim(), mu.dim())?;
        }
        Ok(())
    }

    /// The head input `(g0(mu(E)), int g_2 dmu/mu(E), ...)`.
    pub fn features(&self, mu: &ParticleMeasure) -> Result<Vec<f64>> {
        self.check_measure(mu)?;
        let mut z = Vec::with_capacity(self.tests.len() + 1);
        z.push(self.mass_channel.eval(mu.total_mass()));
        for g in &self.tests {
            z.push(mu.integrate(g, true)?);
        }
        Ok(z)
    }

    pub fn forward(&self, mu: &ParticleMeasure) -> Result<f64> {
        self.head.forward_scalar(&self.features(mu)?)
    }

    pub fn forward_with_grad(&self, mu: &ParticleMeasure) -> Result<(f64, Vec<f64>)> {
        self.check_measure(mu)?;
        let mass = mu.total_mass();
        let mut features = Vec::with_capacity(self.tests.len() + 1);
        features.push(self.mass_channel.eval(mass));
        let mut test_grads = Vec::with_capacity(self.tests.len());
        for g in &self.tests {
            features.push(mu.integrate(g, true)?);
            let width = g.param_count();
            test_grads.push(if width == 0 {
                Vec::new()
            } else {
                mu.integrate_vec(width, |x| Ok(g.value_and_grad(x)?.1), true)?
            });
        }
        let trace = self.head.forward_trace(&features)?;
        let (head_grad, d_features) = self.head.backward(&trace, &[1.0]);
        let mut grad = Vec::with_capacity(self.param_count());
        for (tg, d) in test_grads.iter().zip(&d_features[1..]) {
            grad.extend(tg.iter().map(|x| x * d));
        }
        grad.extend(head_grad);
        Ok((trace.output[0], grad))
    }

    pub fn param_count(&self) -> usize {
        self.tests.iter().map(TestFunction::param_count).sum::<usize>() + self.head.param_count()
    }

    pub fn params(&self) -> ParamVector {
        let mut p = ParamVector::new();
        tests_params(&self.tests, &mut p);
        p.append("head", self.head.params());
        p
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        load_tests_and_head(&mut self.tests, &mut self.head, values)
    }

    pub fn constrain(&mut self) {
        self.tests.iter_mut().for_each(TestFunction::constrain);
    }
}

/// `f(sum_i g(x_i))` for a vector of test functions `g`.
pub fn deep_set_eval(g: &[TestFunction], f: &OutputNetwork, points: &[Vec<f64>]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("deep set needs at least one point".into()));
    }
    check_dim(g.len(), f.inputs())?;
    let sums = g
        .iter()
        .map(|gk| {
            let terms = points.iter().map(|x| gk.eval(x)).collect::<Result<Vec<f64>>>()?;
            Ok(ordered_sum(terms))
        })
        .collect::<Result<Vec<f64>>>()?;
    f.forward_scalar(&sums)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    fn pass_through(inputs: usize, coord: usize) -> OutputNetwork {
        let mut row = vec![0.0; inputs];
        row[coord] = 1.0;
        OutputNetwork::linear(vec![row], Activation::Tanh).unwrap()
    }

    #[test]
    fn hornik_examples() {
        let zero = OutputNetwork::hornik(
            vec![vec![1.0], vec![2.0]],
            vec![0.1, 0.2],
            vec![vec![0.0, 0.0]],
            Activation::Tanh,
        )
        .unwrap();
        for z in [-3.0, 0.0, 1.7] {
            assert_eq!(zero.forward(&[z]).unwrap(), vec![0.0]);
        }
        let one = OutputNetwork::hornik(vec![vec![1.0]], vec![0.0], vec![vec![1.0]], Activation::Tanh).unwrap();
        assert_eq!(one.forward(&[0.0]).unwrap(), vec![0.0]);
        let two = OutputNetwork::hornik(
            vec![vec![1.0], vec![-1.0]],
            vec![0.0, 0.0],
            vec![vec![0.5, 0.5]],
            Activation::Tanh,
        )
        .unwrap();
        assert_eq!(two.forward(&[1.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn hornik_shape_mismatch() {
        let net = OutputNetwork::hornik(vec![vec![1.0, 2.0]], vec![0.0], vec![vec![1.0]], Activation::Tanh).unwrap();
        assert!(net.forward(&[1.0]).is_err());
        assert!(OutputNetwork::hornik(vec![vec![1.0]], vec![0.0, 1.0], vec![vec![1.0]], Activation::Tanh).is_err());
    }

    #[test]
    fn tnn_examples() {
        let pi1 = TestFunction::projection(0, 2).unwrap();
        let net = TopologicalNetwork::new(vec![pi1], pass_through(1, 0)).unwrap();
        assert_eq!(net.forward(&[0.3, 0.9]).unwrap(), 0.3);

        // z2 - z1^2 needs a nonlinear head; check the composition through features.
        let tests = vec![
            TestFunction::monomial(vec![1]).unwrap(),
            TestFunction::monomial(vec![2]).unwrap(),
        ];
        let net = TopologicalNetwork::new(tests, pass_through(2, 1)).unwrap();
        let z = net.features(&[0.4]).unwrap();
        assert!((z[1] - z[0] * z[0]).abs() < 1e-15);

        let constant = OutputNetwork::hornik(vec![vec![0.0]], vec![-100.0], vec![vec![2.0]], Activation::Tanh).unwrap();
        let net = TopologicalNetwork::new(vec![TestFunction::monomial(vec![1]).unwrap()], constant).unwrap();
        for p in [0.0, 0.3, 1.0] {
            assert_eq!(net.forward(&[p]).unwrap(), 2.0);
        }
    }

    #[test]
    fn tnn_domain_errors_propagate() {
        let net = TopologicalNetwork::new(vec![TestFunction::monomial(vec![1]).unwrap()], pass_through(1, 0)).unwrap();
        assert!(matches!(net.forward(&[1.5]), Err(Error::OutsideUnitBox { .. })));
    }

    #[test]
    fn dnn_mass_channel_pass_through() {
        let net = DistributionalNetwork::new(MassChannel::Arctan, vec![], pass_through(1, 0)).unwrap();
        let mu = ParticleMeasure::from_scalar_atoms(&[(0.2, 0.25), (0.9, 0.75)]).unwrap();
        assert_eq!(net.forward(&mu).unwrap(), FRAC_PI_4);
    }

    #[test]
    fn dnn_variance_features() {
        let tests = vec![
            TestFunction::monomial(vec![1]).unwrap(),
            TestFunction::monomial(vec![2]).unwrap(),
        ];
        let net = DistributionalNetwork::new(MassChannel::Arctan, tests, pass_through(3, 0)).unwrap();
        let mu = ParticleMeasure::from_scalar_atoms(&[(0.2, 0.3), (0.7, 0.7)]).unwrap();
        let z = net.features(&mu).unwrap();
        assert_eq!(z[0], FRAC_PI_4);
        assert!((z[1] - 0.55).abs() < 1e-15);
        assert!((z[2] - 0.355).abs() < 1e-15);
        assert!((z[2] - z[1] * z[1] - 0.0525).abs() < 1e-15);
    }

    #[test]
    fn dnn_rejects_mismatched_head() {
        let tests = vec![TestFunction::monomial(vec![1]).unwrap()];
        assert!(DistributionalNetwork::new(MassChannel::Arctan, tests, pass_through(1, 0)).is_err());
    }

    #[test]
    fn deep_set_examples() {
        let one = vec![TestFunction::constant_one(1)];
        let pts = vec![vec![0.1], vec![0.5], vec![0.9]];
        assert_eq!(deep_set_eval(&one, &pass_through(1, 0), &pts).unwrap(), 3.0);
        let id = vec![TestFunction::monomial(vec![1]).unwrap()];
        let got = deep_set_eval(&id, &pass_through(1, 0), &[vec![0.2], vec![0.7]]).unwrap();
        assert!((got - 0.9).abs() < 1e-15);
        assert_eq!(
            deep_set_eval(&id, &pass_through(1, 0), &[vec![0.7], vec![0.2]]).unwrap(),
            got
        );
        assert!(deep_set_eval(&id, &pass_through(1, 0), &[]).is_err());
    }

    #[test]
    fn mask_input_removes_dependence() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
        let mut net = OutputNetwork::random(3, &[5], 1, Activation::Tanh, &mut rng).unwrap();
        net.mask_input(0).unwrap();
        let a = net.forward(&[0.1, 0.4, 0.5]).unwrap();
        let b = net.forward(&[7.0, 0.4, 0.5]).unwrap();
        assert_eq!(a, b);
    }
}

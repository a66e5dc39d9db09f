//! Empirical risk minimization.
//!
//! The risk of a predictor `f` on labelled data `(x_i, y_i)` is the mean loss
//! `(1/n) sum_i r(f(x_i), y_i)`. [`fit`] minimizes it over every trainable
//! parameter with full-batch (or mini-batch) gradient descent, optionally with
//! heavy-ball momentum. Gradients come from each network's hand-written reverse
//! pass, or from central finite differences when configured.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Labeled, Record};
use crate::error::{Error, Result};
use crate::measure::ParticleMeasure;
use crate::nets::{Activation, DistributionalNetwork, OutputNetwork, PracticalNetwork, TopologicalNetwork};
use crate::params::ParamVector;
use crate::sum::Neumaier;
use crate::testfn::{MassChannel, TestFunction};

/// Risk above this value aborts training.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpec {
    /// `(y_hat - y)^2`.
    #[default]
    Squared,
    /// `log(1 + exp(y_hat)) - y y_hat` for labels in `{0, 1}`; `y_hat` is a logit.
    Logistic,
}

impl LossSpec {
    pub fn value(&self, prediction: f64, label: f64) -> f64 {
        match self {
            LossSpec::Squared => {
                let e = prediction - label;
                e * e
            }
            LossSpec::Logistic => {
                let softplus = prediction.max(0.0) + (-prediction.abs()).exp().ln_1p();
                (softplus - label * prediction).max(0.0)
            }
        }
    }

    /// `d r / d y_hat`.
    pub fn derivative(&self, prediction: f64, label: f64) -> f64 {
        match self {
            LossSpec::Squared => 2.0 * (prediction - label),
            LossSpec::Logistic => Activation::Logistic.apply(prediction) - label,
        }
    }
}

/// A scalar predictor with a flat vector of trainable parameters.
pub trait Model: Clone {
    type Input;

    fn predict(&self, input: &Self::Input) -> Result<f64>;

    /// Prediction together with its gradient in the layout of [`Model::params`].
    fn predict_with_grad(&self, input: &Self::Input) -> Result<(f64, Vec<f64>)>;

    fn params(&self) -> ParamVector;

    fn set_params(&mut self, values: &[f64]) -> Result<()>;

    /// Projects parameters back onto their admissible set after an update.
    fn constrain(&mut self) {}
}

impl Model for OutputNetwork {
    type Input = Vec<f64>;

    fn predict(&self, input: &Vec<f64>) -> Result<f64> {
        self.forward_scalar(input)
    }

    fn predict_with_grad(&self, input: &Vec<f64>) -> Result<(f64, Vec<f64>)> {
        crate::error::check_dim(1, self.outputs())?;
        let trace = self.forward_trace(input)?;
        let (grad, _) = self.backward(&trace, &[1.0]);
        Ok((trace.output[0], grad))
    }

    fn params(&self) -> ParamVector {
        OutputNetwork::params(self)
    }

    fn set_params(&mut self, values: &[f64]) -> Result<()> {
        OutputNetwork::set_params(self, values)
    }
}

impl Model for TopologicalNetwork {
    type Input = Vec<f64>;

    fn predict(&self, input: &Vec<f64>) -> Result<f64> {
        self.forward(input)
    }

    fn predict_with_grad(&self, input: &Vec<f64>) -> Result<(f64, Vec<f64>)> {
        self.forward_with_grad(input)
    }

    fn params(&self) -> ParamVector {
        TopologicalNetwork::params(self)
    }

    fn set_params(&mut self, values: &[f64]) -> Result<()> {
        TopologicalNetwork::set_params(self, values)
    }

    fn constrain(&mut self) {
        TopologicalNetwork::constrain(self)
    }
}

impl Model for DistributionalNetwork {
    type Input = ParticleMeasure;

    fn predict(&self, input: &ParticleMeasure) -> Result<f64> {
        self.forward(input)
    }

    fn predict_with_grad(&self, input: &ParticleMeasure) -> Result<(f64, Vec<f64>)> {
        self.forward_with_grad(input)
    }

    fn params(&self) -> ParamVector {
        DistributionalNetwork::params(self)
    }

    fn set_params(&mut self, values: &[f64]) -> Result<()> {
        DistributionalNetwork::set_params(self, values)
    }

    fn constrain(&mut self) {
        DistributionalNetwork::constrain(self)
    }
}

impl Model for PracticalNetwork {
    type Input = ParticleMeasure;

    fn predict(&self, input: &ParticleMeasure) -> Result<f64> {
        self.forward(input)
    }

    fn predict_with_grad(&self, input: &ParticleMeasure) -> Result<(f64, Vec<f64>)> {
        self.forward_with_grad(input)
    }

    fn params(&self) -> ParamVector {
        PracticalNetwork::params(self)
    }

    fn set_params(&mut self, values: &[f64]) -> Result<()> {
        PracticalNetwork::set_params(self, values)
    }
}

/// Mean loss over `data`.
pub fn empirical_risk<M: Model>(model: &M, data: &[Labeled<M::Input>], loss: LossSpec) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empirical risk needs a nonempty dataset".into()));
    }
    let mut acc = Neumaier::new();
    for (i, rec) in data.iter().enumerate() {
        let pred = model.predict(&rec.input).map_err(|e| e.at_record(i))?;
        acc.add(loss.value(pred, rec.label));
    }
    Ok(acc.value() / data.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GradientMode {
    #[default]
    Analytic,
    FiniteDifference {
        h: f64,
    },
}

/// Risk and its gradient on `batch`, analytic path.
fn analytic_risk_gradient<M: Model, B: AsRef<Labeled<M::Input>>>(
    model: &M,
    batch: &[B],
    loss: LossSpec,
    n_params: usize,
) -> Result<(f64, Vec<f64>)> {
    let mut risk = Neumaier::new();
    let mut acc = vec![Neumaier::new(); n_params];
    for (i, rec) in batch.iter().enumerate() {
        let rec = rec.as_ref();
        let (pred, grad) = model.predict_with_grad(&rec.input).map_err(|e| e.at_record(i))?;
        risk.add(loss.value(pred, rec.label));
        let d = loss.derivative(pred, rec.label);
        for (a, g) in acc.iter_mut().zip(grad) {
            a.add(d * g);
        }
    }
    let n = batch.len() as f64;
    Ok((risk.value() / n, acc.iter().map(|a| a.value() / n).collect()))
}

fn batch_risk<M: Model, B: AsRef<Labeled<M::Input>>>(model: &M, batch: &[B], loss: LossSpec) -> Result<f64> {
    let mut acc = Neumaier::new();
    for (i, rec) in batch.iter().enumerate() {
        let rec = rec.as_ref();
        let pred = model.predict(&rec.input).map_err(|e| e.at_record(i))?;
        acc.add(loss.value(pred, rec.label));
    }
    Ok(acc.value() / batch.len() as f64)
}

fn fd_risk_gradient<M: Model, B: AsRef<Labeled<M::Input>>>(
    model: &M,
    batch: &[B],
    loss: LossSpec,
    h: f64,
) -> Result<(f64, Vec<f64>)> {
    let base = model.params().into_values();
    let mut probe = model.clone();
    let mut grad = Vec::with_capacity(base.len());
    let mut shifted = base.clone();
    for i in 0..base.len() {
        shifted[i] = base[i] + h;
        probe.set_params(&shifted)?;
        let up = batch_risk(&probe, batch, loss)?;
        shifted[i] = base[i] - h;
        probe.set_params(&shifted)?;
        let down = batch_risk(&probe, batch, loss)?;
        shifted[i] = base[i];
        grad.push((up - down) / (2.0 * h));
    }
    Ok((batch_risk(model, batch, loss)?, grad))
}

fn risk_gradient<M: Model, B: AsRef<Labeled<M::Input>>>(
    model: &M,
    batch: &[B],
    loss: LossSpec,
    mode: GradientMode,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("gradient needs a nonempty batch".into()));
    }
    let params = model.params();
    let (risk, grad) = match mode {
        GradientMode::Analytic => analytic_risk_gradient(model, batch, loss, params.len())?,
        GradientMode::FiniteDifference { h } => fd_risk_gradient(model, batch, loss, h)?,
    };
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient {
            index,
            name: params.name_of(index),
        });
    }
    Ok((risk, grad))
}

/// Gradient of the mean risk on `batch` with respect to [`Model::params`].
pub fn gradient<M: Model>(
    model: &M,
    batch: &[Labeled<M::Input>],
    loss: LossSpec,
    mode: GradientMode,
) -> Result<Vec<f64>> {
    Ok(risk_gradient(model, batch, loss, mode)?.1)
}

impl<I> AsRef<Labeled<I>> for Labeled<I> {
    fn as_ref(&self) -> &Labeled<I> {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    GradientDescent,
    /// Heavy ball: `v <- beta v + g`, `theta <- theta - step v`.
    Momentum {
        beta: f64,
    },
    /// Bias-corrected first and second moment estimates scale each coordinate's step.
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub step: f64,
    pub iterations: usize,
    /// `None` for full-batch gradients.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub gradient: GradientMode,
    #[serde(default)]
    pub loss: LossSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Momentum { beta: 0.9 },
            step: 0.01,
            iterations: 1000,
            batch_size: None,
            seed: 0,
            gradient: GradientMode::Analytic,
            loss: LossSpec::Squared,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "step size must be positive, got {}",
                self.step
            )));
        }
        if let Optimizer::Momentum { beta } = self.optimizer {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::InvalidArgument(format!(
                    "momentum must lie in [0, 1), got {beta}"
                )));
            }
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps.is_nan() || eps <= 0.0 {
                return Err(Error::InvalidArgument(
                    "adam needs beta1, beta2 in [0, 1) and eps > 0".into(),
                ));
            }
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if let GradientMode::FiniteDifference { h } = self.gradient {
            if !(1e-8..=1e-3).contains(&h) {
                return Err(Error::InvalidArgument(format!(
                    "finite-difference step must lie in [1e-8, 1e-3], got {h}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome<M> {
    pub model: M,
    /// `trace[t]` is the risk on the full dataset after `t` updates.
    pub trace: Vec<f64>,
}

/// Minimizes the empirical risk of `model` on `data`.
pub fn fit<M: Model>(model: M, data: &[Labeled<M::Input>], config: &TrainConfig) -> Result<FitOutcome<M>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training data must be nonempty".into()));
    }
    let mut model = model;
    let mut params = model.params().into_values();
    let mut velocity = vec![0.0; params.len()];
    let mut second = vec![0.0; params.len()];
    let mut trace = Vec::with_capacity(config.iterations + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = data.len();
    let full_batch = config.batch_size.is_none_or(|b| b >= data.len());

    let check = |iteration: usize, risk: f64, trace: &Vec<f64>| -> Result<()> {
        if !risk.is_finite() || risk > DIVERGENCE_THRESHOLD {
            return Err(Error::Diverged {
                iteration,
                risk,
                trace: trace.clone(),
            });
        }
        Ok(())
    };

    for iteration in 0..config.iterations {
        let grad = if full_batch {
            let (risk, grad) = risk_gradient(&model, data, config.loss, config.gradient)?;
            trace.push(risk);
            check(iteration, risk, &trace)?;
            grad
        } else {
            let risk = empirical_risk(&model, data, config.loss)?;
            trace.push(risk);
            check(iteration, risk, &trace)?;
            let size = config.batch_size.unwrap_or(data.len());
            if cursor + size > data.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let batch: Vec<&Labeled<M::Input>> = order[cursor..cursor + size].iter().map(|&i| &data[i]).collect();
            cursor += size;
            risk_gradient(&model, &batch, config.loss, config.gradient)?.1
        };
        match config.optimizer {
            Optimizer::GradientDescent => {
                for (p, g) in params.iter_mut().zip(&grad) {
                    *p -= config.step * g;
                }
            }
            Optimizer::Momentum { beta } => {
                for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                    *v = beta * *v + g;
                    *p -= config.step * *v;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let t = (iteration + 1) as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, m), v), g) in params
                    .iter_mut()
                    .zip(velocity.iter_mut())
                    .zip(second.iter_mut())
                    .zip(&grad)
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= config.step * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
        model.set_params(&params)?;
        model.constrain();
        params = model.params().into_values();
    }
    let risk = empirical_risk(&model, data, config.loss)?;
    trace.push(risk);
    check(config.iterations, risk, &trace)?;
    Ok(FitOutcome { model, trace })
}

#[derive(Debug, Clone)]
pub struct PowerSelection {
    pub powers: Vec<u32>,
    pub model: DistributionalNetwork,
    pub heldout_risk: f64,
    /// Held-out risk of every candidate, in the order they were tried.
    pub scores: Vec<(Vec<u32>, f64)>,
}

/// Discrete search over monomial power tuples `(m_1, ..., m_k)` on `[0,1]`.
///
/// Each candidate defines a distributional network with tests `x^{m_1}, ..., x^{m_k}`,
/// an arctan mass channel and a head with the given hidden widths, initialized
/// from `config.seed`. The candidate with the lowest held-out risk after
/// [`fit`] wins; ties go to the lexicographically smallest tuple.
pub fn select_powers(
    train: &[Record],
    heldout: &[Record],
    candidates: &[Vec<u32>],
    hidden: &[usize],
    config: &TrainConfig,
) -> Result<PowerSelection> {
    let arity = candidates
        .first()
        .ok_or_else(|| Error::InvalidArgument("at least one candidate power tuple is required".into()))?
        .len();
    if arity == 0 || candidates.iter().any(|c| c.len() != arity) {
        return Err(Error::InvalidArgument(
            "candidate power tuples must share a positive arity".into(),
        ));
    }
    let mut ordered: Vec<&Vec<u32>> = candidates.iter().collect();
    ordered.sort();

    let mut best: Option<PowerSelection> = None;
    let mut scores = Vec::with_capacity(candidates.len());
    for powers in ordered {
        let tests = powers
            .iter()
            .map(|&k| TestFunction::monomial(vec![k]))
            .collect::<Result<Vec<_>>>()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let head = OutputNetwork::random(arity + 1, hidden, 1, Activation::Tanh, &mut rng)?;
        let net = DistributionalNetwork::new(MassChannel::Arctan, tests, head)?;
        let fitted = fit(net, train, config)?.model;
        let risk = empirical_risk(&fitted, heldout, config.loss)?;
        scores.push((powers.clone(), risk));
        if best.as_ref().is_none_or(|b| risk < b.heldout_risk) {
            best = Some(PowerSelection {
                powers: powers.clone(),
                model: fitted,
                heldout_risk: risk,
                scores: Vec::new(),
            });
        }
    }
    let mut best = best.expect("candidates are nonempty");
    best.scores = scores;
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_model(w: f64) -> OutputNetwork {
        OutputNetwork::linear(vec![vec![w]], Activation::Tanh).unwrap()
    }

    fn points(data: &[(f64, f64)]) -> Vec<Labeled<Vec<f64>>> {
        data.iter().map(|&(x, y)| Labeled::new(vec![x], y)).collect()
    }

    #[test]
    fn losses() {
        assert_eq!(LossSpec::Squared.value(3.0, 3.0), 0.0);
        assert_eq!(LossSpec::Squared.value(1.0, 3.0), 4.0);
        assert!(LossSpec::Logistic.value(0.0, 1.0) > 0.0);
        assert!((LossSpec::Logistic.value(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert!(LossSpec::Logistic.value(800.0, 1.0) >= 0.0);
        assert!(LossSpec::Logistic.value(-800.0, 1.0).is_finite());
    }

    #[test]
    fn risk_examples() {
        let m = linear_model(1.0);
        let data = points(&[(1.0, 1.0), (2.0, 2.0)]);
        assert_eq!(empirical_risk(&m, &data, LossSpec::Squared).unwrap(), 0.0);
        // errors 1 and 3
        let data = points(&[(1.0, 0.0), (2.0, -1.0)]);
        assert_eq!(empirical_risk(&m, &data, LossSpec::Squared).unwrap(), 5.0);
        let rev: Vec<_> = data.iter().rev().cloned().collect();
        assert_eq!(empirical_risk(&m, &rev, LossSpec::Squared).unwrap(), 5.0);
        assert!(empirical_risk(&m, &[], LossSpec::Squared).is_err());
    }

    #[test]
    fn risk_reports_record_index() {
        let m = linear_model(1.0);
        let data = vec![Labeled::new(vec![1.0], 0.0), Labeled::new(vec![1.0, 2.0], 0.0)];
        assert!(matches!(
            empirical_risk(&m, &data, LossSpec::Squared),
            Err(Error::Record { index: 1, .. })
        ));
    }

    #[test]
    fn zero_readout_gradient_structure() {
        // width-1 head, beta = 0: d/d beta = 2 (0 - y) tanh(a x - theta) != 0, d/d a = 0.
        let net = OutputNetwork::hornik(vec![vec![0.7]], vec![0.1], vec![vec![0.0]], Activation::Tanh).unwrap();
        let data = points(&[(0.5, 1.0), (0.9, -2.0), (0.2, 0.5)]);
        let g = gradient(&net, &data, LossSpec::Squared, GradientMode::Analytic).unwrap();
        assert_eq!(g[0], 0.0);
        assert_eq!(g[1], 0.0);
        assert_ne!(g[2], 0.0);
    }

    #[test]
    fn gradient_vanishes_at_perfect_fit() {
        let net = OutputNetwork::hornik(vec![vec![0.7]], vec![0.1], vec![vec![1.3]], Activation::Tanh).unwrap();
        let data: Vec<_> = [0.1, 0.4, 0.8]
            .iter()
            .map(|&x| Labeled::new(vec![x], net.forward_scalar(&[x]).unwrap()))
            .collect();
        let g = gradient(&net, &data, LossSpec::Squared, GradientMode::Analytic).unwrap();
        assert!(g.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn fd_mode_matches_analytic() {
        let net = OutputNetwork::hornik(
            vec![vec![0.7], vec![-0.3]],
            vec![0.1, 0.4],
            vec![vec![1.3, 0.2]],
            Activation::Logistic,
        )
        .unwrap();
        let data = points(&[(0.5, 1.0), (0.9, -2.0)]);
        let a = gradient(&net, &data, LossSpec::Squared, GradientMode::Analytic).unwrap();
        let f = gradient(
            &net,
            &data,
            LossSpec::Squared,
            GradientMode::FiniteDifference { h: 1e-5 },
        )
        .unwrap();
        for (x, y) in a.iter().zip(&f) {
            assert!((x - y).abs() <= 1e-8 * x.abs().max(1.0));
        }
    }

    #[test]
    fn fit_linear_data_to_machine_precision() {
        // Closed-form least squares for y = 1.7 x through the origin gives w = 1.7.
        let data = points(&[(0.2, 0.34), (0.5, 0.85), (1.0, 1.7), (-0.4, -0.68)]);
        let cfg = TrainConfig {
            optimizer: Optimizer::GradientDescent,
            step: 0.5,
            iterations: 500,
            ..TrainConfig::default()
        };
        let out = fit(linear_model(0.0), &data, &cfg).unwrap();
        assert!(*out.trace.last().unwrap() < 1e-10);
        let w = out.model.params().values()[0];
        assert!((w - 1.7).abs() < 1e-5);
        assert_eq!(out.trace.len(), 501);
    }

    #[test]
    fn zero_iterations_leave_model_unchanged() {
        let data = points(&[(0.2, 0.34)]);
        let cfg = TrainConfig {
            iterations: 0,
            ..TrainConfig::default()
        };
        let m = linear_model(0.3);
        let out = fit(m.clone(), &data, &cfg).unwrap();
        assert_eq!(out.model, m);
        assert_eq!(out.trace.len(), 1);
    }

    #[test]
    fn divergence_is_reported() {
        let data = points(&[(10.0, 1.0)]);
        let cfg = TrainConfig {
            optimizer: Optimizer::GradientDescent,
            step: 10.0,
            iterations: 100,
            ..TrainConfig::default()
        };
        match fit(linear_model(0.0), &data, &cfg) {
            Err(Error::Diverged { trace, .. }) => assert!(!trace.is_empty()),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let invalid = [
            TrainConfig {
                step: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                gradient: GradientMode::FiniteDifference { h: 0.1 },
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: Some(0),
                ..TrainConfig::default()
            },
        ];
        assert!(invalid.iter().all(|cfg| cfg.validate().is_err()));
    }

    #[test]
    fn minibatch_fit_is_seeded() {
        let data = points(&[(0.2, 0.3), (0.5, 0.1), (1.0, 0.9), (-0.4, -0.2), (0.7, 0.6)]);
        let cfg = TrainConfig {
            batch_size: Some(2),
            iterations: 30,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = fit(linear_model(0.0), &data, &cfg).unwrap();
        let b = fit(linear_model(0.0), &data, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
    }
}

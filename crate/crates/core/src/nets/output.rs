use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::params::{split_params, ParamVector};

/// Bounded, non-constant activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Logistic,
}

impl Activation {
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Logistic => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    /// Derivative expressed through the activation's output `y = apply(x)`.
    #[inline]
    pub fn derivative_from_output(&self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Logistic => y * (1.0 - y),
        }
    }
}

/// `z -> sigma(W z - theta)` with `W` stored row-major as `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn check(&self) -> Result<()> {
        if self.weights.len() != self.inputs * self.outputs || self.bias.len() != self.outputs {
            return Err(Error::Shape(format!(
                "dense layer {}x{} has {} weights and {} biases",
                self.outputs,
                self.inputs,
                self.weights.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }

    fn forward(&self, z: &[f64], act: Activation) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| act.apply(row.iter().zip(z).map(|(w, x)| w * x).sum::<f64>() - b))
            .collect()
    }
}

/// A stack of `sigma` layers followed by a linear readout without bias.
///
/// With one hidden layer of width `n` this is exactly the single-hidden-layer
/// family `z -> sum_j beta_j sigma(a_j . z - theta_j)`. With no hidden layers it
/// reduces to the linear map `z -> beta z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawOutputNetwork")]
pub struct OutputNetwork {
    inputs: usize,
    outputs: usize,
    activation: Activation,
    hidden: Vec<DenseLayer>,
    /// `outputs x last_width`, row-major.
    readout: Vec<f64>,
}

#[derive(Deserialize)]
struct RawOutputNetwork {
    inputs: usize,
    outputs: usize,
    activation: Activation,
    hidden: Vec<DenseLayer>,
    readout: Vec<f64>,
}

impl TryFrom<RawOutputNetwork> for OutputNetwork {
    type Error = Error;

    fn try_from(raw: RawOutputNetwork) -> Result<Self> {
        let net = OutputNetwork {
            inputs: raw.inputs,
            outputs: raw.outputs,
            activation: raw.activation,
            hidden: raw.hidden,
            readout: raw.readout,
        };
        net.validate()?;
        Ok(net)
    }
}

/// Intermediate values of a forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `layers[0]` is the input, `layers[l + 1]` the output of hidden layer `l`.
    layers: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl OutputNetwork {
    /// All-zero network with the given hidden widths.
    pub fn zeros(inputs: usize, hidden: &[usize], outputs: usize, activation: Activation) -> Result<Self> {
        if inputs == 0 || outputs == 0 || hidden.contains(&0) {
            return Err(Error::Shape("network widths must be positive".into()));
        }
        let mut layers = Vec::with_capacity(hidden.len());
        let mut fan_in = inputs;
        for &w in hidden {
            layers.push(DenseLayer::zeros(fan_in, w));
            fan_in = w;
        }
        Ok(Self {
            inputs,
            outputs,
            activation,
            hidden: layers,
            readout: vec![0.0; outputs * fan_in],
        })
    }

    /// Weights uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    pub fn random<R: Rng + ?Sized>(
        inputs: usize,
        hidden: &[usize],
        outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(inputs, hidden, outputs, activation)?;
        for layer in &mut net.hidden {
            let r = 1.0 / (layer.inputs as f64).sqrt();
            layer.weights.iter_mut().for_each(|w| *w = rng.random_range(-r..=r));
        }
        let r = 1.0 / (net.last_width() as f64).sqrt();
        net.readout.iter_mut().for_each(|w| *w = rng.random_range(-r..=r));
        Ok(net)
    }

    /// Single hidden layer from explicit parameters: rows `a_j` of length `k`,
    /// thresholds `theta_j`, and readout rows of `beta` (one per output).
    pub fn hornik(a: Vec<Vec<f64>>, theta: Vec<f64>, beta: Vec<Vec<f64>>, activation: Activation) -> Result<Self> {
        let n = a.len();
        let k = a.first().map(Vec::len).unwrap_or(0);
        if n == 0 || k == 0 || a.iter().any(|r| r.len() != k) || theta.len() != n {
            return Err(Error::Shape(
                "hornik block needs n rows of equal width k and n thresholds".into(),
            ));
        }
        if beta.is_empty() || beta.iter().any(|r| r.len() != n) {
            return Err(Error::Shape(
                "each readout row must have one entry per hidden unit".into(),
            ));
        }
        Ok(Self {
            inputs: k,
            outputs: beta.len(),
            activation,
            hidden: vec![DenseLayer {
                inputs: k,
                outputs: n,
                weights: a.concat(),
                bias: theta,
            }],
            readout: beta.concat(),
        })
    }

    /// Linear map `z -> W z` (no hidden layers).
    pub fn linear(weights: Vec<Vec<f64>>, activation: Activation) -> Result<Self> {
        let k = weights.first().map(Vec::len).unwrap_or(0);
        if k == 0 || weights.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("linear readout rows must share a positive width".into()));
        }
        Ok(Self {
            inputs: k,
            outputs: weights.len(),
            activation,
            hidden: Vec::new(),
            readout: weights.concat(),
        })
    }

    fn validate(&self) -> Result<()> {
        let mut fan_in = self.inputs;
        for layer in &self.hidden {
            layer.check()?;
            check_dim(fan_in, layer.inputs)?;
            fan_in = layer.outputs;
        }
        if self.inputs == 0 || self.outputs == 0 || self.readout.len() != self.outputs * fan_in {
            return Err(Error::Shape("readout shape inconsistent with the last layer".into()));
        }
        Ok(())
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.hidden.iter().map(|l| l.outputs).collect()
    }

    fn last_width(&self) -> usize {
        self.hidden.last().map(|l| l.outputs).unwrap_or(self.inputs)
    }

    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(z)?.output)
    }

    /// Forward pass for single-output networks.
    pub fn forward_scalar(&self, z: &[f64]) -> Result<f64> {
        check_dim(1, self.outputs)?;
        Ok(self.forward(z)?[0])
    }

    pub fn forward_trace(&self, z: &[f64]) -> Result<ForwardTrace> {
        check_dim(self.inputs, z.len())?;
        let mut layers = Vec::with_capacity(self.hidden.len() + 1);
        layers.push(z.to_vec());
        for layer in &self.hidden {
            let next = layer.forward(layers.last().unwrap(), self.activation);
            layers.push(next);
        }
        let h = layers.last().unwrap();
        let output = self
            .readout
            .chunks_exact(h.len())
            .map(|row| row.iter().zip(h).map(|(w, x)| w * x).sum())
            .collect();
        Ok(ForwardTrace { layers, output })
    }

    /// Reverse pass. Given `d loss / d output`, returns the gradient with respect to
    /// the parameters (layout of [`params`](Self::params)) and to the input.
    pub fn backward(&self, trace: &ForwardTrace, d_output: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut grad = vec![0.0; self.param_count()];
        let last = trace.layers.last().unwrap();
        let width = last.len();
        let readout_offset = grad.len() - self.readout.len();
        let mut d_h = vec![0.0; width];
        for (o, &g) in d_output.iter().enumerate() {
            let row = &self.readout[o * width..(o + 1) * width];
            for j in 0..width {
                grad[readout_offset + o * width + j] = g * last[j];
                d_h[j] += g * row[j];
            }
        }
        let mut offset = readout_offset;
        for (l, layer) in self.hidden.iter().enumerate().rev() {
            let z = &trace.layers[l];
            let h = &trace.layers[l + 1];
            let n_w = layer.weights.len();
            offset -= n_w + layer.outputs;
            let mut d_z = vec![0.0; layer.inputs];
            for i in 0..layer.outputs {
                let d_u = d_h[i] * self.activation.derivative_from_output(h[i]);
                let row = &layer.weights[i * layer.inputs..(i + 1) * layer.inputs];
                for j in 0..layer.inputs {
                    grad[offset + i * layer.inputs + j] = d_u * z[j];
                    d_z[j] += d_u * row[j];
                }
                grad[offset + n_w + i] = -d_u;
            }
            d_h = d_z;
        }
        (grad, d_h)
    }

    pub fn param_count(&self) -> usize {
        self.hidden
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum::<usize>()
            + self.readout.len()
    }

    /// Layout: per hidden layer its weights then thresholds, then the readout.
    pub fn params(&self) -> ParamVector {
        let mut p = ParamVector::new();
        for (i, layer) in self.hidden.iter().enumerate() {
            p.push(format!("layer{i}.weights"), &layer.weights);
            p.push(format!("layer{i}.bias"), &layer.bias);
        }
        p.push("readout", &self.readout);
        p
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        let mut lens: Vec<usize> = self
            .hidden
            .iter()
            .flat_map(|l| [l.weights.len(), l.bias.len()])
            .collect();
        lens.push(self.readout.len());
        let chunks = split_params(values, &lens)?;
        for (i, layer) in self.hidden.iter_mut().enumerate() {
            layer.weights.copy_from_slice(chunks[2 * i]);
            layer.bias.copy_from_slice(chunks[2 * i + 1]);
        }
        self.readout.copy_from_slice(chunks[chunks.len() - 1]);
        Ok(())
    }

    /// Grows the single hidden layer to `width` units without changing the function:
    /// new units get random input weights, zero thresholds and zero readout.
    pub fn widen<R: Rng + ?Sized>(&self, width: usize, rng: &mut R) -> Result<Self> {
        let [layer] = self.hidden.as_slice() else {
            return Err(Error::Shape("widening needs exactly one hidden layer".into()));
        };
        if width < layer.outputs {
            return Err(Error::Shape(format!(
                "cannot shrink {} hidden units to {width}",
                layer.outputs
            )));
        }
        let mut wide = Self::random(self.inputs, &[width], self.outputs, self.activation, rng)?;
        let old = layer.outputs;
        let new = &mut wide.hidden[0];
        new.weights[..layer.weights.len()].copy_from_slice(&layer.weights);
        new.bias.fill(0.0);
        new.bias[..old].copy_from_slice(&layer.bias);
        wide.readout.fill(0.0);
        for o in 0..self.outputs {
            wide.readout[o * width..o * width + old].copy_from_slice(&self.readout[o * old..(o + 1) * old]);
        }
        Ok(wide)
    }

    /// Zeroes every weight that reads input coordinate `index` in the first layer
    /// (or the readout, when there are no hidden layers).
    pub fn mask_input(&mut self, index: usize) -> Result<()> {
        if index >= self.inputs {
            return Err(Error::Shape(format!("input {index} out of range")));
        }
        let k = self.inputs;
        let weights = match self.hidden.first_mut() {
            Some(layer) => &mut layer.weights,
            None => &mut self.readout,
        };
        weights.chunks_exact_mut(k).for_each(|row| row[index] = 0.0);
        Ok(())
    }
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::measure::ParticleMeasure;
use crate::params::{split_params, ParamVector};
use crate::testfn::MassChannel;

use super::{Activation, OutputNetwork};

/// `mu -> sum_j q_j sigma(p_j . psi(mu) - phi_j)` with
/// `psi(mu) = (g0(mu(E)), int B sigma(A'x - Theta) dmu/mu(E))`.
///
/// `A` is `D x n1`, `B` is `m x n1` and `Theta` has length `n1`; all three are
/// row-major. The outer sum is an [`OutputNetwork`] with input width `1 + m`,
/// one hidden layer of width `n2` (rows `p_j`, thresholds `phi_j`) and readout `q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPractical")]
pub struct PracticalNetwork {
    dim: usize,
    inner_width: usize,
    features: usize,
    mass_channel: MassChannel,
    activation: Activation,
    a: Vec<f64>,
    b: Vec<f64>,
    theta: Vec<f64>,
    outer: OutputNetwork,
}

#[derive(Deserialize)]
struct RawPractical {
    dim: usize,
    inner_width: usize,
    features: usize,
    mass_channel: MassChannel,
    activation: Activation,
    a: Vec<f64>,
    b: Vec<f64>,
    theta: Vec<f64>,
    outer: OutputNetwork,
}

impl TryFrom<RawPractical> for PracticalNetwork {
    type Error = Error;
    fn try_from(r: RawPractical) -> Result<Self> {
        let net = PracticalNetwork {
            dim: r.dim,
            inner_width: r.inner_width,
            features: r.features,
            mass_channel: r.mass_channel,
            activation: r.activation,
            a: r.a,
            b: r.b,
            theta: r.theta,
            outer: r.outer,
        };
        net.validate()?;
        Ok(net)
    }
}

struct AtomPass {
    weight: f64,
    location: Vec<f64>,
    hidden: Vec<f64>,
}

impl PracticalNetwork {
    /// Zero-initialized network for `D = dim`, inner width `n1`, `m` integrated
    /// features and outer width `n2`.
    pub fn zeros(dim: usize, n1: usize, m: usize, n2: usize, activation: Activation) -> Result<Self> {
        if dim == 0 || n1 == 0 || m == 0 || n2 == 0 {
            return Err(Error::Shape("practical network widths must be positive".into()));
        }
        Ok(Self {
            dim,
            inner_width: n1,
            features: m,
            mass_channel: MassChannel::Arctan,
            activation,
            a: vec![0.0; dim * n1],
            b: vec![0.0; m * n1],
            theta: vec![0.0; n1],
            outer: OutputNetwork::zeros(1 + m, &[n2], 1, activation)?,
        })
    }

    /// `A` and `B` uniform on `+-1/sqrt(fan_in)`, `Theta` zero, outer block via
    /// [`OutputNetwork::random`].
    pub fn random<R: Rng + ?Sized>(
        dim: usize,
        n1: usize,
        m: usize,
        n2: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(dim, n1, m, n2, activation)?;
        let ra = 1.0 / (dim as f64).sqrt();
        net.a.iter_mut().for_each(|w| *w = rng.random_range(-ra..=ra));
        let rb = 1.0 / (n1 as f64).sqrt();
        net.b.iter_mut().for_each(|w| *w = rng.random_range(-rb..=rb));
        net.outer = OutputNetwork::random(1 + m, &[n2], 1, activation, rng)?;
        Ok(net)
    }

    /// Builds from explicit blocks. `a` has `dim` rows of width `n1`, `b` has `m` rows
    /// of width `n1`.
    pub fn from_parts(
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        theta: Vec<f64>,
        outer: OutputNetwork,
        activation: Activation,
    ) -> Result<Self> {
        let dim = a.len();
        let n1 = theta.len();
        let m = b.len();
        if a.iter().chain(&b).any(|r| r.len() != n1) {
            return Err(Error::Shape("rows of A and B must have length n1".into()));
        }
        let net = Self {
            dim,
            inner_width: n1,
            features: m,
            mass_channel: MassChannel::Arctan,
            activation,
            a: a.concat(),
            b: b.concat(),
            theta,
            outer,
        };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        let (d, n1, m) = (self.dim, self.inner_width, self.features);
        if d == 0 || n1 == 0 || m == 0 {
            return Err(Error::Shape("practical network widths must be positive".into()));
        }
        if self.a.len() != d * n1 || self.b.len() != m * n1 || self.theta.len() != n1 {
            return Err(Error::Shape(format!("A must be {d}x{n1}, B {m}x{n1}, Theta {n1}")));
        }
        check_dim(1 + m, self.outer.inputs())?;
        check_dim(1, self.outer.outputs())?;
        if self.outer.activation() != self.activation {
            return Err(Error::Shape("inner and outer blocks must share the activation".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn outer(&self) -> &OutputNetwork {
        &self.outer
    }

    pub fn outer_mut(&mut self) -> &mut OutputNetwork {
        &mut self.outer
    }

    /// `sigma(A'x - Theta)`.
    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        let n1 = self.inner_width;
        (0..n1)
            .map(|k| {
                let u: f64 = (0..self.dim).map(|d| self.a[d * n1 + k] * x[d]).sum();
                self.activation.apply(u - self.theta[k])
            })
            .collect()
    }

    /// `B h`.
    fn mix(&self, h: &[f64]) -> Vec<f64> {
        self.b
            .chunks_exact(self.inner_width)
            .map(|row| row.iter().zip(h).map(|(w, x)| w * x).sum())
            .collect()
    }

    /// The feature vector `psi(mu)` of length `1 + m`.
    pub fn psi(&self, mu: &ParticleMeasure) -> Result<Vec<f64>> {
        check_dim(self.dim, mu.dim())?;
        let mut out = Vec::with_capacity(1 + self.features);
        out.push(self.mass_channel.eval(mu.total_mass()));
        out.extend(mu.integrate_vec(self.features, |x| Ok(self.mix(&self.hidden(x))), true)?);
        Ok(out)
    }

    pub fn forward(&self, mu: &ParticleMeasure) -> Result<f64> {
        self.outer.forward_scalar(&self.psi(mu)?)
    }

    pub fn forward_with_grad(&self, mu: &ParticleMeasure) -> Result<(f64, Vec<f64>)> {
        let psi = self.psi(mu)?;
        let trace = self.outer.forward_trace(&psi)?;
        let (outer_grad, d_psi) = self.outer.backward(&trace, &[1.0]);
        let c = &d_psi[1..];

        let (d, n1, m) = (self.dim, self.inner_width, self.features);
        let mass = mu.total_mass();
        let passes: Vec<AtomPass> = mu
            .atoms()
            .iter()
            .map(|atom| AtomPass {
                weight: atom.weight / mass,
                location: atom.location.clone(),
                hidden: self.hidden(&atom.location),
            })
            .collect();

        // c' B, the sensitivity of the output to each hidden unit of one atom.
        let cb: Vec<f64> = (0..n1)
            .map(|k| (0..m).map(|r| c[r] * self.b[r * n1 + k]).sum())
            .collect();

        let mut grad_a = vec![0.0; d * n1];
        let mut grad_b = vec![0.0; m * n1];
        let mut grad_theta = vec![0.0; n1];
        for pass in &passes {
            for k in 0..n1 {
                let h = pass.hidden[k];
                for r in 0..m {
                    grad_b[r * n1 + k] += pass.weight * c[r] * h;
                }
                let du = pass.weight * cb[k] * self.activation.derivative_from_output(h);
                for (dd, x) in pass.location.iter().enumerate() {
                    grad_a[dd * n1 + k] += du * x;
                }
                grad_theta[k] -= du;
            }
        }
        let mut grad = Vec::with_capacity(self.param_count());
        grad.extend(grad_a);
        grad.extend(grad_b);
        grad.extend(grad_theta);
        grad.extend(outer_grad);
        Ok((trace.output[0], grad))
    }

    pub fn param_count(&self) -> usize {
        self.a.len() + self.b.len() + self.theta.len() + self.outer.param_count()
    }

    /// Layout: `A`, `B`, `Theta`, then the outer block (`p`, `phi`, `q`).
    pub fn params(&self) -> ParamVector {
        let mut p = ParamVector::new();
        p.push("inner.a", &self.a);
        p.push("inner.b", &self.b);
        p.push("inner.theta", &self.theta);
        p.append("outer", self.outer.params());
        p
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        let lens = [self.a.len(), self.b.len(), self.theta.len(), self.outer.param_count()];
        let chunks = split_params(values, &lens)?;
        self.a.copy_from_slice(chunks[0]);
        self.b.copy_from_slice(chunks[1]);
        self.theta.copy_from_slice(chunks[2]);
        self.outer.set_params(chunks[3])
    }
}

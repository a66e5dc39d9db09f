//! Finite positive atomic measures `mu = sum_j w_j delta_{x_j}`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::sum::ordered_sum;
use crate::testfn::TestFunction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    #[serde(rename = "x")]
    pub location: Vec<f64>,
    #[serde(rename = "w")]
    pub weight: f64,
}

impl Atom {
    pub fn new(location: Vec<f64>, weight: f64) -> Self {
        Self { location, weight }
    }
}

/// A nonempty collection of weighted atoms in `R^D`.
///
/// Every weight is strictly positive and finite, so the total mass lies in
/// `(0, inf)`. Sums over atoms are order independent: they are compensated
/// sums over sorted terms, so permuting the atoms never changes a result.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleMeasure {
    atoms: Vec<Atom>,
    dim: usize,
}

impl ParticleMeasure {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        let dim = atoms.first().ok_or(Error::EmptyMeasure)?.location.len();
        if dim == 0 {
            return Err(Error::InvalidArgument("atom locations need dimension >= 1".into()));
        }
        for (index, atom) in atoms.iter().enumerate() {
            check_dim(dim, atom.location.len())?;
            if !(atom.weight > 0.0 && atom.weight.is_finite()) {
                return Err(Error::InvalidWeight {
                    index,
                    weight: atom.weight,
                });
            }
            if atom.location.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteLocation { index });
            }
        }
        Ok(Self { atoms, dim })
    }

    /// Atoms at `points` with the matching `weights`.
    pub fn from_parts(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::Shape(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        Self::new(points.into_iter().zip(weights).map(|(x, w)| Atom::new(x, w)).collect())
    }

    /// Counting measure: unit weight at every point.
    pub fn counting(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        Self::from_parts(points, vec![1.0; n])
    }

    /// Convenience constructor for one-dimensional `(location, weight)` pairs.
    pub fn from_scalar_atoms(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(pairs.iter().map(|&(x, w)| Atom::new(vec![x], w)).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn into_atoms(self) -> Vec<Atom> {
        self.atoms
    }

    pub fn total_mass(&self) -> f64 {
        ordered_sum(self.atoms.iter().map(|a| a.weight).collect())
    }

    /// The probability measure `mu / mu(E)`.
    pub fn normalize(&self) -> ParticleMeasure {
        let mass = self.total_mass();
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom::new(a.location.clone(), a.weight / mass))
            .collect();
        ParticleMeasure { atoms, dim: self.dim }
    }

    /// `c * mu` for `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<ParticleMeasure> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {c}")));
        }
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom::new(a.location.clone(), a.weight * c))
            .collect();
        ParticleMeasure::new(atoms)
    }

    /// Atoms reordered so that atom `i` of the result is atom `order[i]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Result<ParticleMeasure> {
        let mut seen = vec![false; self.len()];
        if order.len() != self.len() {
            return Err(Error::Shape("permutation length differs from atom count".into()));
        }
        for &i in order {
            if i >= self.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument("not a permutation".into()));
            }
        }
        Ok(ParticleMeasure {
            atoms: order.iter().map(|&i| self.atoms[i].clone()).collect(),
            dim: self.dim,
        })
    }

    /// `int g d mu`, or `int g d(mu / mu(E))` when `normalized`.
    pub fn integrate(&self, g: &TestFunction, normalized: bool) -> Result<f64> {
        check_dim(g.dim(), self.dim)?;
        self.integrate_with(|x| g.eval(x), normalized)
    }

    /// Integral of an arbitrary scalar function of the atom locations.
    pub fn integrate_with<F>(&self, f: F, normalized: bool) -> Result<f64>
    where
        F: Fn(&[f64]) -> Result<f64>,
    {
        let terms = self
            .atoms
            .iter()
            .map(|a| Ok(a.weight * f(&a.location)?))
            .collect::<Result<Vec<f64>>>()?;
        let total = ordered_sum(terms);
        Ok(if normalized { total / self.total_mass() } else { total })
    }

    /// Component-wise integral of a vector-valued function of the atom locations.
    pub fn integrate_vec<F>(&self, width: usize, f: F, normalized: bool) -> Result<Vec<f64>>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>>,
    {
        let mut columns = vec![Vec::with_capacity(self.len()); width];
        for atom in &self.atoms {
            let values = f(&atom.location)?;
            check_dim(width, values.len())?;
            for (col, v) in columns.iter_mut().zip(values) {
                col.push(atom.weight * v);
            }
        }
        let mass = if normalized { self.total_mass() } else { 1.0 };
        Ok(columns
            .into_iter()
            .map(|c| {
                let s = ordered_sum(c);
                if normalized {
                    s / mass
                } else {
                    s
                }
            })
            .collect())
    }

    /// The unnormalized moment generating function `sum_j w_j exp(v . x_j)`.
    pub fn mgf(&self, v: &[f64]) -> Result<f64> {
        check_dim(self.dim, v.len())?;
        let g = TestFunction::Exp {
            v: v.to_vec(),
            trainable: false,
        };
        self.integrate(&g, false)
    }
}

//! Test-function families and the mass channel.
//!
//! A [`TestFunction`] is one bounded continuous map `E -> R` drawn from a
//! countable family: monomials on `[0,1]^D`, exponentials `x -> exp(v.x)`,
//! coordinate projections, metric bumps `(1 - k d(p, q)) v 0`, or a product of
//! two of these. Exponential and bump members may carry trainable parameters.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// `|v.x|` above this bound is reported as overflow instead of returning `inf`.
pub const EXP_GUARD: f64 = 700.0;

/// Distance used by bump functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointDistance {
    #[default]
    Euclidean,
    Manhattan,
    Chebyshev,
}

impl PointDistance {
    pub fn distance(&self, p: &[f64], q: &[f64]) -> f64 {
        let diffs = p.iter().zip(q).map(|(a, b)| (a - b).abs());
        match self {
            PointDistance::Euclidean => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            PointDistance::Manhattan => diffs.sum(),
            PointDistance::Chebyshev => diffs.fold(0.0, f64::max),
        }
    }

    /// Gradient of `d(p, q)` with respect to `q`; zero where `d` is not differentiable.
    fn grad_center(&self, p: &[f64], q: &[f64]) -> Vec<f64> {
        match self {
            PointDistance::Euclidean => {
                let d = self.distance(p, q);
                if d == 0.0 {
                    vec![0.0; q.len()]
                } else {
                    q.iter().zip(p).map(|(qi, pi)| (qi - pi) / d).collect()
                }
            }
            PointDistance::Manhattan => q.iter().zip(p).map(|(qi, pi)| sign(qi - pi)).collect(),
            PointDistance::Chebyshev => {
                let mut out = vec![0.0; q.len()];
                let mut best = 0.0;
                let mut arg = None;
                for (i, (qi, pi)) in q.iter().zip(p).enumerate() {
                    let d = (qi - pi).abs();
                    if d > best {
                        best = d;
                        arg = Some(i);
                    }
                }
                if let Some(i) = arg {
                    out[i] = sign(q[i] - p[i]);
                }
                out
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    /// `prod_i x_i^{powers_i}` on `[0,1]^D`.
    Monomial { powers: Vec<u32> },
    /// `exp(v.x)`.
    Exp { v: Vec<f64>, trainable: bool },
    /// The coordinate `x_index` (zero based) of a `dim`-dimensional point.
    Projection { index: usize, dim: usize },
    /// `max(0, 1 - scale * d(p, center))`.
    Bump {
        center: Vec<f64>,
        scale: f64,
        #[serde(default)]
        distance: PointDistance,
        trainable: bool,
    },
    Product {
        left: Box<TestFunction>,
        right: Box<TestFunction>,
    },
}

impl TestFunction {
    pub fn monomial(powers: Vec<u32>) -> Result<Self> {
        if powers.is_empty() {
            return Err(Error::InvalidArgument("monomial needs dimension >= 1".into()));
        }
        Ok(TestFunction::Monomial { powers })
    }

    pub fn constant_one(dim: usize) -> Self {
        TestFunction::Monomial { powers: vec![0; dim] }
    }

    pub fn exp(v: Vec<f64>, trainable: bool) -> Result<Self> {
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(
                "exponential feature needs a finite, nonempty v".into(),
            ));
        }
        Ok(TestFunction::Exp { v, trainable })
    }

    pub fn projection(index: usize, dim: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::InvalidArgument(format!(
                "projection index {index} out of range for dimension {dim}"
            )));
        }
        Ok(TestFunction::Projection { index, dim })
    }

    pub fn bump(center: Vec<f64>, scale: f64, distance: PointDistance, trainable: bool) -> Result<Self> {
        if center.is_empty() || center.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("bump needs a finite, nonempty center".into()));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "bump scale must be positive, got {scale}"
            )));
        }
        Ok(TestFunction::Bump {
            center,
            scale,
            distance,
            trainable,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            TestFunction::Monomial { powers } => powers.len(),
            TestFunction::Exp { v, .. } => v.len(),
            TestFunction::Projection { dim, .. } => *dim,
            TestFunction::Bump { center, .. } => center.len(),
            TestFunction::Product { left, .. } => left.dim(),
        }
    }

    /// Whether evaluation requires the point to lie in `[0,1]^D`.
    pub fn requires_unit_box(&self) -> bool {
        match self {
            TestFunction::Monomial { .. } => true,
            TestFunction::Product { left, right } => left.requires_unit_box() || right.requires_unit_box(),
            _ => false,
        }
    }

    pub fn eval(&self, p: &[f64]) -> Result<f64> {
        check_dim(self.dim(), p.len())?;
        self.eval_unchecked(p)
    }

    fn eval_unchecked(&self, p: &[f64]) -> Result<f64> {
        match self {
            TestFunction::Monomial { powers } => {
                if p.iter().any(|x| !(0.0..=1.0).contains(x)) {
                    return Err(Error::OutsideUnitBox { point: p.to_vec() });
                }
                Ok(powers.iter().zip(p).map(|(&k, &x)| x.powi(k as i32)).product())
            }
            TestFunction::Exp { v, .. } => guarded_exp(dot(v, p)),
            TestFunction::Projection { index, .. } => Ok(p[*index]),
            TestFunction::Bump {
                center,
                scale,
                distance,
                ..
            } => Ok((1.0 - scale * distance.distance(p, center)).max(0.0)),
            TestFunction::Product { left, right } => Ok(left.eval_unchecked(p)? * right.eval_unchecked(p)?),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            TestFunction::Exp { v, trainable: true } => v.len(),
            TestFunction::Bump {
                center,
                trainable: true,
                ..
            } => center.len() + 1,
            TestFunction::Product { left, right } => left.param_count() + right.param_count(),
            _ => 0,
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.param_count() > 0
    }

    /// Trainable parameters in a fixed layout: `v` for exponentials, `(center, scale)`
    /// for bumps, left then right for products.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.push_params(&mut out);
        out
    }

    fn push_params(&self, out: &mut Vec<f64>) {
        match self {
            TestFunction::Exp { v, trainable: true } => out.extend_from_slice(v),
            TestFunction::Bump {
                center,
                scale,
                trainable: true,
                ..
            } => {
                out.extend_from_slice(center);
                out.push(*scale);
            }
            TestFunction::Product { left, right } => {
                left.push_params(out);
                right.push_params(out);
            }
            _ => {}
        }
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "{} expects {} parameters, got {}",
                self,
                self.param_count(),
                values.len()
            )));
        }
        self.load_params(values);
        Ok(())
    }

    fn load_params(&mut self, values: &[f64]) {
        match self {
            TestFunction::Exp { v, trainable: true } => v.copy_from_slice(values),
            TestFunction::Bump {
                center,
                scale,
                trainable: true,
                ..
            } => {
                let d = center.len();
                center.copy_from_slice(&values[..d]);
                *scale = values[d];
            }
            TestFunction::Product { left, right } => {
                let n = left.param_count();
                left.load_params(&values[..n]);
                right.load_params(&values[n..]);
            }
            _ => {}
        }
    }

    /// Keeps bump scales strictly positive after an optimizer step.
    pub fn constrain(&mut self) {
        match self {
            TestFunction::Bump { scale, .. } => *scale = scale.max(MIN_BUMP_SCALE),
            TestFunction::Product { left, right } => {
                left.constrain();
                right.constrain();
            }
            _ => {}
        }
    }

    /// Gradient of `eval(p)` with respect to [`params`](Self::params).
    pub fn param_grad(&self, p: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), p.len())?;
        if !self.is_trainable() {
            return Err(Error::NotTrainable(self.to_string()));
        }
        Ok(self.value_and_grad(p)?.1)
    }

    /// Value and parameter gradient in one pass. The gradient is empty for
    /// functions without trainable parameters.
    pub fn value_and_grad(&self, p: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self {
            TestFunction::Exp { v, trainable: true } => {
                let e = guarded_exp(dot(v, p))?;
                Ok((e, p.iter().map(|x| x * e).collect()))
            }
            TestFunction::Bump {
                center,
                scale,
                distance,
                trainable: true,
            } => {
                let d = distance.distance(p, center);
                let value = 1.0 - scale * d;
                if value <= 0.0 {
                    // Outside the support or exactly on the kink.
                    return Ok((0.0, vec![0.0; center.len() + 1]));
                }
                let mut grad: Vec<f64> = distance
                    .grad_center(p, center)
                    .into_iter()
                    .map(|g| -scale * g)
                    .collect();
                grad.push(-d);
                Ok((value, grad))
            }
            TestFunction::Product { left, right } => {
                let (a, ga) = left.value_and_grad(p)?;
                let (b, gb) = right.value_and_grad(p)?;
                let grad = ga.iter().map(|g| g * b).chain(gb.iter().map(|g| g * a)).collect();
                Ok((a * b, grad))
            }
            _ => Ok((self.eval_unchecked(p)?, Vec::new())),
        }
    }

    /// An upper bound on `|eval|` over the function's natural domain
    /// (`[0,1]^D` for monomials and exponentials).
    pub fn bound(&self) -> f64 {
        match self {
            TestFunction::Monomial { .. } | TestFunction::Bump { .. } => 1.0,
            TestFunction::Exp { v, .. } => {
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                (norm * (v.len() as f64).sqrt()).exp()
            }
            TestFunction::Projection { .. } => f64::INFINITY,
            TestFunction::Product { left, right } => left.bound() * right.bound(),
        }
    }
}

pub const MIN_BUMP_SCALE: f64 = 1e-6;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn guarded_exp(exponent: f64) -> Result<f64> {
    if exponent.abs() > EXP_GUARD || exponent.is_nan() {
        return Err(Error::ExpOverflow {
            exponent,
            limit: EXP_GUARD,
        });
    }
    Ok(exponent.exp())
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestFunction::Monomial { powers } => {
                let factors: Vec<String> = powers
                    .iter()
                    .enumerate()
                    .filter(|(_, &k)| k > 0)
                    .map(|(i, &k)| {
                        if k == 1 {
                            format!("x{}", i + 1)
                        } else {
                            format!("x{}^{}", i + 1, k)
                        }
                    })
                    .collect();
                if factors.is_empty() {
                    write!(f, "1")
                } else {
                    write!(f, "{}", factors.join("*"))
                }
            }
            TestFunction::Exp { v, .. } => write!(f, "exp({v:?}.x)"),
            TestFunction::Projection { index, .. } => write!(f, "pi{}", index + 1),
            TestFunction::Bump { center, scale, .. } => write!(f, "bump(q={center:?}, k={scale})"),
            TestFunction::Product { left, right } => write!(f, "({left})*({right})"),
        }
    }
}

/// Product of two test functions, fusing monomial pairs and fixed exponential pairs.
pub fn product(a: &TestFunction, b: &TestFunction) -> Result<TestFunction> {
    check_dim(a.dim(), b.dim())?;
    Ok(match (a, b) {
        (TestFunction::Monomial { powers: p }, TestFunction::Monomial { powers: q }) => TestFunction::Monomial {
            powers: p.iter().zip(q).map(|(x, y)| x + y).collect(),
        },
        // Trainable exponentials keep their own parameters, so only fixed ones fuse.
        (TestFunction::Exp { v, trainable: false }, TestFunction::Exp { v: u, trainable: false }) => {
            TestFunction::Exp {
                v: v.iter().zip(u).map(|(x, y)| x + y).collect(),
                trainable: false,
            }
        }
        _ => TestFunction::Product {
            left: Box::new(a.clone()),
            right: Box::new(b.clone()),
        },
    })
}

/// The bounded, strictly increasing map applied to the total mass `mu(E)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MassChannel {
    #[default]
    Arctan,
    /// `m / (1 + m)`.
    Ratio,
}

impl MassChannel {
    pub fn eval(&self, mass: f64) -> f64 {
        match self {
            MassChannel::Arctan => mass.atan(),
            MassChannel::Ratio => mass / (1.0 + mass),
        }
    }

    /// Supremum of `|g0|` on `(0, inf)`.
    pub fn bound(&self) -> f64 {
        match self {
            MassChannel::Arctan => std::f64::consts::FRAC_PI_2,
            MassChannel::Ratio => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Monomial,
    Exp,
    Projection,
    Bump,
}

/// Declarative description of a test-function family, as it appears in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub family: FamilyKind,
    pub count: usize,
    #[serde(default)]
    pub trainable: bool,
    /// Columns of the exponential family's generating matrix `V` (identity when absent).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<PointDistance>,
    /// Explicit monomial powers (dimension 1), overriding enumeration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub powers: Option<Vec<u32>>,
}

impl FamilySpec {
    pub fn new(family: FamilyKind, count: usize) -> Self {
        Self {
            family,
            count,
            trainable: false,
            basis: None,
            distance: None,
            powers: None,
        }
    }

    pub fn trainable(mut self, trainable: bool) -> Self {
        self.trainable = trainable;
        self
    }
}

/// Multi-indices in `N^D \ {0}` ordered by max entry, then total degree, then
/// lexicographically descending. For `D = 1` this is `1, 2, 3, ...`; for
/// `D = 2` it starts `(1,0), (0,1), (1,1), (2,0), (0,2), (2,1), ...`.
pub fn multi_indices(dim: usize, n: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::with_capacity(n);
    let mut max = 1u32;
    while out.len() < n {
        let mut level = Vec::new();
        let mut tuple = vec![0u32; dim];
        loop {
            if tuple.iter().copied().max() == Some(max) {
                level.push(tuple.clone());
            }
            // Odometer increment over {0..=max}^dim.
            let mut i = dim;
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                if tuple[i] < max {
                    tuple[i] += 1;
                    break;
                }
                tuple[i] = 0;
            }
            if tuple.iter().all(|&x| x == 0) {
                break;
            }
        }
        level.sort_by(|a, b| {
            let ta: u32 = a.iter().sum();
            let tb: u32 = b.iter().sum();
            ta.cmp(&tb).then_with(|| b.cmp(a))
        });
        out.extend(level.into_iter().take(n - out.len()));
        max += 1;
    }
    out
}

/// Materializes the first `spec.count` members of a family on `dim`-dimensional points.
///
/// Monomials and fixed exponentials follow [`multi_indices`]; bumps walk dyadic
/// grids of `[0,1]^D` with centers `j / 2^l` and scale `2^l` for `l = 0, 1, ...`.
/// Trainable exponentials draw `v` uniformly from `[-1, 1]^D / sqrt(D)`.
pub fn enumerate_family<R: Rng + ?Sized>(spec: &FamilySpec, dim: usize, rng: &mut R) -> Result<Vec<TestFunction>> {
    let n = spec.count;
    if n == 0 {
        return Err(Error::UnsupportedFamily("family count must be at least 1".into()));
    }
    if dim == 0 {
        return Err(Error::UnsupportedFamily("family dimension must be at least 1".into()));
    }
    match spec.family {
        FamilyKind::Monomial => {
            if spec.trainable {
                return Err(Error::UnsupportedFamily(
                    "monomial powers are selected by discrete search, not trained".into(),
                ));
            }
            if let Some(powers) = &spec.powers {
                if dim != 1 {
                    return Err(Error::UnsupportedFamily("explicit powers need dimension 1".into()));
                }
                if powers.len() != n {
                    return Err(Error::UnsupportedFamily(format!(
                        "{} explicit powers given for count {n}",
                        powers.len()
                    )));
                }
                return powers.iter().map(|&k| TestFunction::monomial(vec![k])).collect();
            }
            multi_indices(dim, n).into_iter().map(TestFunction::monomial).collect()
        }
        FamilyKind::Exp => {
            if spec.trainable {
                let half_width = 1.0 / (dim as f64).sqrt();
                return (0..n)
                    .map(|_| {
                        let v = (0..dim).map(|_| rng.random_range(-half_width..=half_width)).collect();
                        TestFunction::exp(v, true)
                    })
                    .collect();
            }
            let basis = match &spec.basis {
                Some(cols) => {
                    if cols.len() != dim || cols.iter().any(|c| c.len() != dim) {
                        return Err(Error::UnsupportedFamily(format!(
                            "exp basis must hold {dim} columns of length {dim}"
                        )));
                    }
                    cols.clone()
                }
                None => (0..dim)
                    .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                    .collect(),
            };
            multi_indices(dim, n)
                .into_iter()
                .map(|c| {
                    let v = (0..dim)
                        .map(|row| c.iter().zip(&basis).map(|(&k, col)| k as f64 * col[row]).sum())
                        .collect();
                    TestFunction::exp(v, false)
                })
                .collect()
        }
        FamilyKind::Projection => {
            if n > dim {
                return Err(Error::UnsupportedFamily(format!(
                    "only {dim} projections exist in dimension {dim}, {n} requested"
                )));
            }
            (0..n).map(|i| TestFunction::projection(i, dim)).collect()
        }
        FamilyKind::Bump => {
            let distance = spec.distance.unwrap_or_default();
            let mut out = Vec::with_capacity(n);
            let mut level = 0u32;
            while out.len() < n {
                let steps = 1u64 << level;
                let scale = steps as f64;
                let mut idx = vec![0u64; dim];
                'grid: loop {
                    let center = idx.iter().map(|&j| j as f64 / steps as f64).collect();
                    out.push(TestFunction::bump(center, scale, distance, spec.trainable)?);
                    if out.len() == n {
                        break;
                    }
                    let mut i = dim;
                    loop {
                        if i == 0 {
                            break 'grid;
                        }
                        i -= 1;
                        if idx[i] < steps {
                            idx[i] += 1;
                            break;
                        }
                        idx[i] = 0;
                    }
                }
                level += 1;
            }
            Ok(out)
        }
    }
}

//! Metrics induced by a countable test-function family.
//!
//! For an ordered family `g_1, g_2, ...` the point metric is
//! `d(x, y) = sum_i 2^-i (|g_i(x) - g_i(y)| ^ 1)` and the measure metric is
//! `(|g0(mu(E)) - g0(nu(E))| ^ 1) + sum_{i>=2} 2^-i (|g_i*(mu/mu(E)) - g_i*(nu/nu(E))| ^ 1)`.
//! Only finitely many terms are computed, so both are pseudometrics.

use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::measure::ParticleMeasure;
use crate::testfn::{MassChannel, TestFunction};

/// Number of family members used when a truncation is not given.
pub const DEFAULT_TRUNCATION: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct SspMetric {
    family: Vec<TestFunction>,
    mass_channel: MassChannel,
}

/// One summand of a metric evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricTerm {
    /// Index `i` of the term; 0 denotes the mass channel.
    pub index: usize,
    pub name: String,
    pub weight: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricBreakdown {
    pub total: f64,
    pub terms: Vec<MetricTerm>,
}

impl MetricBreakdown {
    fn from_terms(terms: Vec<MetricTerm>) -> Self {
        let total = terms.iter().map(|t| t.value).sum();
        Self { total, terms }
    }
}

impl SspMetric {
    pub fn new(family: Vec<TestFunction>, mass_channel: MassChannel) -> Result<Self> {
        let dim = family
            .first()
            .ok_or_else(|| Error::InvalidArgument("metric family must be nonempty".into()))?
            .dim();
        for g in &family {
            check_dim(dim, g.dim())?;
        }
        Ok(Self { family, mass_channel })
    }

    pub fn family(&self) -> &[TestFunction] {
        &self.family
    }

    pub fn dim(&self) -> usize {
        self.family[0].dim()
    }

    pub fn mass_channel(&self) -> MassChannel {
        self.mass_channel
    }

    /// The metric built from the first `n` family members.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        Self::new(self.family.iter().take(n).cloned().collect(), self.mass_channel)
    }

    /// Per-term breakdown of the point metric; member `k` (zero based) has weight `2^-(k+1)`.
    pub fn point_terms(&self, x: &[f64], y: &[f64]) -> Result<MetricBreakdown> {
        check_dim(self.dim(), x.len())?;
        check_dim(self.dim(), y.len())?;
        let mut terms = Vec::with_capacity(self.family.len());
        let mut weight = 0.5;
        for (k, g) in self.family.iter().enumerate() {
            let gap = (g.eval(x)? - g.eval(y)?).abs().min(1.0);
            terms.push(MetricTerm {
                index: k + 1,
                name: g.to_string(),
                weight,
                value: weight * gap,
            });
            weight *= 0.5;
        }
        Ok(MetricBreakdown::from_terms(terms))
    }

    pub fn point_metric(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(self.point_terms(x, y)?.total)
    }

    /// Per-term breakdown of the measure metric. The mass channel has weight 1;
    /// family member `k` (zero based) plays the role of `g_{k+2}` with weight `2^-(k+2)`.
    pub fn measure_terms(&self, mu: &ParticleMeasure, nu: &ParticleMeasure) -> Result<MetricBreakdown> {
        check_dim(self.dim(), mu.dim())?;
        check_dim(self.dim(), nu.dim())?;
        let mut terms = Vec::with_capacity(self.family.len() + 1);
        let g0 = &self.mass_channel;
        terms.push(MetricTerm {
            index: 0,
            name: format!("{g0:?}(mass)").to_lowercase(),
            weight: 1.0,
            value: (g0.eval(mu.total_mass()) - g0.eval(nu.total_mass())).abs().min(1.0),
        });
        let mut weight = 0.25;
        for (k, g) in self.family.iter().enumerate() {
            let gap = (mu.integrate(g, true)? - nu.integrate(g, true)?).abs().min(1.0);
            terms.push(MetricTerm {
                index: k + 2,
                name: g.to_string(),
                weight,
                value: weight * gap,
            });
            weight *= 0.5;
        }
        Ok(MetricBreakdown::from_terms(terms))
    }

    pub fn measure_metric(&self, mu: &ParticleMeasure, nu: &ParticleMeasure) -> Result<f64> {
        Ok(self.measure_terms(mu, nu)?.total)
    }
}

/// `max_k |f1(s_k) - f2(s_k)|` over a finite sample; a lower bound on the sup metric.
pub fn sup_distance<T, F1, F2>(f1: F1, f2: F2, sample: &[T]) -> Result<f64>
where
    F1: Fn(&T) -> Result<f64>,
    F2: Fn(&T) -> Result<f64>,
{
    if sample.is_empty() {
        return Err(Error::InvalidArgument("sup distance needs a nonempty sample".into()));
    }
    let mut best: f64 = 0.0;
    for (index, s) in sample.iter().enumerate() {
        let a = f1(s).map_err(|e| e.at_sample(index))?;
        let b = f2(s).map_err(|e| e.at_sample(index))?;
        best = best.max((a - b).abs());
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testfn::{enumerate_family, FamilyKind, FamilySpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn monomials(n: usize) -> SspMetric {
        let fam = enumerate_family(
            &FamilySpec::new(FamilyKind::Monomial, n),
            1,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        SspMetric::new(fam, MassChannel::Arctan).unwrap()
    }

    #[test]
    fn point_metric_examples() {
        let m = monomials(1);
        assert_eq!(m.point_metric(&[0.3], &[0.3]).unwrap(), 0.0);
        assert_eq!(m.point_metric(&[0.0], &[1.0]).unwrap(), 0.5);
        let m = monomials(DEFAULT_TRUNCATION);
        let d = m.point_metric(&[0.0], &[1.0]).unwrap();
        assert!(d < 1.0 - 2f64.powi(-16) + 1e-15);
    }

    #[test]
    fn measure_metric_scale_pair() {
        let m = monomials(DEFAULT_TRUNCATION);
        let mu = ParticleMeasure::from_scalar_atoms(&[(0.2, 0.3), (0.7, 0.9)]).unwrap();
        let nu = mu.scaled(2.0).unwrap();
        let mass = mu.total_mass();
        let expected = (mass.atan() - (2.0 * mass).atan()).abs().min(1.0);
        let b = m.measure_terms(&mu, &nu).unwrap();
        assert_eq!(b.terms[0].value, expected);
        assert!(b.terms[1..].iter().all(|t| t.value == 0.0));
        assert_eq!(m.measure_metric(&mu, &mu).unwrap(), 0.0);
    }

    #[test]
    fn measure_metric_below_cap() {
        let m = monomials(DEFAULT_TRUNCATION);
        let mu = ParticleMeasure::from_scalar_atoms(&[(0.0, 1e-9)]).unwrap();
        let nu = ParticleMeasure::from_scalar_atoms(&[(1.0, 1e9)]).unwrap();
        let d = m.measure_metric(&mu, &nu).unwrap();
        assert!(d < 1.5);
        assert!(d > 1.0);
    }

    #[test]
    fn breakdown_sums_to_total() {
        let m = monomials(5);
        let mu = ParticleMeasure::from_scalar_atoms(&[(0.2, 0.3), (0.7, 0.9)]).unwrap();
        let nu = ParticleMeasure::from_scalar_atoms(&[(0.9, 2.0)]).unwrap();
        let b = m.measure_terms(&mu, &nu).unwrap();
        assert_eq!(b.terms.len(), 6);
        let s: f64 = b.terms.iter().map(|t| t.value).sum();
        assert_eq!(s, b.total);
    }

    #[test]
    fn dimension_mismatch() {
        let m = monomials(2);
        assert!(m.point_metric(&[0.1, 0.2], &[0.1, 0.2]).is_err());
        assert!(SspMetric::new(vec![], MassChannel::Arctan).is_err());
    }

    #[test]
    fn sup_distance_examples() {
        let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
        let d = sup_distance(|x: &f64| Ok(*x), |x: &f64| Ok(x * x), &grid).unwrap();
        assert_eq!(d, 0.25);
        assert_eq!(sup_distance(|_: &f64| Ok(0.0), |_: &f64| Ok(1.0), &grid).unwrap(), 1.0);
        assert_eq!(
            sup_distance(|x: &f64| Ok(x.sin()), |x: &f64| Ok(x.sin()), &grid).unwrap(),
            0.0
        );
        assert!(sup_distance(|x: &f64| Ok(*x), |x: &f64| Ok(*x), &[] as &[f64]).is_err());
    }

    #[test]
    fn sup_distance_reports_failing_sample() {
        let g = TestFunction::monomial(vec![1]).unwrap();
        let sample = [vec![0.5], vec![2.0]];
        let err = sup_distance(|p: &Vec<f64>| g.eval(p), |_| Ok(0.0), &sample).unwrap_err();
        assert!(matches!(err, Error::Sample { index: 1, .. }));
    }
}

//! Compensated summation.
//!
//! [`Neumaier`] is the running accumulator used for gradient and risk
//! reductions. [`ordered_sum`] additionally sorts its terms first, which makes
//! the result a function of the multiset of terms only: any permutation of the
//! input produces the same bits.

/// Neumaier (improved Kahan) running sum.
#[derive(Debug, Default, Clone, Copy)]
pub struct Neumaier {
    sum: f64,
    compensation: f64,
}

impl Neumaier {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl Extend<f64> for Neumaier {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for v in iter {
            self.add(v);
        }
    }
}

/// Compensated sum of an unordered collection of terms.
pub fn ordered_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    let mut acc = Neumaier::new();
    acc.extend(terms);
    acc.value()
}

/// Compensated sum in the given order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(terms: I) -> f64 {
    let mut acc = Neumaier::new();
    acc.extend(terms);
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_cancelled_small_terms() {
        let terms = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(compensated_sum(terms.iter().copied()), 2.0);
        assert_eq!(terms.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn ordered_sum_ignores_permutation() {
        let a = vec![0.1, 0.7, 1e-17, 3.3, -2.2, 0.3];
        let mut b = a.clone();
        b.reverse();
        b.swap(0, 3);
        assert_eq!(ordered_sum(a).to_bits(), ordered_sum(b).to_bits());
    }

    #[test]
    fn empty_sum_is_zero() {
        assert_eq!(ordered_sum(Vec::new()), 0.0);
    }
}

//! Compensated summation with a fixed combination order.

/// Neumaier-compensated running sum.
///
/// Partial sums built over fixed-size chunks and merged in chunk order give
/// the same bits no matter how many threads produced the chunks.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
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

    /// Folds another partial sum into this one.
    #[inline]
    pub fn merge(&mut self, other: &KahanSum) {
        self.add(other.sum);
        self.add(other.compensation);
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut k = KahanSum::new();
        for v in iter {
            k.add(v);
        }
        k
    }
}

impl Extend<f64> for KahanSum {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for v in iter {
            self.add(v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_cancelled_terms() {
        let values = [1.0, 1e100, 1.0, -1e100];
        let naive: f64 = values.iter().sum();
        let k: KahanSum = values.iter().copied().collect();
        assert_eq!(naive, 0.0);
        assert_eq!(k.value(), 2.0);
    }

    #[test]
    fn many_small_terms() {
        let k: KahanSum = std::iter::repeat_n(0.1, 1_000_000).collect();
        assert!((k.value() - 100_000.0).abs() < 1e-9);
    }

    #[test]
    fn merge_matches_single_pass_closely() {
        let xs: Vec<f64> = (0..10_000).map(|i| ((i * 7919) % 1000) as f64 * 1e-3 - 0.5).collect();
        let whole: KahanSum = xs.iter().copied().collect();
        let mut merged = KahanSum::new();
        for chunk in xs.chunks(333) {
            merged.merge(&chunk.iter().copied().collect());
        }
        assert!((whole.value() - merged.value()).abs() < 1e-12);
    }
}

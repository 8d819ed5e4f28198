//! Small numeric helpers shared across modules.

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::iter::FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = KahanSum::new();
        for v in iter {
            s.add(v);
        }
        s
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<KahanSum>().value()
}

/// Exact binomial coefficient, `None` on overflow. Zero when `k > n`.
pub fn binomial(n: u64, k: u64) -> Option<u64> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

/// Binomial coefficient allowing a negative top argument (yields zero), used by
/// inclusion-exclusion counting.
pub fn binomial_signed(n: i64, k: u64) -> u64 {
    if n < 0 {
        0
    } else {
        binomial(n as u64, k).expect("binomial overflow")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomials() {
        assert_eq!(binomial(5, 2), Some(10));
        assert_eq!(binomial(503, 3), Some(21_084_251));
        assert_eq!(binomial(3, 5), Some(0));
        assert_eq!(binomial(0, 0), Some(1));
        assert_eq!(binomial(200, 100), None);
    }

    #[test]
    fn compensated_beats_naive() {
        let xs = std::iter::once(1.0).chain(std::iter::repeat_n(1e-16, 10_000));
        let s = compensated_sum(xs);
        assert!((s - (1.0 + 1e-12)).abs() < 1e-20);
    }
}

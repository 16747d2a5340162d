//! Compensated (Neumaier) summation.
//!
//! Stepsize vectors are sums over matrix entries that feed directly into
//! step lengths, so accumulation error must stay at the 1-ulp level and
//! be independent of summation chunking.

/// Running compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sum {
    s: f64,
    c: f64,
}

impl Sum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.s + x;
        if self.s.abs() >= x.abs() {
            self.c += (self.s - t) + x;
        } else {
            self.c += (x - t) + self.s;
        }
        self.s = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.s + self.c
    }
}

/// Compensated sum of an iterator of values, in iteration order.
pub fn sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut acc = Sum::new();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Compensated dot product `sum_i a_i * b_i`.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    sum(a.iter().zip(b).map(|(x, y)| x * y))
}

//! Compensated (Neumaier) summation for deterministic, low-error reductions.
//!
//! All field and energy sums in this crate accumulate through this type in a
//! fixed order, so results are reproducible bit-for-bit regardless of the
//! number of worker threads.

#[derive(Debug, Clone, Copy, Default)]
pub struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline(always)]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline(always)]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Sum an iterator with compensation, in iteration order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    let mut acc = Compensated::new();
    for v in iter {
        acc.add(v);
    }
    acc.value()
}

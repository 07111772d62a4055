//! Compensated summation helpers shared across modules.

/// Neumaier variant of Kahan summation; running form.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct RunningSum {
    sum: f64,
    comp: f64,
}

impl RunningSum {
    pub(crate) fn new() -> Self {
        Self::default()
    }

    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated sum of a slice.
pub(crate) fn neumaier_sum(xs: &[f64]) -> f64 {
    let mut acc = RunningSum::new();
    for &x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Compensated inclusive prefix sums. `out[i]` holds the sum of `xs[0..=i]`.
pub(crate) fn neumaier_cumsum(xs: &[f64]) -> Vec<f64> {
    let mut acc = RunningSum::new();
    let mut out = Vec::with_capacity(xs.len());
    for &x in xs {
        acc.add(x);
        out.push(acc.value());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sums_cancelling_terms_exactly() {
        let xs = [1e16, 1.0, -1e16];
        assert_eq!(neumaier_sum(&xs), 1.0);
    }

    #[test]
    fn cumsum_matches_running_tail() {
        let xs: Vec<f64> = (1..=1000).map(|i| 1.0 / i as f64).collect();
        let cums = neumaier_cumsum(&xs);
        assert_eq!(cums.len(), xs.len());
        let total = neumaier_sum(&xs);
        assert!((cums[xs.len() - 1] - total).abs() < 1e-15);
    }
}

/// Neumaier compensated summation. The result depends on insertion order only
/// through rounding of the compensation term, so a fixed order gives a fixed
/// result.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Sample mean and standard error of the mean.
pub(crate) fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mut acc = Compensated::default();
    for &x in xs {
        acc.add(x);
    }
    let mean = acc.value() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let mut var = Compensated::default();
    for &x in xs {
        var.add((x - mean) * (x - mean));
    }
    let sd = (var.value() / (n - 1) as f64).sqrt();
    (mean, sd / (n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_recovers_small_terms() {
        let mut acc = Compensated::default();
        acc.add(1e16);
        acc.add(1.0);
        acc.add(-1e16);
        assert_eq!(acc.value(), 1.0);
    }

    #[test]
    fn mean_and_error() {
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m - 2.5).abs() < 1e-15);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((s - sd / 2.0).abs() < 1e-15);
    }
}

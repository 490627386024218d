//! Sample statistics and standard-error gates for Monte Carlo checks.

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleStats {
    pub count: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// Standard error of the mean.
    pub se_mean: f64,
    /// Standard error of the sample variance, `√((m₄ - s⁴)/N)`.
    pub se_variance: f64,
}

impl SampleStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        let count = samples.len();
        assert!(count >= 2, "need at least two samples");
        let nf = count as f64;
        let mean = samples.iter().sum::<f64>() / nf;
        let (m2, m4) = samples.iter().fold((0.0, 0.0), |(a, b), x| {
            let d = x - mean;
            (a + d * d, b + d * d * d * d)
        });
        let variance = m2 / (nf - 1.0);
        let central2 = m2 / nf;
        let central4 = m4 / nf;
        Self {
            count,
            mean,
            variance,
            se_mean: (variance / nf).sqrt(),
            se_variance: ((central4 - central2 * central2).max(0.0) / nf).sqrt(),
        }
    }

    /// `|mean - target|` in units of the standard error.
    pub fn mean_z(&self, target: f64) -> f64 {
        z_score(self.mean - target, self.se_mean)
    }

    pub fn variance_z(&self, target: f64) -> f64 {
        z_score(self.variance - target, self.se_variance)
    }
}

pub fn z_score(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff.abs() / se
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Median of a non-empty slice (mean of the middle pair for even length).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// `(max - min) / min` of positive values.
pub fn relative_spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    (max - min) / min.abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_moments() {
        let s = SampleStats::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.variance - 5.0 / 3.0).abs() < 1e-15);
        assert!((s.se_mean - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn median_and_spread() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(relative_spread(&[2.0, 3.0, 2.5]), 0.5);
    }

    #[test]
    fn z_of_exact_match() {
        assert_eq!(z_score(0.0, 0.0), 0.0);
        assert!(z_score(1.0, 0.0).is_infinite());
    }
}

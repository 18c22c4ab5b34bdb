use serde::Serialize;

/// Two-sided normal quantile for a 99% interval.
pub const Z_99: f64 = 2.575_829_303_548_901;

/// Monte Carlo point estimate with standard error and a normal-approximation
/// 99% confidence interval clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateCI {
    pub point: f64,
    pub std_error: f64,
    pub n_trials: u64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl EstimateCI {
    /// Binomial proportion `successes / n`.
    pub fn from_proportion(successes: u64, n: u64) -> Self {
        assert!(n > 0, "proportion over zero trials");
        let p = successes as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        Self::with_se(p, se, n)
    }

    /// Sample mean of values in `[0, 1]` with the usual standard error of the
    /// mean. Summation is sequential in slice order so the result is
    /// bit-reproducible.
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        assert!(n > 0, "mean over zero samples");
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
            (ss / (n - 1) as f64 / n as f64).sqrt()
        } else {
            0.0
        };
        Self::with_se(mean, se, n as u64)
    }

    fn with_se(point: f64, std_error: f64, n_trials: u64) -> Self {
        let ci_low = (point - Z_99 * std_error).clamp(0.0, 1.0).min(point);
        let ci_high = (point + Z_99 * std_error).clamp(0.0, 1.0).max(point);
        Self {
            point,
            std_error,
            n_trials,
            ci_low,
            ci_high,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proportion_bounds() {
        let e = EstimateCI::from_proportion(0, 10);
        assert_eq!(e.point, 0.0);
        assert_eq!(e.std_error, 0.0);
        assert_eq!((e.ci_low, e.ci_high), (0.0, 0.0));

        let e = EstimateCI::from_proportion(250, 1000);
        assert!((e.std_error - (0.25f64 * 0.75 / 1000.0).sqrt()).abs() < 1e-15);
        assert!(e.ci_low < e.point && e.point < e.ci_high);
        assert!(e.ci_low >= 0.0 && e.ci_high <= 1.0);
    }

    #[test]
    fn constant_samples_have_zero_error() {
        let e = EstimateCI::from_samples(&[0.5; 17]);
        assert_eq!(e.point, 0.5);
        assert_eq!(e.std_error, 0.0);
    }
}

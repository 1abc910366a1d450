//! Small statistical helpers shared by the Monte Carlo checks.

use serde::Serialize;

/// Standard normal quantile at 0.99 (one-sided 99% confidence).
pub const Z_99_ONE_SIDED: f64 = 2.326_347_874_040_841;

/// Acceptance slack used for one-sided mean-versus-bound comparisons.
pub const SE_SLACK: f64 = 3.0;

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl MeanEstimate {
    /// Sequential two-pass fold in slice order, so results are reproducible
    /// bit for bit.
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                se: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return Self { mean, se: 0.0, n };
        }
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        let var = ss / (n as f64 - 1.0);
        Self {
            mean,
            se: (var / n as f64).sqrt(),
            n,
        }
    }

    /// True unless the estimate exceeds `bound` by more than `slack` standard errors.
    pub fn within_upper(&self, bound: f64, slack: f64) -> bool {
        self.mean - slack * self.se <= bound
    }

    /// `|mean - target| <= slack * se`.
    pub fn agrees_with(&self, target: f64, slack: f64) -> bool {
        (self.mean - target).abs() <= slack * self.se
    }
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let centre = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_se() {
        let e = MeanEstimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        let var = (2.25 + 0.25 + 0.25 + 2.25) / 3.0;
        assert!((e.se - (var / 4.0f64).sqrt()).abs() < 1e-15);
        assert!(e.within_upper(2.0, 3.0));
        assert!(!e.within_upper(0.0, 1.0));
    }

    #[test]
    fn wilson_contains_estimate() {
        let (lo, hi) = wilson_interval(30, 100, Z_99_ONE_SIDED);
        assert!(lo < 0.3 && 0.3 < hi);
        let (lo, hi) = wilson_interval(0, 1000, Z_99_ONE_SIDED);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.01);
    }
}

//! Non-recursive batched-means baselines.
//!
//! These hold the whole sample in memory (O(n)) and exist for comparison
//! against the streaming estimator: the overlapping form slides a window of
//! length `l` one step at a time, the non-overlapping form tiles the sample
//! with disjoint batches and drops the ragged tail.

use crate::accum::{self, CompensatedSum};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ReferenceError {
    #[error("batch length {l} invalid for sample of size {n}")]
    InvalidBatchLength { l: usize, n: usize },
}

/// Batch configuration: length and whether batches overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSpec {
    pub len: usize,
    pub overlap: bool,
}

/// Batched-means TAVC estimate centered at the sample mean.
///
/// Overlapping: `l/(n−l+1) · Σ_{j} (batch mean_j − X̄)²` over all `n−l+1`
/// sliding batches. Non-overlapping: `l/⌊n/l⌋ · Σ_b (batch mean_b − X̄)²`
/// over the `⌊n/l⌋` full disjoint batches.
pub fn batched_means_tavc(xs: &[f64], spec: BatchSpec) -> Result<f64, ReferenceError> {
    let center = accum::sum(xs) / xs.len().max(1) as f64;
    batched_means_about(xs, spec, center)
}

/// Same estimate centered at a supplied value (e.g. a known mean, so the
/// `X̄` in the formula is replaced by it).
pub fn batched_means_about(
    xs: &[f64],
    spec: BatchSpec,
    center: f64,
) -> Result<f64, ReferenceError> {
    let n = xs.len();
    let l = spec.len;
    if l < 1 || l > n {
        return Err(ReferenceError::InvalidBatchLength { l, n });
    }
    // prefix sums make each batch sum O(1)
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut run = CompensatedSum::new();
    for &x in xs {
        run.add(x);
        prefix.push(run.value());
    }
    let mut dev_sq = CompensatedSum::new();
    if spec.overlap {
        for j in 0..=(n - l) {
            let mean = (prefix[j + l] - prefix[j]) / l as f64;
            let d = mean - center;
            dev_sq.add(d * d);
        }
        Ok(l as f64 * dev_sq.value() / (n - l + 1) as f64)
    } else {
        let batches = n / l;
        for b in 0..batches {
            let mean = (prefix[(b + 1) * l] - prefix[b * l]) / l as f64;
            let d = mean - center;
            dev_sq.add(d * d);
        }
        Ok(l as f64 * dev_sq.value() / batches as f64)
    }
}

/// MSE-optimal batch length `⌊λ*·n^{1/3}⌋` with `λ*³ = 3θ²/(2σ⁴)`,
/// floored at 1 (θ = 0 degenerates to 1).
pub fn optimal_batch_length(theta: f64, sigma2: f64, n: usize) -> usize {
    assert!(sigma2 > 0.0, "sigma2 must be positive");
    let lambda = (3.0 * theta * theta / (2.0 * sigma2 * sigma2)).cbrt();
    ((lambda * (n as f64).cbrt()).floor() as usize).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    const XS: [f64; 4] = [1.0, 2.0, 3.0, 4.0];

    fn ov(l: usize) -> BatchSpec {
        BatchSpec {
            len: l,
            overlap: true,
        }
    }

    #[test]
    fn overlapping_fixtures() {
        assert_eq!(batched_means_tavc(&XS, ov(1)).unwrap(), 1.25);
        assert_eq!(batched_means_tavc(&XS, ov(2)).unwrap(), 4.0 / 3.0);
        assert_eq!(batched_means_tavc(&XS, ov(4)).unwrap(), 0.0);
    }

    #[test]
    fn non_overlapping_small_case() {
        // batches (1,2), (3,4): means 1.5, 3.5, mean 2.5
        // l/m * ((−1)² + 1²) = 2/2 * 2 = 2
        let spec = BatchSpec {
            len: 2,
            overlap: false,
        };
        assert_eq!(batched_means_tavc(&XS, spec).unwrap(), 2.0);
        // ragged tail is dropped: 5 points, l=2 -> batches (1,2),(3,4)
        let xs5 = [1.0, 2.0, 3.0, 4.0, 100.0];
        let xb: f64 = 22.0;
        let want = 2.0 / 2.0 * ((1.5 - xb).powi(2) + (3.5 - xb).powi(2));
        assert_eq!(batched_means_tavc(&xs5, spec).unwrap(), want);
    }

    #[test]
    fn l1_overlapping_is_population_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..257)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * 3.0)
            .collect();
        let xb = xs.iter().sum::<f64>() / xs.len() as f64;
        let pop: f64 = xs.iter().map(|x| (x - xb) * (x - xb)).sum::<f64>() / xs.len() as f64;
        let got = batched_means_tavc(&xs, ov(1)).unwrap();
        assert!((got - pop).abs() <= 1e-12 * pop);
    }

    #[test]
    fn shift_and_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs: Vec<f64> = (0..200).map(|_| rng.sample(StandardNormal)).collect();
        for spec in [
            ov(8),
            BatchSpec {
                len: 8,
                overlap: false,
            },
        ] {
            let base = batched_means_tavc(&xs, spec).unwrap();
            let shifted: Vec<f64> = xs.iter().map(|x| x + 17.5).collect();
            let got = batched_means_tavc(&shifted, spec).unwrap();
            assert!((got - base).abs() <= 1e-9 * base.abs().max(1.0));
            let scaled: Vec<f64> = xs.iter().map(|x| x * 4.0).collect();
            assert_eq!(batched_means_tavc(&scaled, spec).unwrap(), base * 16.0);
        }
    }

    #[test]
    fn invalid_lengths() {
        assert!(matches!(
            batched_means_tavc(&XS, ov(0)),
            Err(ReferenceError::InvalidBatchLength { .. })
        ));
        assert!(batched_means_tavc(&XS, ov(5)).is_err());
    }

    #[test]
    fn optimal_length_fixtures() {
        assert_eq!(optimal_batch_length(0.0, 1.0, 1000), 1);
        // AR(1) phi=0.5: theta=-16/3, sigma2=4 -> lambda*=(8/3)^(1/3)
        assert_eq!(optimal_batch_length(-16.0 / 3.0, 4.0, 10_000), 29);
        // lambda* = 1 by construction: theta^2 = 2/3, sigma2 = 1
        let theta = (2.0f64 / 3.0).sqrt();
        assert_eq!(optimal_batch_length(theta, 1.0, 1000), 10);
        assert_eq!(optimal_batch_length(theta, 1.0, 1_000_000), 100);
    }

    #[test]
    fn iid_monte_carlo_sanity() {
        // fixed l on iid data: mean estimate within 5% of gamma(0)=1
        let n = 10_000;
        let reps = 500;
        let mut acc = 0.0;
        for rep in 0..reps {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            rng.set_stream(rep);
            let xs: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            acc += batched_means_tavc(&xs, ov(20)).unwrap();
        }
        let mean = acc / reps as f64;
        assert!((0.95..=1.05).contains(&mean), "mean {mean}");
    }
}

//! Data-driven and analytic selection of the schedule constant.
//!
//! The streaming estimator needs the power-law constant `c` fixed before the
//! stream starts. Two routes are provided:
//!
//! - analytic: when the bias constant `θ = −2Σ_{k≥1} k·γ(k)` and the TAVC
//!   `σ²` are known, the MSE-optimal value is `c* = 4√2|θ|/(3σ²)`;
//! - pilot: run the Bühlmann–Künsch bandwidth iteration on a buffered prefix
//!   of the stream, read off a block length `l̂`, and map it to
//!   `ĉ = (4λ̂/3)^{3/2}` with `λ̂ = l̂/n^{1/3}`.
//!
//! The pilot is the one deliberately O(n)-memory component in the crate: it
//! sees a fixed-size prefix once, before streaming begins.

use crate::accum::{self, CompensatedSum};
use rustfft::{num_complex::Complex, FftPlanner};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TuningError {
    #[error("lag {k} out of range for sample of size {n}")]
    LagOutOfRange { k: i64, n: usize },
    #[error("pilot sample too short: need at least {need}, have {have}")]
    TooShort { need: usize, have: usize },
    #[error("degenerate series: all autocovariances vanish")]
    DegenerateSeries,
    #[error("tuning failed: bandwidth iteration left the valid range")]
    TuningFailed,
    #[error("sigma2 must be positive, got {0}")]
    InvalidSigma2(f64),
    #[error("parameters outside regime: (q - 1/2 + 2/alpha) must be positive")]
    OutsideRegime,
}

/// Pilot-study outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuningResult {
    /// Selected block length `l̂ ≥ 1`.
    pub block_len: u64,
    /// `λ̂ = l̂ / n^{1/3}`.
    pub lambda_hat: f64,
    /// `ĉ = (4λ̂/3)^{3/2}`.
    pub c_hat: f64,
    /// Pilot sample size.
    pub n: usize,
    /// Selected bandwidth `b̂` (the block length is its rounded inverse).
    pub bandwidth: f64,
}

/// Analytic optima for a process with known `θ` and `σ²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticConstants {
    pub theta: f64,
    pub sigma2: f64,
    /// `c* = 4√2|θ|/(3σ²)`.
    pub c_star: f64,
    /// `λ*` with `λ*³ = 3θ²/(2σ⁴)`.
    pub lambda_star: f64,
}

impl AnalyticConstants {
    pub fn new(theta: f64, sigma2: f64) -> Result<Self, TuningError> {
        Ok(Self {
            theta,
            sigma2,
            c_star: c_star(theta, sigma2)?,
            lambda_star: (3.0 * theta * theta / (2.0 * sigma2 * sigma2)).cbrt(),
        })
    }
}

/// Biased (1/n-normalized) sample autocovariance at lag `k`, symmetric in `k`.
pub fn autocov(xs: &[f64], k: i64) -> Result<f64, TuningError> {
    let n = xs.len();
    let lag = k.unsigned_abs() as usize;
    if lag >= n {
        return Err(TuningError::LagOutOfRange { k, n });
    }
    let mean = accum::sum(xs) / n as f64;
    let mut acc = CompensatedSum::new();
    for i in 0..n - lag {
        acc.add((xs[i] - mean) * (xs[i + lag] - mean));
    }
    Ok(acc.value() / n as f64)
}

/// All lags 0..n−1 of the biased autocovariance at once, via FFT
/// (O(n log n)). Agrees with [`autocov`] up to float rounding; the direct
/// form stays the reference in tests.
pub fn autocov_all(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = accum::sum(xs) / n as f64;
    let mut m = 1usize;
    while m < 2 * n {
        m <<= 1;
    }
    let mut buf: Vec<Complex<f64>> = xs
        .iter()
        .map(|&x| Complex::new(x - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(m)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut buf);
    for z in buf.iter_mut() {
        *z = Complex::new(z.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    // inverse is unnormalized: divide by m, then by n for the biased gamma
    buf[..n]
        .iter()
        .map(|z| z.re / (m as f64 * n as f64))
        .collect()
}

/// Tukey–Hanning window on support |x| ≤ 1/2.
fn w_th(x: f64) -> f64 {
    if x.abs() > 0.5 {
        0.0
    } else {
        (1.0 + (std::f64::consts::PI * x).cos()) / 2.0
    }
}

/// Split-cosine window: flat to 0.8, cosine taper to 1.
fn w_sc(x: f64) -> f64 {
    let ax = x.abs();
    if ax < 0.8 {
        1.0
    } else if ax <= 1.0 {
        (1.0 + (5.0 * (ax - 0.8) * std::f64::consts::PI).cos()) / 2.0
    } else {
        0.0
    }
}

const MIN_PILOT: usize = 50;

/// Bühlmann–Künsch block-length selection on a pilot sample.
///
/// Four fixed-point iterations of the bandwidth
/// `b_m = n^{−1/3}·(Σγ̂(k)² / (6·Σ w_SC(k·b_{m−1}·n^{4/21})·k²·γ̂(k)²))^{1/3}`
/// starting from `b_0 = 1/n`, then the final ratio with the Tukey–Hanning
/// window in the numerator and `w_SC·|k|` in the denominator. All sums run
/// over the symmetric lag range; the windows cut them off after
/// `O(1/(b·n^{4/21}))` terms, so each iteration is cheap once the
/// autocovariances are in hand.
pub fn bk_block_length(xs: &[f64]) -> Result<TuningResult, TuningError> {
    let n = xs.len();
    if n < MIN_PILOT {
        return Err(TuningError::TooShort {
            need: MIN_PILOT,
            have: n,
        });
    }
    let g = autocov_all(xs);
    if g[0] <= 0.0 {
        return Err(TuningError::DegenerateSeries);
    }

    // numerator of step 2 is unwindowed: gamma(0)^2 + 2*sum_{k>=1} gamma(k)^2
    let mut num2 = CompensatedSum::new();
    num2.add(g[0] * g[0]);
    for &gk in &g[1..] {
        num2.add(2.0 * gk * gk);
    }
    let a = num2.value();

    let scale = (n as f64).powf(4.0 / 21.0);
    let n_cbrt_inv = (n as f64).powf(-1.0 / 3.0);
    let mut b = 1.0 / n as f64;
    for _ in 0..4 {
        let cutoff = window_cutoff(1.0, b, scale, n);
        let mut den = CompensatedSum::new();
        for (k, &gk) in g.iter().enumerate().take(cutoff + 1).skip(1) {
            let w = w_sc(k as f64 * b * scale);
            den.add(2.0 * w * (k * k) as f64 * gk * gk);
        }
        let d = 6.0 * den.value();
        if !(d > 0.0 && d.is_finite()) {
            return Err(TuningError::TuningFailed);
        }
        b = n_cbrt_inv * (a / d).cbrt();
        if !(b > 0.0 && b.is_finite()) {
            return Err(TuningError::TuningFailed);
        }
    }

    let cut_th = window_cutoff(0.5, b, scale, n);
    let mut num = CompensatedSum::new();
    num.add(w_th(0.0) * g[0]);
    for (k, &gk) in g.iter().enumerate().take(cut_th + 1).skip(1) {
        num.add(2.0 * w_th(k as f64 * b * scale) * gk);
    }
    let cut_sc = window_cutoff(1.0, b, scale, n);
    let mut den = CompensatedSum::new();
    for (k, &gk) in g.iter().enumerate().take(cut_sc + 1).skip(1) {
        den.add(2.0 * w_sc(k as f64 * b * scale) * k as f64 * gk);
    }
    let (ns, ds) = (num.value(), den.value());
    let bhat = n_cbrt_inv * (2.0 * ns * ns / (3.0 * ds * ds)).cbrt();
    if !(bhat > 0.0 && bhat.is_finite()) {
        return Err(TuningError::TuningFailed);
    }

    // closest integer to 1/b, ties away from zero, floored at 1
    let block_len = ((1.0 / bhat).round() as u64).max(1);
    let lambda_hat = block_len as f64 / (n as f64).cbrt();
    Ok(TuningResult {
        block_len,
        lambda_hat,
        c_hat: (4.0 * lambda_hat / 3.0).powf(1.5),
        n,
        bandwidth: bhat,
    })
}

/// Largest lag with nonzero window weight: `k·b·scale ≤ support`.
fn window_cutoff(support: f64, b: f64, scale: f64, n: usize) -> usize {
    let k = (support / (b * scale)).floor();
    if !k.is_finite() || k < 0.0 {
        return 0;
    }
    (k as usize).min(n - 1)
}

/// Pilot estimate of the schedule constant: `ĉ = (4λ̂/3)^{3/2}`.
pub fn c_hat_from_pilot(xs: &[f64]) -> Result<f64, TuningError> {
    Ok(bk_block_length(xs)?.c_hat)
}

/// `θ = −2·Σ_{k=1}^{K} k·γ(k)` from covariances at lags 1..K. Truncation is
/// the caller's concern.
pub fn theta_of_covs(gamma: &[f64]) -> f64 {
    let mut acc = CompensatedSum::new();
    for (i, &gk) in gamma.iter().enumerate() {
        acc.add((i + 1) as f64 * gk);
    }
    -2.0 * acc.value()
}

/// MSE-optimal schedule constant `c* = 4√2·|θ|/(3σ²)`.
pub fn c_star(theta: f64, sigma2: f64) -> Result<f64, TuningError> {
    if sigma2 <= 0.0 {
        return Err(TuningError::InvalidSigma2(sigma2));
    }
    Ok(4.0 * std::f64::consts::SQRT_2 * theta.abs() / (3.0 * sigma2))
}

/// Rate-optimal schedule exponent `p = (1/2 + q)/(q − 1/2 + 2/α)` for
/// dependence-decay order `q ∈ (0,1]` and moment order `α > 2`.
pub fn optimal_p(q: f64, alpha: f64) -> Result<f64, TuningError> {
    if !(q > 0.0 && q <= 1.0 && alpha > 2.0) {
        return Err(TuningError::OutsideRegime);
    }
    let denom = q - 0.5 + 2.0 / alpha;
    if denom <= 0.0 {
        return Err(TuningError::OutsideRegime);
    }
    Ok((0.5 + q) / denom)
}

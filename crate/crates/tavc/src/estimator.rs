//! Streaming TAVC estimation.
//!
//! The estimator keeps one running block sum `W` over a growing block
//! schedule and the scalar accumulators
//!
//! - `V = Σ W_i²` and `v = Σ l_i`  → `σ̂² = V/v` when the mean is known,
//! - `U = Σ l_i W_i`, `q = Σ l_i²` and `X̄`  → `V' = V − 2UX̄ + qX̄²`,
//!   `σ̂² = V'/v` when the mean must be estimated on the fly.
//!
//! Every update touches a fixed handful of scalars, so memory is O(1) in the
//! stream length. The float accumulators use compensated summation so that
//! week-long runs do not lose the slowly-decaying estimation error to
//! rounding.

use crate::accum::CompensatedSum;
use crate::normal::normal_quantile;
use crate::schedule::{BlockCursor, BlockSchedule};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("non-finite input value rejected")]
    NonFiniteInput,
    #[error("no data")]
    NoData,
    #[error("need at least {need} observations, have {have}")]
    InsufficientData { need: u64, have: u64 },
    #[error("alpha must lie strictly between 0 and 1, got {0}")]
    InvalidAlpha(f64),
    #[error("degenerate variance estimate (sigma-hat = 0)")]
    DegenerateVariance,
    #[error("cannot parse snapshot line: {0}")]
    BadSnapshot(String),
}

/// Whether the process mean is known up front.
///
/// With `KnownMean(μ)` inputs are centered before entering the block sums and
/// `σ̂² = V/v` directly. With `UnknownMean` the running sample mean centers
/// the estimate through the `V'` correction.
///
/// The two are not interchangeable: `KnownMean(μ)` with `μ` set to the final
/// sample mean centers every block sum by the same constant, while `V'`
/// subtracts `l_i·X̄` per block; except for degenerate all-equal input the
/// results differ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    KnownMean(f64),
    UnknownMean,
}

/// A point-in-time TAVC estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TavcEstimate {
    /// `σ̂²`, clamped at zero.
    pub sigma2: f64,
    /// Observations consumed.
    pub n: u64,
    /// Normalizer `v_n`.
    pub v: u64,
    /// True when rounding produced a negative `V'` that was clamped to 0.
    pub clamped: bool,
}

/// O(1)-memory recursive TAVC estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct TavcEstimator {
    cursor: BlockCursor,
    mode: Mode,
    n: u64,
    v: u64,
    q: u64,
    /// Current block sum `W_n` (of centered inputs under `KnownMean`).
    block_sum: f64,
    /// `V_n = Σ W_i²`.
    sq_sum: CompensatedSum,
    /// `U_n = Σ l_i W_i`.
    weighted_sum: CompensatedSum,
    /// Running mean of the raw inputs, updated incrementally.
    mean: CompensatedSum,
}

impl TavcEstimator {
    pub fn new(schedule: BlockSchedule, mode: Mode) -> Self {
        Self {
            cursor: BlockCursor::new(schedule),
            mode,
            n: 0,
            v: 0,
            q: 0,
            block_sum: 0.0,
            sq_sum: CompensatedSum::new(),
            weighted_sum: CompensatedSum::new(),
            mean: CompensatedSum::new(),
        }
    }

    /// Consume one observation. Rejects NaN/±∞ without touching the state.
    pub fn update(&mut self, x: f64) -> Result<(), EstimatorError> {
        if !x.is_finite() {
            return Err(EstimatorError::NonFiniteInput);
        }
        let centered = match self.mode {
            Mode::KnownMean(mu) => x - mu,
            Mode::UnknownMean => x,
        };
        let n1 = self.n + 1;
        let fresh_block = self.cursor.advance(n1);
        self.block_sum = if fresh_block {
            centered
        } else {
            self.block_sum + centered
        };
        let len = n1 - self.cursor.start() + 1;
        self.v += len;
        self.q += len * len;
        self.sq_sum.add(self.block_sum * self.block_sum);
        self.weighted_sum.add(len as f64 * self.block_sum);
        self.mean.add((x - self.mean.value()) / n1 as f64);
        self.n = n1;
        Ok(())
    }

    /// Current estimate `σ̂² = V/v` (known mean) or `V'/v` (unknown mean).
    pub fn tavc(&self) -> Result<TavcEstimate, EstimatorError> {
        if self.n == 0 {
            return Err(EstimatorError::NoData);
        }
        let raw = self.v_prime();
        let clamped = raw < 0.0;
        Ok(TavcEstimate {
            sigma2: if clamped { 0.0 } else { raw / self.v as f64 },
            n: self.n,
            v: self.v,
            clamped,
        })
    }

    /// `V'_n` (equals `V_n` under `KnownMean`), before clamping.
    fn v_prime(&self) -> f64 {
        let v_n = self.sq_sum.value();
        match self.mode {
            Mode::KnownMean(_) => v_n,
            Mode::UnknownMean => {
                let xb = self.mean.value();
                v_n - 2.0 * self.weighted_sum.value() * xb + self.q as f64 * xb * xb
            }
        }
    }

    /// Two-sided `(1−α)` confidence interval for the mean,
    /// `X̄ ± z_{1−α/2}·σ̂/√n`. Needs `UnknownMean` mode and `n ≥ 2`.
    pub fn confidence_interval(&self, alpha: f64) -> Result<(f64, f64), EstimatorError> {
        self.ci_half_width(alpha, (self.n as f64).sqrt())
            .map(|hw| (self.mean.value() - hw, self.mean.value() + hw))
    }

    /// Alternative interval scaled by `√v_n` instead of `√n`. This matches a
    /// normalization that appears alongside the recursion in the literature
    /// but is not dimensionally consistent with the CLT for the sample mean;
    /// it is exposed for comparison only and no coverage is claimed.
    pub fn confidence_interval_vn(&self, alpha: f64) -> Result<(f64, f64), EstimatorError> {
        self.ci_half_width(alpha, (self.v as f64).sqrt())
            .map(|hw| (self.mean.value() - hw, self.mean.value() + hw))
    }

    fn ci_half_width(&self, alpha: f64, denom: f64) -> Result<f64, EstimatorError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(EstimatorError::InvalidAlpha(alpha));
        }
        if !matches!(self.mode, Mode::UnknownMean) || self.n < 2 {
            return Err(EstimatorError::InsufficientData {
                need: 2,
                have: self.n,
            });
        }
        let sigma = self.tavc()?.sigma2.sqrt();
        let z = normal_quantile(1.0 - alpha / 2.0);
        Ok(z * sigma / denom)
    }

    /// `√n·|X̄ − μ₀|/σ̂` for testing `μ = μ₀`.
    pub fn t_statistic(&self, mu0: f64) -> Result<f64, EstimatorError> {
        if self.n < 2 {
            return Err(EstimatorError::InsufficientData {
                need: 2,
                have: self.n,
            });
        }
        let sigma = self.tavc()?.sigma2.sqrt();
        if sigma == 0.0 {
            return Err(EstimatorError::DegenerateVariance);
        }
        Ok((self.n as f64).sqrt() * (self.mean.value() - mu0).abs() / sigma)
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// Running mean of the raw inputs (0 before any data).
    pub fn mean(&self) -> f64 {
        self.mean.value()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn schedule(&self) -> &BlockSchedule {
        self.cursor.schedule()
    }

    /// Copy of the stored tuple `(n, k, t, v, q, U, V, W, X̄)`.
    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            n: self.n,
            block: self.cursor.block(),
            start: self.cursor.start(),
            v: self.v,
            q: self.q,
            weighted_sum: self.weighted_sum.value(),
            sq_sum: self.sq_sum.value(),
            block_sum: self.block_sum,
            mean: self.mean.value(),
        }
    }

    /// Rebuild an estimator from a checkpoint. The compensation terms of the
    /// float accumulators are not part of the snapshot format and restart at
    /// zero; everything else resumes exactly.
    pub fn restore(schedule: BlockSchedule, mode: Mode, snap: &Snapshot) -> Self {
        Self {
            cursor: BlockCursor::restore(schedule, snap.block, snap.start),
            mode,
            n: snap.n,
            v: snap.v,
            q: snap.q,
            block_sum: snap.block_sum,
            sq_sum: CompensatedSum::from_value(snap.sq_sum),
            weighted_sum: CompensatedSum::from_value(snap.weighted_sum),
            mean: CompensatedSum::from_value(snap.mean),
        }
    }
}

/// Serializable estimator state: one CSV line `n,k,t,v,q,U,V,W,mean`.
/// Floats are written in shortest round-trip form, so parsing the line
/// recovers them bit-exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snapshot {
    pub n: u64,
    pub block: u64,
    pub start: u64,
    pub v: u64,
    pub q: u64,
    pub weighted_sum: f64,
    pub sq_sum: f64,
    pub block_sum: f64,
    pub mean: f64,
}

impl fmt::Display for Snapshot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{},{},{}",
            self.n,
            self.block,
            self.start,
            self.v,
            self.q,
            self.weighted_sum,
            self.sq_sum,
            self.block_sum,
            self.mean
        )
    }
}

impl FromStr for Snapshot {
    type Err = EstimatorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || EstimatorError::BadSnapshot(s.to_string());
        let parts: Vec<&str> = s.trim().split(',').collect();
        if parts.len() != 9 {
            return Err(err());
        }
        Ok(Snapshot {
            n: parts[0].parse().map_err(|_| err())?,
            block: parts[1].parse().map_err(|_| err())?,
            start: parts[2].parse().map_err(|_| err())?,
            v: parts[3].parse().map_err(|_| err())?,
            q: parts[4].parse().map_err(|_| err())?,
            weighted_sum: parts[5].parse().map_err(|_| err())?,
            sq_sum: parts[6].parse().map_err(|_| err())?,
            block_sum: parts[7].parse().map_err(|_| err())?,
            mean: parts[8].parse().map_err(|_| err())?,
        })
    }
}

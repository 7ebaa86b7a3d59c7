//! Recursive spectral-density estimation at a fixed frequency.
//!
//! Same block recursion as the TAVC estimator, but each increment is rotated
//! by `e^{i·n·θ}` before entering the running block sum, and the accumulator
//! collects `|W_n(θ)|²`. The density estimate is `V_n(θ)/(2π·v_n)`; at
//! `θ = 0` this reduces (times 2π) to the known-mean TAVC estimate exactly.
//!
//! Inputs are assumed mean-zero: center them before feeding if the process
//! mean is nonzero.

use crate::accum::CompensatedSum;
use crate::estimator::EstimatorError;
use crate::schedule::{BlockCursor, BlockSchedule};

const RENORM_EVERY: u64 = 1024;

/// Streaming estimator of the spectral density `f(θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEstimator {
    cursor: BlockCursor,
    theta: f64,
    rot: (f64, f64),   // e^{iθ}
    phase: (f64, f64), // e^{inθ}, renormalized periodically
    w: (f64, f64),     // current block sum W_n(θ)
    power: CompensatedSum,
    n: u64,
    v: u64,
}

impl SpectralEstimator {
    pub fn new(schedule: BlockSchedule, theta: f64) -> Result<Self, EstimatorError> {
        if !theta.is_finite() {
            return Err(EstimatorError::NonFiniteInput);
        }
        Ok(Self {
            cursor: BlockCursor::new(schedule),
            theta,
            rot: (theta.cos(), theta.sin()),
            phase: (1.0, 0.0),
            w: (0.0, 0.0),
            power: CompensatedSum::new(),
            n: 0,
            v: 0,
        })
    }

    /// Consume one (mean-zero) observation.
    pub fn update(&mut self, x: f64) -> Result<(), EstimatorError> {
        if !x.is_finite() {
            return Err(EstimatorError::NonFiniteInput);
        }
        let n1 = self.n + 1;
        // advance e^{inθ} by one rotation; drift is wiped periodically
        let (pr, pi) = self.phase;
        let (cr, ci) = self.rot;
        let mut phase = (pr * cr - pi * ci, pr * ci + pi * cr);
        if n1.is_multiple_of(RENORM_EVERY) {
            let norm = (phase.0 * phase.0 + phase.1 * phase.1).sqrt();
            phase = (phase.0 / norm, phase.1 / norm);
        }
        self.phase = phase;

        let inc = (x * phase.0, x * phase.1);
        self.w = if self.cursor.advance(n1) {
            inc
        } else {
            (self.w.0 + inc.0, self.w.1 + inc.1)
        };
        self.v += n1 - self.cursor.start() + 1;
        self.power.add(self.w.0 * self.w.0 + self.w.1 * self.w.1);
        self.n = n1;
        Ok(())
    }

    /// `f̂(θ) = V_n(θ) / (2π·v_n)`.
    pub fn density(&self) -> Result<f64, EstimatorError> {
        if self.n == 0 {
            return Err(EstimatorError::NoData);
        }
        Ok(self.power.value() / (2.0 * std::f64::consts::PI * self.v as f64))
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// Accumulated `V_n(θ) = Σ |W_i(θ)|²`.
    pub fn power(&self) -> f64 {
        self.power.value()
    }

    pub fn v(&self) -> u64 {
        self.v
    }

    /// Squared modulus of the tracked phase; 1 up to bounded drift.
    pub fn phase_norm_sq(&self) -> f64 {
        self.phase.0 * self.phase.0 + self.phase.1 * self.phase.1
    }
}

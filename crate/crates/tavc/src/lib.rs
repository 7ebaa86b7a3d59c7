//! Constant-memory recursive estimation of the time-average variance constant
//! (TAVC, also known as the long-run variance) of a stationary sequence.
//!
//! For a stationary process with covariances `γ(k)`, the TAVC
//! `σ² = Σ_{k∈Z} γ(k)` is the variance appearing in the central limit theorem
//! for the sample mean. Classical batched-means estimates need the whole
//! sample in memory; the recursive estimate in this crate keeps a single
//! running block sum over a growing block schedule and updates a handful of
//! scalars per observation, so memory stays O(1) and total work O(n).
//!
//! The pieces:
//!
//! - [`schedule`]: block-boundary sequences `(a_k)` and the derived
//!   block-position bookkeeping (`t_n`, `l_n`, `v_n`, `q_n`).
//! - [`estimator`]: the streaming TAVC estimator, for known or unknown mean,
//!   with confidence intervals and a t-like test statistic.
//! - [`spectral`]: the same recursion with rotated increments, estimating the
//!   spectral density at a fixed frequency.
//! - [`reference`]: non-recursive overlapping / non-overlapping batched-means
//!   baselines (O(n) memory), used for comparisons.
//! - [`tuning`]: pilot-study selection of the schedule constant from data
//!   (Bühlmann–Künsch bandwidth iteration) plus the analytic optima.
//! - [`processes`]: seeded generators for test processes with analytic
//!   ground-truth σ² where known.

pub mod accum;
pub mod estimator;
pub mod normal;
pub mod processes;
pub mod reference;
pub mod schedule;
pub mod spectral;
pub mod tuning;

pub use estimator::{EstimatorError, Mode, TavcEstimate, TavcEstimator};
pub use schedule::{BlockPosition, BlockSchedule, ScheduleError};
pub use spectral::SpectralEstimator;

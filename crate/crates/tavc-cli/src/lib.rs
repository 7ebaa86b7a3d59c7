//! Experiment harness around the streaming TAVC estimator: stream-mode
//! estimation, replication sweeps with rate fits, the batched-means
//! efficiency comparison, the fast-schedule divergence demonstration,
//! sequential fixed-width stopping, and multi-chain aggregation.
//!
//! All experiment functions are deterministic given their configuration
//! (including the seed): replications draw from per-replicate RNG streams and
//! results aggregate in replicate order, so outputs do not depend on how many
//! worker threads rayon happens to use.

pub mod engine;

/// Version tag written as the first line of every CSV report.
pub const CSV_VERSION: &str = "# tavc-csv v1";

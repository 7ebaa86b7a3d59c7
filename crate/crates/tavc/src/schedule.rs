//! Block-boundary schedules and their bookkeeping.
//!
//! A schedule is a strictly increasing integer sequence `a_1 = 1 < a_2 < …`
//! of block starts. Index `n` lives in the block started at
//! `t_n = a_k` where `a_k ≤ n < a_{k+1}`, and has been in it for
//! `l_n = n − t_n + 1` observations. The estimator normalizers are
//! `v_n = Σ_{i≤n} l_i` and `q_n = Σ_{i≤n} l_i²`; both have triangular-number
//! closed forms used here as test oracles for the streaming updates.

use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("power-law schedule needs finite c > 0 and p > 1, got c={c}, p={p}")]
    InvalidPowerLaw { c: f64, p: f64 },
    #[error("geometric schedule needs ratio >= 2, got {0}")]
    InvalidGeometric(u64),
    #[error("explicit schedule invalid: {0}")]
    InvalidExplicit(String),
    #[error("cannot parse schedule spec {0:?}")]
    Parse(String),
}

/// A block-start sequence `(a_k)`.
///
/// `PowerLaw` is the workhorse: `a_k = ⌊c·k^p⌋` repaired so that `a_1 = 1`
/// and the sequence increases strictly (`a_k = max(a_{k−1}+1, ⌊c·k^p⌋)`),
/// which keeps the estimator well-defined for any tuned `c`.
///
/// `Geometric` grows too fast for the estimator to be consistent — the
/// cross-replication spread of the estimate never dies out. It is provided
/// only so that inconsistency can be demonstrated; do not use it for
/// estimation.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockSchedule {
    PowerLaw { c: f64, p: f64 },
    Geometric { ratio: u64 },
    Explicit { boundaries: Vec<u64> },
}

impl BlockSchedule {
    pub fn power_law(c: f64, p: f64) -> Result<Self, ScheduleError> {
        if !(c.is_finite() && p.is_finite() && c > 0.0 && p > 1.0) {
            return Err(ScheduleError::InvalidPowerLaw { c, p });
        }
        Ok(BlockSchedule::PowerLaw { c, p })
    }

    pub fn geometric(ratio: u64) -> Result<Self, ScheduleError> {
        if ratio < 2 {
            return Err(ScheduleError::InvalidGeometric(ratio));
        }
        Ok(BlockSchedule::Geometric { ratio })
    }

    /// Explicit table of block starts; must begin at 1 and increase strictly.
    /// Past the last entry the final block simply never ends.
    pub fn explicit(boundaries: Vec<u64>) -> Result<Self, ScheduleError> {
        if boundaries.first() != Some(&1) {
            return Err(ScheduleError::InvalidExplicit(
                "table must start at 1".into(),
            ));
        }
        if boundaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ScheduleError::InvalidExplicit(
                "table must be strictly increasing".into(),
            ));
        }
        Ok(BlockSchedule::Explicit { boundaries })
    }

    /// The k-th block start `a_k` (k ≥ 1). `None` when the schedule has no
    /// k-th boundary (explicit table exhausted, or geometric overflow); the
    /// current block then extends forever.
    ///
    /// For the repaired power law the recurrence collapses to a closed form:
    /// `a_k = k + max(0, ⌊c·2^p⌋−2, ⌊c·k^p⌋−k)`. The max of a convex
    /// function over a discrete range sits at an endpoint, which is what
    /// makes the two-candidate form equal to the full recurrence.
    pub fn boundary(&self, k: u64) -> Option<u64> {
        debug_assert!(k >= 1);
        match self {
            BlockSchedule::PowerLaw { c, p } => {
                if k == 1 {
                    return Some(1);
                }
                let raw = |j: u64| -> i64 {
                    let v = c * (j as f64).powf(*p);
                    // beyond u64 range no stream can ever reach the boundary
                    if v >= 9.0e18 {
                        i64::MAX
                    } else {
                        v.floor() as i64
                    }
                };
                let r2 = raw(2).saturating_sub(2);
                let rk = raw(k);
                if rk == i64::MAX {
                    return None;
                }
                let bump = 0.max(r2).max(rk - k as i64);
                Some(k + bump as u64)
            }
            BlockSchedule::Geometric { ratio } => ratio.checked_pow(u32::try_from(k - 1).ok()?),
            BlockSchedule::Explicit { boundaries } => boundaries.get(k as usize - 1).copied(),
        }
    }

    /// Locate index `n ≥ 1`: the unique `(k, t, l)` with `a_k ≤ n < a_{k+1}`.
    pub fn position(&self, n: u64) -> BlockPosition {
        assert!(n >= 1, "positions are 1-based");
        let mut k = match self {
            BlockSchedule::PowerLaw { c, p } => {
                // closed-form guess (exact for the unrepaired sequence),
                // corrected against the repaired one below
                let guess = (((n + 1) as f64) / c).powf(1.0 / p).ceil() as i64 - 1;
                guess.max(1) as u64
            }
            BlockSchedule::Geometric { ratio } => n.ilog(*ratio) as u64 + 1,
            BlockSchedule::Explicit { boundaries } => {
                boundaries.partition_point(|&a| a <= n) as u64
            }
        };
        while self.boundary(k).is_none_or(|a| a > n) {
            k -= 1;
        }
        while self.boundary(k + 1).is_some_and(|a| a <= n) {
            k += 1;
        }
        let t = self.boundary(k).expect("corrected block index exists");
        BlockPosition {
            n,
            block: k,
            start: t,
            len: n - t + 1,
        }
    }

    /// Is `n` the first index of a block?
    pub fn is_block_start(&self, n: u64) -> bool {
        self.position(n).len == 1
    }

    /// Closed-form `v_n = Σ_{i=1}^n l_i`: every completed block of length `g`
    /// contributes the triangular number `g(g+1)/2`, and the partial block
    /// holding `n` contributes `r(r+1)/2` with `r = n − t_n + 1`.
    pub fn v_exact(&self, n: u64) -> u64 {
        let pos = self.position(n);
        let mut total: u128 = tri(pos.len as u128);
        let mut prev = pos.start;
        for k in (1..pos.block).rev() {
            let a = self.boundary(k).expect("boundaries below t_n exist");
            total += tri((prev - a) as u128);
            prev = a;
        }
        u64::try_from(total).expect("v_n fits in u64")
    }

    /// Closed-form `q_n = Σ_{i=1}^n l_i²` (square-pyramidal numbers per block).
    pub fn q_exact(&self, n: u64) -> u64 {
        let pos = self.position(n);
        let mut total: u128 = pyr(pos.len as u128);
        let mut prev = pos.start;
        for k in (1..pos.block).rev() {
            let a = self.boundary(k).expect("boundaries below t_n exist");
            total += pyr((prev - a) as u128);
            prev = a;
        }
        u64::try_from(total).expect("q_n fits in u64")
    }
}

#[inline]
fn tri(x: u128) -> u128 {
    x * (x + 1) / 2
}

#[inline]
fn pyr(x: u128) -> u128 {
    x * (x + 1) * (2 * x + 1) / 6
}

/// Large-n growth of `v_n` for a power-law schedule:
/// `m^{2p−1}·c²·p²/(4p−2)` with `m = (n/c)^{1/p}`. A sanity yardstick only —
/// nothing is estimated with it.
pub fn v_asymptotic(c: f64, p: f64, n: u64) -> f64 {
    let m = (n as f64 / c).powf(1.0 / p);
    m.powf(2.0 * p - 1.0) * c * c * p * p / (4.0 * p - 2.0)
}

/// Where index `n` sits in its block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockPosition {
    pub n: u64,
    /// Block index `k` with `a_k ≤ n < a_{k+1}`.
    pub block: u64,
    /// Block start `t_n = a_k`.
    pub start: u64,
    /// Length so far, `l_n = n − t_n + 1`.
    pub len: u64,
}

/// Incremental block tracker for streaming updates: O(1) per step, caches the
/// next boundary so no powers are recomputed.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BlockCursor {
    schedule: BlockSchedule,
    block: u64,
    start: u64,
    next: Option<u64>,
}

impl BlockCursor {
    pub fn new(schedule: BlockSchedule) -> Self {
        Self {
            schedule,
            block: 0,
            start: 0,
            next: None,
        }
    }

    pub fn schedule(&self) -> &BlockSchedule {
        &self.schedule
    }

    pub fn block(&self) -> u64 {
        self.block
    }

    pub fn start(&self) -> u64 {
        self.start
    }

    /// Advance to index `n1` (must be called with 1, 2, 3, … in order).
    /// Returns true when `n1` starts a new block.
    pub fn advance(&mut self, n1: u64) -> bool {
        if n1 == 1 {
            self.block = 1;
            self.start = 1;
            self.next = self.schedule.boundary(2);
            return true;
        }
        if self.next == Some(n1) {
            self.block += 1;
            self.start = n1;
            self.next = self.schedule.boundary(self.block + 1);
            true
        } else {
            false
        }
    }

    /// Restore a cursor from a checkpointed position.
    pub fn restore(schedule: BlockSchedule, block: u64, start: u64) -> Self {
        let next = schedule.boundary(block + 1);
        Self {
            schedule,
            block,
            start,
            next,
        }
    }
}

impl fmt::Display for BlockSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockSchedule::PowerLaw { c, p } => write!(f, "power:c={c},p={p}"),
            BlockSchedule::Geometric { ratio } => write!(f, "geom:r={ratio}"),
            BlockSchedule::Explicit { boundaries } => {
                write!(f, "explicit:")?;
                for (i, b) in boundaries.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{b}")?;
                }
                Ok(())
            }
        }
    }
}

/// Parses `power:c=<f>,p=<f>`, `geom:r=<int>` and inline `explicit:1,4,9,…`.
/// (`explicit:@<path>` indirection is resolved by the CLI before calling
/// this.)
impl FromStr for BlockSchedule {
    type Err = ScheduleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ScheduleError::Parse(s.to_string());
        let (kind, rest) = s.split_once(':').ok_or_else(err)?;
        match kind {
            "power" => {
                let mut c = None;
                let mut p = None;
                for part in rest.split(',') {
                    match part.split_once('=') {
                        Some(("c", v)) => c = v.trim().parse().ok(),
                        Some(("p", v)) => p = v.trim().parse().ok(),
                        _ => return Err(err()),
                    }
                }
                BlockSchedule::power_law(c.ok_or_else(err)?, p.ok_or_else(err)?)
            }
            "geom" => {
                let r = rest
                    .strip_prefix("r=")
                    .and_then(|v| v.trim().parse().ok())
                    .ok_or_else(err)?;
                BlockSchedule::geometric(r)
            }
            "explicit" => {
                let table: Result<Vec<u64>, _> =
                    rest.split(',').map(|v| v.trim().parse()).collect();
                BlockSchedule::explicit(table.map_err(|_| err())?)
            }
            _ => Err(err()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force repaired boundary table, directly from the recurrence.
    fn brute_boundaries(c: f64, p: f64, kmax: u64) -> Vec<u64> {
        let mut a = vec![1u64];
        for k in 2..=kmax {
            let raw = (c * (k as f64).powf(p)).floor();
            let raw = if raw < 0.0 { 0 } else { raw as u64 };
            a.push((a[k as usize - 2] + 1).max(raw));
        }
        a
    }

    /// Brute-force position by scanning the boundary table.
    fn brute_position(sched: &BlockSchedule, n: u64) -> BlockPosition {
        let mut k = 1;
        while let Some(a) = sched.boundary(k + 1) {
            if a > n {
                break;
            }
            k += 1;
        }
        let t = sched.boundary(k).unwrap();
        BlockPosition {
            n,
            block: k,
            start: t,
            len: n - t + 1,
        }
    }

    #[test]
    fn square_schedule_examples() {
        let s = BlockSchedule::power_law(1.0, 2.0).unwrap();
        let p5 = s.position(5);
        assert_eq!((p5.start, p5.block, p5.len), (4, 2, 2));
        let p9 = s.position(9);
        assert_eq!((p9.start, p9.block, p9.len), (9, 3, 1));
        let p1 = s.position(1);
        assert_eq!((p1.start, p1.block, p1.len), (1, 1, 1));
        // t_i = floor(sqrt(i))^2 for every i
        for i in 1..2000 {
            let isq = (i as f64).sqrt().floor() as u64;
            assert_eq!(s.position(i).start, isq * isq, "i={i}");
        }
    }

    #[test]
    fn block_start_examples() {
        let s = BlockSchedule::power_law(1.0, 2.0).unwrap();
        assert!(s.is_block_start(4));
        assert!(!s.is_block_start(5));
        let g = BlockSchedule::geometric(2).unwrap();
        assert!(g.is_block_start(8));
        assert!(!g.is_block_start(6));
    }

    #[test]
    fn closed_form_boundary_matches_recurrence() {
        for &(c, p) in &[
            (1.0, 2.0),
            (2.5, 1.5),
            (0.5, 2.0),
            (0.1, 1.1),
            (3.3, 1.2),
            (0.9, 2.7),
            (1.7, 1.01),
            (2.514, 1.5),
        ] {
            let s = BlockSchedule::power_law(c, p).unwrap();
            let brute = brute_boundaries(c, p, 500);
            for (i, &want) in brute.iter().enumerate() {
                assert_eq!(
                    s.boundary(i as u64 + 1),
                    Some(want),
                    "c={c} p={p} k={}",
                    i + 1
                );
            }
        }
    }

    #[test]
    fn boundaries_strictly_increase() {
        for &(c, p) in &[(0.3, 1.05), (1.0, 1.5), (5.0, 2.5), (0.01, 3.0)] {
            let s = BlockSchedule::power_law(c, p).unwrap();
            let mut prev = 0;
            for k in 1..=2000 {
                let a = s.boundary(k).unwrap();
                assert!(a > prev, "c={c} p={p} k={k}: {a} <= {prev}");
                prev = a;
            }
        }
    }

    #[test]
    fn position_matches_brute_force_scan() {
        let schedules = [
            BlockSchedule::power_law(1.0, 2.0).unwrap(),
            BlockSchedule::power_law(2.5, 1.5).unwrap(),
            BlockSchedule::power_law(0.7, 1.2).unwrap(),
            BlockSchedule::geometric(3).unwrap(),
            BlockSchedule::explicit(vec![1, 2, 4, 7, 11, 16, 22, 29, 37, 100]).unwrap(),
        ];
        for s in &schedules {
            // every n up to 1e5, against an incremental scan of the
            // boundary sequence
            let mut k = 1u64;
            for n in 1..=100_000u64 {
                while s.boundary(k + 1).is_some_and(|a| a <= n) {
                    k += 1;
                }
                let t = s.boundary(k).unwrap();
                let pos = s.position(n);
                assert_eq!(
                    (pos.block, pos.start, pos.len),
                    (k, t, n - t + 1),
                    "{s} n={n}"
                );
            }
            // and the O(k)-rescan route on a sparser grid
            for n in (1..=100_000).step_by(977) {
                assert_eq!(s.position(n), brute_position(s, n), "{s} n={n}");
            }
        }
    }

    #[test]
    fn v_exact_examples_and_recurrence() {
        let s = BlockSchedule::power_law(1.0, 2.0).unwrap();
        assert_eq!(s.v_exact(8), 21);
        assert_eq!(s.v_exact(3), 6);
        assert_eq!(s.v_exact(1), 1);
        // v_n - v_{n-1} = l_n, and q likewise
        for sched in [
            s,
            BlockSchedule::power_law(2.5, 1.5).unwrap(),
            BlockSchedule::explicit(vec![1, 3, 10, 40]).unwrap(),
        ] {
            let mut v_prev = 0;
            let mut q_prev = 0;
            for n in 1..500 {
                let l = sched.position(n).len;
                let v = sched.v_exact(n);
                let q = sched.q_exact(n);
                assert_eq!(v - v_prev, l, "{sched} n={n}");
                assert_eq!(q - q_prev, l * l, "{sched} n={n}");
                v_prev = v;
                q_prev = q;
            }
        }
    }

    #[test]
    fn v_asymptotic_ratio() {
        let n = 1_000_000;
        for &(c, p) in &[(1.0, 2.0), (1.0, 1.5)] {
            let s = BlockSchedule::power_law(c, p).unwrap();
            let ratio = v_asymptotic(c, p, n) / s.v_exact(n) as f64;
            assert!((0.99..=1.01).contains(&ratio), "c={c} p={p}: ratio {ratio}");
        }
        // tiny n: no asymptotic guarantee, just a sane order of magnitude
        let s = BlockSchedule::power_law(1.0, 2.0).unwrap();
        let r1 = v_asymptotic(1.0, 2.0, 1) / s.v_exact(1) as f64;
        assert!((0.1..=10.0).contains(&r1), "ratio {r1}");
    }

    #[test]
    fn cursor_agrees_with_position() {
        for sched in [
            BlockSchedule::power_law(2.5, 1.5).unwrap(),
            BlockSchedule::geometric(2).unwrap(),
            BlockSchedule::explicit(vec![1, 2, 4, 8]).unwrap(),
        ] {
            let mut cur = BlockCursor::new(sched.clone());
            for n in 1..=5000 {
                let fresh = cur.advance(n);
                let pos = sched.position(n);
                assert_eq!(fresh, pos.len == 1, "{sched} n={n}");
                assert_eq!(cur.start(), pos.start, "{sched} n={n}");
                assert_eq!(cur.block(), pos.block, "{sched} n={n}");
            }
        }
    }

    #[test]
    fn explicit_validation() {
        assert!(BlockSchedule::explicit(vec![2, 3]).is_err());
        assert!(BlockSchedule::explicit(vec![1, 5, 5]).is_err());
        assert!(BlockSchedule::explicit(vec![]).is_err());
        assert!(BlockSchedule::explicit(vec![1]).is_ok());
    }

    #[test]
    fn param_validation() {
        assert!(BlockSchedule::power_law(0.0, 2.0).is_err());
        assert!(BlockSchedule::power_law(1.0, 1.0).is_err());
        assert!(BlockSchedule::power_law(f64::NAN, 2.0).is_err());
        assert!(BlockSchedule::geometric(1).is_err());
    }

    #[test]
    fn parse_round_trip() {
        for spec in ["power:c=2.5,p=1.5", "geom:r=2", "explicit:1,4,9,16"] {
            let s: BlockSchedule = spec.parse().unwrap();
            let back: BlockSchedule = s.to_string().parse().unwrap();
            assert_eq!(s, back);
        }
        assert!("power:c=-1,p=2".parse::<BlockSchedule>().is_err());
        assert!("nonsense".parse::<BlockSchedule>().is_err());
    }

    proptest! {
        #[test]
        fn prop_position_consistent(c in 0.2f64..4.0, p in 1.05f64..3.0, n in 1u64..20_000) {
            let s = BlockSchedule::power_law(c, p).unwrap();
            let pos = s.position(n);
            prop_assert_eq!(pos, brute_position(&s, n));
            prop_assert!(pos.start <= n);
            prop_assert_eq!(pos.len, n - pos.start + 1);
        }

        #[test]
        fn prop_v_exact_equals_scan(c in 0.2f64..4.0, p in 1.05f64..2.5, n in 1u64..2_000) {
            let s = BlockSchedule::power_law(c, p).unwrap();
            let brute: u64 = (1..=n).map(|i| s.position(i).len).sum();
            prop_assert_eq!(s.v_exact(n), brute);
            let brute_q: u64 = (1..=n).map(|i| s.position(i).len.pow(2)).sum();
            prop_assert_eq!(s.q_exact(n), brute_q);
        }
    }
}

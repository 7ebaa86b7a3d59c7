//! Experiment engine.

use rayon::prelude::*;
use std::io::{BufRead, Write};
use tavc::estimator::{Mode, TavcEstimator};
use tavc::normal::normal_quantile;
use tavc::processes::ProcessSpec;
use tavc::reference::{batched_means_about, optimal_batch_length, BatchSpec};
use tavc::schedule::BlockSchedule;
use tavc::spectral::SpectralEstimator;
use tavc::tuning;
use thiserror::Error;

use crate::CSV_VERSION;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("line {line}: cannot parse {content:?} as a number")]
    BadInputLine { line: usize, content: String },
    #[error("process has no closed-form {0}; experiment refused")]
    MissingGroundTruth(&'static str),
    #[error("optimal batch length degenerate (theta = 0); experiment refused")]
    DegenerateOptimalBatch,
    #[error("n-grid must be non-empty and strictly increasing")]
    BadGrid,
    #[error("need at least one replication")]
    NoReplications,
    #[error("spectral mode needs a known mean to center the stream")]
    SpectralNeedsKnownMean,
    #[error(transparent)]
    Estimator(#[from] tavc::estimator::EstimatorError),
    #[error(transparent)]
    Tuning(#[from] tuning::TuningError),
    #[error(transparent)]
    Reference(#[from] tavc::reference::ReferenceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which centering the experiment estimator uses. `Known` pulls the
/// process's analytic mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanMode {
    Known,
    Unknown,
}

fn make_mode(mode: MeanMode, process: &ProcessSpec) -> Result<Mode, HarnessError> {
    Ok(match mode {
        MeanMode::Known => Mode::KnownMean(
            process
                .true_mean()
                .ok_or(HarnessError::MissingGroundTruth("mean"))?,
        ),
        MeanMode::Unknown => Mode::UnknownMean,
    })
}

// ---------------------------------------------------------------------------
// stream-mode estimation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct EstimateOptions {
    pub schedule: BlockSchedule,
    pub mode: Mode,
    pub emit_every: u64,
    pub alpha: f64,
    /// Scale the interval by √v_n instead of √n (comparison form).
    pub ci_vn_scale: bool,
    /// Also run the spectral recursion at this frequency (needs a known
    /// mean; the stream is centered before the rotation).
    pub theta: Option<f64>,
}

#[derive(Debug)]
pub struct EstimateRun {
    pub rows_emitted: u64,
    pub estimator: TavcEstimator,
}

/// Stream numbers (one per line) through the estimator, emitting a CSV row
/// every `emit_every` samples and once more at the end of input. Empty lines
/// are ignored; anything else that fails to parse aborts with its line
/// number.
pub fn run_estimate(
    input: impl BufRead,
    opts: &EstimateOptions,
    out: &mut impl Write,
) -> Result<EstimateRun, HarnessError> {
    let mut est = TavcEstimator::new(opts.schedule.clone(), opts.mode);
    let mut spectral = match opts.theta {
        Some(theta) => {
            let Mode::KnownMean(_) = opts.mode else {
                return Err(HarnessError::SpectralNeedsKnownMean);
            };
            Some(SpectralEstimator::new(opts.schedule.clone(), theta)?)
        }
        None => None,
    };
    let mu = match opts.mode {
        Mode::KnownMean(m) => m,
        Mode::UnknownMean => 0.0,
    };

    writeln!(out, "{CSV_VERSION}")?;
    write!(out, "n,mean,sigma2_hat,ci_lo,ci_hi")?;
    if spectral.is_some() {
        write!(out, ",f_hat")?;
    }
    writeln!(out)?;

    let mut rows = 0u64;
    let mut emitted_at = 0u64;
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let x: f64 = text.parse().map_err(|_| HarnessError::BadInputLine {
            line: idx + 1,
            content: text.to_string(),
        })?;
        est.update(x)?;
        if let Some(sp) = spectral.as_mut() {
            sp.update(x - mu)?;
        }
        if est.n().is_multiple_of(opts.emit_every) {
            emit_row(&est, spectral.as_ref(), opts, out)?;
            rows += 1;
            emitted_at = est.n();
        }
    }
    if est.n() > 0 && est.n() != emitted_at {
        emit_row(&est, spectral.as_ref(), opts, out)?;
        rows += 1;
    }
    Ok(EstimateRun {
        rows_emitted: rows,
        estimator: est,
    })
}

fn emit_row(
    est: &TavcEstimator,
    spectral: Option<&SpectralEstimator>,
    opts: &EstimateOptions,
    out: &mut impl Write,
) -> Result<(), HarnessError> {
    let e = est.tavc()?;
    let ci = if matches!(est.mode(), Mode::UnknownMean) && est.n() >= 2 {
        let ci = if opts.ci_vn_scale {
            est.confidence_interval_vn(opts.alpha)?
        } else {
            est.confidence_interval(opts.alpha)?
        };
        Some(ci)
    } else {
        None
    };
    write!(out, "{},{},{}", est.n(), est.mean(), e.sigma2)?;
    match ci {
        Some((lo, hi)) => write!(out, ",{lo},{hi}")?,
        None => write!(out, ",,")?,
    }
    if let Some(sp) = spectral {
        write!(out, ",{}", sp.density()?)?;
    }
    writeln!(out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// replication sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub process: ProcessSpec,
    pub schedule: BlockSchedule,
    pub mode: MeanMode,
    /// Strictly increasing sample sizes.
    pub n_grid: Vec<u64>,
    pub replications: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n: u64,
    pub replications: u64,
    pub mean_estimate: f64,
    pub mse: f64,
    pub rmse: f64,
    /// Absent with a single replication.
    pub se_of_mse: Option<f64>,
}

/// One estimate per (grid point, replication), kept for self-auditing.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRow {
    pub n: u64,
    pub rep: u64,
    pub sigma2_hat: f64,
    pub sq_err: f64,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    /// Least-squares slope of log MSE against log n (needs ≥ 2 grid points).
    pub slope: Option<f64>,
    /// Empirical `MSE·n^{2/3}` at the largest n, relative to the asymptotic
    /// optimum `2^{14/3}/3^{5/3}·|θ|^{2/3}·σ^{8/3}`. Only reported when the
    /// schedule is the power law at `p = 3/2`, `c = c*` for the process.
    pub constant_ratio: Option<f64>,
    pub audit: Vec<AuditRow>,
}

/// Run `replications` independent chains at every grid size and measure the
/// estimation error against the process's analytic TAVC.
pub fn mse_sweep(config: &SweepConfig) -> Result<SweepOutcome, HarnessError> {
    let sigma2 = config
        .process
        .true_tavc()
        .ok_or(HarnessError::MissingGroundTruth("TAVC"))?;
    if config.n_grid.is_empty() || config.n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(HarnessError::BadGrid);
    }
    if config.replications == 0 {
        return Err(HarnessError::NoReplications);
    }
    let mode = make_mode(config.mode, &config.process)?;

    let mut rows = Vec::new();
    let mut audit = Vec::new();
    for (gi, &n) in config.n_grid.iter().enumerate() {
        let base = gi as u64 * config.replications;
        let estimates: Vec<f64> = (0..config.replications)
            .into_par_iter()
            .map(|rep| {
                let mut est = TavcEstimator::new(config.schedule.clone(), mode);
                for x in config.process.stream(base + rep).take(n as usize) {
                    est.update(x).expect("generated values are finite");
                }
                est.tavc().expect("n >= 1").sigma2
            })
            .collect();

        let sq_errs: Vec<f64> = estimates
            .iter()
            .map(|&s| (s - sigma2) * (s - sigma2))
            .collect();
        for (rep, (&s, &e)) in estimates.iter().zip(&sq_errs).enumerate() {
            audit.push(AuditRow {
                n,
                rep: rep as u64,
                sigma2_hat: s,
                sq_err: e,
            });
        }
        let r = config.replications as f64;
        let mean_estimate = estimates.iter().sum::<f64>() / r;
        let mse = sq_errs.iter().sum::<f64>() / r;
        let se_of_mse = (config.replications > 1).then(|| {
            let var = sq_errs.iter().map(|&e| (e - mse) * (e - mse)).sum::<f64>() / (r - 1.0);
            (var / r).sqrt()
        });
        rows.push(SweepRow {
            n,
            replications: config.replications,
            mean_estimate,
            mse,
            rmse: mse.sqrt(),
            se_of_mse,
        });
    }

    let slope = (rows.len() >= 2).then(|| {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .map(|r| ((r.n as f64).ln(), r.mse.ln()))
            .collect();
        least_squares_slope(&pts)
    });

    let constant_ratio = eq23_constant_ratio(config, rows.last().expect("grid non-empty"));

    Ok(SweepOutcome {
        rows,
        slope,
        constant_ratio,
        audit,
    })
}

fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let (sx, sy): (f64, f64) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let sxy: f64 = pts.iter().map(|&(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|&(x, _)| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn eq23_constant_ratio(config: &SweepConfig, last: &SweepRow) -> Option<f64> {
    let theta = config.process.true_theta()?;
    let sigma2 = config.process.true_tavc()?;
    let BlockSchedule::PowerLaw { c, p } = config.schedule else {
        return None;
    };
    let c_star = tuning::c_star(theta, sigma2).ok()?;
    if theta == 0.0 || (p - 1.5).abs() > 1e-9 || (c - c_star).abs() > 0.01 * c_star {
        return None;
    }
    let constant = 2f64.powf(14.0 / 3.0) / 3f64.powf(5.0 / 3.0)
        * theta.abs().powf(2.0 / 3.0)
        * sigma2.powf(4.0 / 3.0);
    Some(last.mse * (last.n as f64).powf(2.0 / 3.0) / constant)
}

/// Re-derive every sweep row from the per-replication audit log; true when
/// everything matches bit for bit.
pub fn verify_audit(rows: &[SweepRow], audit: &[AuditRow]) -> bool {
    rows.iter().all(|row| {
        let errs: Vec<f64> = audit
            .iter()
            .filter(|a| a.n == row.n)
            .map(|a| a.sq_err)
            .collect();
        errs.len() as u64 == row.replications
            && errs.iter().sum::<f64>() / errs.len() as f64 == row.mse
    })
}

pub fn write_sweep_csv(outcome: &SweepOutcome, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{CSV_VERSION}")?;
    writeln!(out, "n,replications,mean_estimate,mse,rmse,se_of_mse")?;
    for r in &outcome.rows {
        write!(
            out,
            "{},{},{},{},{}",
            r.n, r.replications, r.mean_estimate, r.mse, r.rmse
        )?;
        match r.se_of_mse {
            Some(se) => writeln!(out, ",{se}")?,
            None => writeln!(out, ",")?,
        }
    }
    if let Some(slope) = outcome.slope {
        writeln!(out, "# loglog_slope={slope}")?;
    }
    if let Some(ratio) = outcome.constant_ratio {
        writeln!(out, "# constant_ratio={ratio}")?;
    }
    Ok(())
}

pub fn write_audit_csv(audit: &[AuditRow], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{CSV_VERSION}")?;
    writeln!(out, "n,rep,sigma2_hat,sq_err")?;
    for a in audit {
        writeln!(out, "{},{},{},{}", a.n, a.rep, a.sigma2_hat, a.sq_err)?;
    }
    Ok(())
}

/// Parse an audit CSV produced by [`write_audit_csv`].
pub fn read_audit_csv(input: impl BufRead) -> Result<Vec<AuditRow>, HarnessError> {
    let mut rows = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') || text.starts_with("n,") {
            continue;
        }
        let mut parts = text.split(',');
        let bad = || HarnessError::BadInputLine {
            line: idx + 1,
            content: text.to_string(),
        };
        rows.push(AuditRow {
            n: parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?,
            rep: parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?,
            sigma2_hat: parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?,
            sq_err: parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// efficiency ratio against batched means
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RatioConfig {
    pub process: ProcessSpec,
    pub n: u64,
    pub replications: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioReport {
    pub n: u64,
    pub replications: u64,
    pub batch_len: usize,
    pub schedule_c: f64,
    pub rmse_recursive: f64,
    pub rmse_batched: f64,
    pub ratio: f64,
    pub low_replication_warning: bool,
}

/// Paired comparison on identical streams: the recursive estimator at its
/// optimal schedule (`c = c*`, `p = 3/2`) against overlapping batched means
/// at the MSE-optimal fixed batch length, both centered at the known mean.
pub fn ratio_experiment(config: &RatioConfig) -> Result<RatioReport, HarnessError> {
    let sigma2 = config
        .process
        .true_tavc()
        .ok_or(HarnessError::MissingGroundTruth("TAVC"))?;
    let theta = config
        .process
        .true_theta()
        .ok_or(HarnessError::MissingGroundTruth("theta"))?;
    let mu = config
        .process
        .true_mean()
        .ok_or(HarnessError::MissingGroundTruth("mean"))?;
    if theta == 0.0 {
        return Err(HarnessError::DegenerateOptimalBatch);
    }
    if config.replications == 0 {
        return Err(HarnessError::NoReplications);
    }
    let c_star = tuning::c_star(theta, sigma2)?;
    let schedule = BlockSchedule::power_law(c_star, 1.5).expect("c* > 0 for theta != 0");
    let batch_len = optimal_batch_length(theta, sigma2, config.n as usize);

    let errs: Vec<(f64, f64)> = (0..config.replications)
        .into_par_iter()
        .map(|rep| {
            let xs: Vec<f64> = config.process.stream(rep).take(config.n as usize).collect();
            let mut est = TavcEstimator::new(schedule.clone(), Mode::KnownMean(mu));
            for &x in &xs {
                est.update(x).expect("generated values are finite");
            }
            let rec = est.tavc().expect("n >= 1").sigma2;
            let bm = batched_means_about(
                &xs,
                BatchSpec {
                    len: batch_len,
                    overlap: true,
                },
                mu,
            )
            .expect("1 <= l <= n");
            (rec - sigma2, bm - sigma2)
        })
        .collect();

    let r = config.replications as f64;
    let mse_rec = errs.iter().map(|(e, _)| e * e).sum::<f64>() / r;
    let mse_bm = errs.iter().map(|(_, e)| e * e).sum::<f64>() / r;
    Ok(RatioReport {
        n: config.n,
        replications: config.replications,
        batch_len,
        schedule_c: c_star,
        rmse_recursive: mse_rec.sqrt(),
        rmse_batched: mse_bm.sqrt(),
        ratio: (mse_rec / mse_bm).sqrt(),
        low_replication_warning: config.replications < 50,
    })
}

pub fn write_ratio_csv(report: &RatioReport, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{CSV_VERSION}")?;
    writeln!(
        out,
        "n,replications,batch_len,schedule_c,rmse_recursive,rmse_batched,ratio"
    )?;
    writeln!(
        out,
        "{},{},{},{},{},{},{}",
        report.n,
        report.replications,
        report.batch_len,
        report.schedule_c,
        report.rmse_recursive,
        report.rmse_batched,
        report.ratio
    )?;
    if report.low_replication_warning {
        writeln!(out, "# warning=low-replication count, ratio is noisy")?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// divergence demonstration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceRow {
    pub exponent: u32,
    pub n: u64,
    pub geometric_mean: f64,
    pub geometric_sd: f64,
    pub control_mean: f64,
    pub control_sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceVerdict {
    /// Cross-replication sd of V/v under `geom:r=2` at the largest n — the
    /// quantity that refuses to decay.
    pub geometric_sd: f64,
    /// Same under the power-law control, which does decay.
    pub control_sd: f64,
    pub geometric_mean: f64,
    /// sd under the fast schedule stayed ≥ 0.5 (the distributional limit has
    /// sd ≈ 0.894).
    pub non_decaying: bool,
}

#[derive(Debug)]
pub struct DivergenceReport {
    pub rows: Vec<DivergenceRow>,
    pub replications: u64,
    /// Absent (with a warning) when there are too few replications to call.
    pub verdict: Option<DivergenceVerdict>,
    pub warning: Option<String>,
}

const DIVERGE_MIN_EXPONENT: u32 = 10;
const DIVERGE_VERDICT_MIN_REPS: u64 = 10;

/// Feed iid standard normals through the known-mean recursion under the
/// doubling schedule `a_k = 2^{k-1}` and under a power-law control, tracking
/// the cross-replication spread of V/v at n = 2^m. The doubling schedule
/// violates the gap condition the estimator needs, and its spread stays O(1).
pub fn divergence_demo(
    max_exponent: u32,
    replications: u64,
    seed: u64,
) -> Result<DivergenceReport, HarnessError> {
    if replications == 0 {
        return Err(HarnessError::NoReplications);
    }
    let max_exponent = max_exponent.max(DIVERGE_MIN_EXPONENT);
    let process = ProcessSpec::new(
        tavc::processes::ProcessKind::IidNormal { mean: 0.0, sd: 1.0 },
        seed,
    )
    .expect("valid process");
    let geom = BlockSchedule::geometric(2).expect("valid ratio");
    let control = BlockSchedule::power_law(1.0, 1.5).expect("valid power law");
    let n_max = 1u64 << max_exponent;

    // per replication: V/v for both schedules at every dyadic checkpoint
    let per_rep: Vec<(Vec<f64>, Vec<f64>)> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let mut geo = TavcEstimator::new(geom.clone(), Mode::KnownMean(0.0));
            let mut ctl = TavcEstimator::new(control.clone(), Mode::KnownMean(0.0));
            let mut geo_vals = Vec::new();
            let mut ctl_vals = Vec::new();
            for (i, x) in process.stream(rep).take(n_max as usize).enumerate() {
                geo.update(x).expect("finite");
                ctl.update(x).expect("finite");
                let n1 = (i + 1) as u64;
                if n1.is_power_of_two() && n1 >= (1 << DIVERGE_MIN_EXPONENT) {
                    geo_vals.push(geo.tavc().expect("n >= 1").sigma2);
                    ctl_vals.push(ctl.tavc().expect("n >= 1").sigma2);
                }
            }
            (geo_vals, ctl_vals)
        })
        .collect();

    let mut rows = Vec::new();
    let checkpoints = (DIVERGE_MIN_EXPONENT..=max_exponent).collect::<Vec<_>>();
    for (ci, &m) in checkpoints.iter().enumerate() {
        let geo: Vec<f64> = per_rep.iter().map(|(g, _)| g[ci]).collect();
        let ctl: Vec<f64> = per_rep.iter().map(|(_, c)| c[ci]).collect();
        let (gm, gs) = mean_sd(&geo);
        let (cm, cs) = mean_sd(&ctl);
        rows.push(DivergenceRow {
            exponent: m,
            n: 1 << m,
            geometric_mean: gm,
            geometric_sd: gs,
            control_mean: cm,
            control_sd: cs,
        });
    }

    let (verdict, warning) = if replications >= DIVERGE_VERDICT_MIN_REPS {
        let last = rows.last().expect("at least one checkpoint");
        (
            Some(DivergenceVerdict {
                geometric_sd: last.geometric_sd,
                control_sd: last.control_sd,
                geometric_mean: last.geometric_mean,
                non_decaying: last.geometric_sd >= 0.5,
            }),
            None,
        )
    } else {
        (
            None,
            Some(format!(
                "only {replications} replications; dispersion verdict skipped"
            )),
        )
    };

    Ok(DivergenceReport {
        rows,
        replications,
        verdict,
        warning,
    })
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn write_divergence_csv(
    report: &DivergenceReport,
    out: &mut impl Write,
) -> std::io::Result<()> {
    writeln!(out, "{CSV_VERSION}")?;
    writeln!(
        out,
        "m,n,geometric_mean,geometric_sd,control_mean,control_sd"
    )?;
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.exponent, r.n, r.geometric_mean, r.geometric_sd, r.control_mean, r.control_sd
        )?;
    }
    if let Some(v) = &report.verdict {
        writeln!(out, "# non_decaying={}", v.non_decaying)?;
    }
    if let Some(w) = &report.warning {
        writeln!(out, "# warning={w}")?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// sequential fixed-width stopping
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct StopConfig {
    pub process: ProcessSpec,
    pub schedule: BlockSchedule,
    pub alpha: f64,
    pub half_width_target: f64,
    /// First sample at which the rule may fire; checked every sample after.
    /// The default (1000) guards against stopping on early noise.
    pub n_min: u64,
    pub n_max: u64,
    pub replications: u64,
}

pub const DEFAULT_STOP_N_MIN: u64 = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct StopRow {
    pub rep: u64,
    pub n_stop: u64,
    pub mean: f64,
    pub sigma2_hat: f64,
    pub half_width: f64,
    pub converged: bool,
    /// Whether the final interval contains the true mean (when known).
    pub covered: Option<bool>,
}

#[derive(Debug)]
pub struct StopReport {
    pub rows: Vec<StopRow>,
    /// Fraction of replications whose final interval covers the true mean.
    pub coverage: Option<f64>,
    pub mean_stop_n: f64,
    pub not_converged: u64,
}

/// Stream one replicate until the CI half-width `z·σ̂/√n` drops to the
/// target (or `n_max`).
fn stop_one(
    stream: impl Iterator<Item = f64>,
    schedule: BlockSchedule,
    z: f64,
    target: f64,
    n_min: u64,
    n_max: u64,
) -> (u64, f64, f64, f64, bool) {
    let mut est = TavcEstimator::new(schedule, Mode::UnknownMean);
    for x in stream.take(n_max as usize) {
        est.update(x).expect("finite");
        let n = est.n();
        if n >= n_min.max(2) {
            let sigma2 = est.tavc().expect("n >= 1").sigma2;
            let hw = z * sigma2.sqrt() / (n as f64).sqrt();
            if hw <= target {
                return (n, est.mean(), sigma2, hw, true);
            }
        }
    }
    let sigma2 = est.tavc().map(|e| e.sigma2).unwrap_or(0.0);
    let hw = z * sigma2.sqrt() / (est.n().max(1) as f64).sqrt();
    (est.n(), est.mean(), sigma2, hw, false)
}

/// Replicated fixed-width stopping with empirical coverage of the true mean.
pub fn sequential_stop(config: &StopConfig) -> Result<StopReport, HarnessError> {
    if config.replications == 0 {
        return Err(HarnessError::NoReplications);
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(tavc::estimator::EstimatorError::InvalidAlpha(config.alpha).into());
    }
    assert!(config.half_width_target > 0.0, "target must be positive");
    let z = normal_quantile(1.0 - config.alpha / 2.0);
    let mu = config.process.true_mean();

    let rows: Vec<StopRow> = (0..config.replications)
        .into_par_iter()
        .map(|rep| {
            let (n_stop, mean, sigma2_hat, half_width, converged) = stop_one(
                config.process.stream(rep),
                config.schedule.clone(),
                z,
                config.half_width_target,
                config.n_min,
                config.n_max,
            );
            StopRow {
                rep,
                n_stop,
                mean,
                sigma2_hat,
                half_width,
                converged,
                covered: mu.map(|m| (mean - m).abs() <= half_width),
            }
        })
        .collect();

    let covered: Vec<bool> = rows.iter().filter_map(|r| r.covered).collect();
    let coverage = (!covered.is_empty())
        .then(|| covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64);
    let mean_stop_n = rows.iter().map(|r| r.n_stop as f64).sum::<f64>() / rows.len() as f64;
    let not_converged = rows.iter().filter(|r| !r.converged).count() as u64;
    Ok(StopReport {
        rows,
        coverage,
        mean_stop_n,
        not_converged,
    })
}

/// Single-stream stopping (CLI input mode): run the rule over a reader.
pub fn sequential_stop_stream(
    input: impl BufRead,
    schedule: BlockSchedule,
    alpha: f64,
    target: f64,
    n_min: u64,
    n_max: u64,
) -> Result<StopRow, HarnessError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(tavc::estimator::EstimatorError::InvalidAlpha(alpha).into());
    }
    let z = normal_quantile(1.0 - alpha / 2.0);
    let mut values = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        values.push(text.parse().map_err(|_| HarnessError::BadInputLine {
            line: idx + 1,
            content: text.to_string(),
        })?);
    }
    let (n_stop, mean, sigma2_hat, half_width, converged) =
        stop_one(values.into_iter(), schedule, z, target, n_min, n_max);
    Ok(StopRow {
        rep: 0,
        n_stop,
        mean,
        sigma2_hat,
        half_width,
        converged,
        covered: None,
    })
}

pub fn write_stop_csv(report: &StopReport, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{CSV_VERSION}")?;
    writeln!(
        out,
        "rep,n_stop,mean,sigma2_hat,half_width,converged,covered"
    )?;
    for r in &report.rows {
        write!(
            out,
            "{},{},{},{},{},{}",
            r.rep, r.n_stop, r.mean, r.sigma2_hat, r.half_width, r.converged
        )?;
        match r.covered {
            Some(c) => writeln!(out, ",{c}")?,
            None => writeln!(out, ",")?,
        }
    }
    if let Some(cov) = report.coverage {
        writeln!(out, "# coverage={cov}")?;
    }
    writeln!(out, "# mean_stop_n={}", report.mean_stop_n)?;
    if report.not_converged > 0 {
        writeln!(
            out,
            "# warning=not converged in {} runs",
            report.not_converged
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// multi-chain aggregation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct MultichainConfig {
    pub process: ProcessSpec,
    pub schedule: BlockSchedule,
    pub mode: MeanMode,
    pub chains: u64,
    pub n_per_chain: u64,
}

#[derive(Debug)]
pub struct MultichainReport {
    pub per_chain: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    /// Interquartile range of the per-chain estimates — the convergence
    /// diagnostic a multi-chain run watches.
    pub iqr: f64,
}

pub fn multichain(config: &MultichainConfig) -> Result<MultichainReport, HarnessError> {
    if config.chains == 0 {
        return Err(HarnessError::NoReplications);
    }
    let mode = make_mode(config.mode, &config.process)?;
    let per_chain: Vec<f64> = (0..config.chains)
        .into_par_iter()
        .map(|chain| {
            let mut est = TavcEstimator::new(config.schedule.clone(), mode);
            for x in config
                .process
                .stream(chain)
                .take(config.n_per_chain as usize)
            {
                est.update(x).expect("finite");
            }
            est.tavc().expect("n >= 1").sigma2
        })
        .collect();

    let mean = per_chain.iter().sum::<f64>() / per_chain.len() as f64;
    let mut sorted = per_chain.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("estimates are finite"));
    let median = quantile_sorted(&sorted, 0.5);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    Ok(MultichainReport {
        per_chain,
        mean,
        median,
        iqr,
    })
}

/// Linear-interpolation quantile (R-7) of an ascending slice.
fn quantile_sorted(xs: &[f64], q: f64) -> f64 {
    let h = (xs.len() as f64 - 1.0) * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    xs[lo] + (h - lo as f64) * (xs[hi] - xs[lo])
}

pub fn write_multichain_csv(
    report: &MultichainReport,
    out: &mut impl Write,
) -> std::io::Result<()> {
    writeln!(out, "{CSV_VERSION}")?;
    writeln!(out, "chain,sigma2_hat")?;
    for (i, s) in report.per_chain.iter().enumerate() {
        writeln!(out, "{i},{s}")?;
    }
    writeln!(out, "# mean={}", report.mean)?;
    writeln!(out, "# median={}", report.median)?;
    writeln!(out, "# iqr={}", report.iqr)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// pilot tuning over a stream prefix
// ---------------------------------------------------------------------------

/// Read at most `pilot_n` values from the input and run the pilot selector.
pub fn tune_from_stream(
    input: impl BufRead,
    pilot_n: usize,
) -> Result<tuning::TuningResult, HarnessError> {
    let mut xs = Vec::with_capacity(pilot_n);
    for (idx, line) in input.lines().enumerate() {
        if xs.len() >= pilot_n {
            break;
        }
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        xs.push(text.parse().map_err(|_| HarnessError::BadInputLine {
            line: idx + 1,
            content: text.to_string(),
        })?);
    }
    Ok(tuning::bk_block_length(&xs)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;
    use tavc::processes::ProcessKind;

    fn ar1_process(seed: u64) -> ProcessSpec {
        ProcessSpec::new(
            ProcessKind::Ar1 {
                phi: 0.5,
                innovation_sd: 1.0,
                mean: 0.0,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn estimate_stream_fixture() {
        let opts = EstimateOptions {
            schedule: BlockSchedule::power_law(1.0, 2.0).unwrap(),
            mode: Mode::UnknownMean,
            emit_every: 4,
            alpha: 0.05,
            ci_vn_scale: false,
            theta: None,
        };
        let mut out = Vec::new();
        let run = run_estimate(Cursor::new("1\n2\n3\n4\n"), &opts, &mut out).unwrap();
        assert_eq!(run.rows_emitted, 1);
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# tavc-csv v1"));
        assert_eq!(lines.next(), Some("n,mean,sigma2_hat,ci_lo,ci_hi"));
        let row = lines.next().unwrap();
        let sigma2: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(sigma2, 10.75 / 7.0);
    }

    #[test]
    fn estimate_rejects_bad_line() {
        let opts = EstimateOptions {
            schedule: BlockSchedule::power_law(1.0, 2.0).unwrap(),
            mode: Mode::UnknownMean,
            emit_every: 10,
            alpha: 0.05,
            ci_vn_scale: false,
            theta: None,
        };
        let mut out = Vec::new();
        let err = run_estimate(Cursor::new("1\n2\nabc\n4\n"), &opts, &mut out).unwrap_err();
        match err {
            HarnessError::BadInputLine { line, content } => {
                assert_eq!(line, 3);
                assert_eq!(content, "abc");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn estimate_empty_input() {
        let opts = EstimateOptions {
            schedule: BlockSchedule::power_law(1.0, 2.0).unwrap(),
            mode: Mode::UnknownMean,
            emit_every: 10,
            alpha: 0.05,
            ci_vn_scale: false,
            theta: None,
        };
        let mut out = Vec::new();
        let run = run_estimate(Cursor::new(""), &opts, &mut out).unwrap();
        assert_eq!(run.rows_emitted, 0);
        assert_eq!(run.estimator.n(), 0);
    }

    #[test]
    fn sweep_single_replication_has_no_se() {
        let config = SweepConfig {
            process: ar1_process(1),
            schedule: BlockSchedule::power_law(1.0, 1.5).unwrap(),
            mode: MeanMode::Known,
            n_grid: vec![100],
            replications: 1,
        };
        let out = mse_sweep(&config).unwrap();
        assert_eq!(out.rows.len(), 1);
        assert!(out.rows[0].se_of_mse.is_none());
        assert!(out.slope.is_none());
        assert!(verify_audit(&out.rows, &out.audit));
    }

    #[test]
    fn sweep_requires_ground_truth() {
        let config = SweepConfig {
            process: ProcessSpec::new(ProcessKind::LinearAbs { rho: 0.5 }, 0).unwrap(),
            schedule: BlockSchedule::power_law(1.0, 1.5).unwrap(),
            mode: MeanMode::Unknown,
            n_grid: vec![100],
            replications: 2,
        };
        assert!(matches!(
            mse_sweep(&config),
            Err(HarnessError::MissingGroundTruth("TAVC"))
        ));
    }

    #[test]
    fn sweep_audit_round_trips_through_csv() {
        let config = SweepConfig {
            process: ar1_process(7),
            schedule: BlockSchedule::power_law(1.0, 1.5).unwrap(),
            mode: MeanMode::Unknown,
            n_grid: vec![200, 400],
            replications: 8,
        };
        let out = mse_sweep(&config).unwrap();
        let mut buf = Vec::new();
        write_audit_csv(&out.audit, &mut buf).unwrap();
        let parsed = read_audit_csv(Cursor::new(buf)).unwrap();
        assert_eq!(parsed, out.audit);
        assert!(verify_audit(&out.rows, &parsed));
    }

    #[test]
    fn sweep_deterministic_across_thread_counts() {
        let config = SweepConfig {
            process: ar1_process(3),
            schedule: BlockSchedule::power_law(2.0, 1.5).unwrap(),
            mode: MeanMode::Known,
            n_grid: vec![256, 512],
            replications: 16,
        };
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| mse_sweep(&config).unwrap());
        let multi = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| mse_sweep(&config).unwrap());
        assert_eq!(single.rows, multi.rows);
        assert_eq!(single.audit, multi.audit);
    }

    #[test]
    fn ratio_refuses_iid() {
        let config = RatioConfig {
            process: ProcessSpec::new(ProcessKind::IidNormal { mean: 0.0, sd: 1.0 }, 0).unwrap(),
            n: 1000,
            replications: 10,
        };
        assert!(matches!(
            ratio_experiment(&config),
            Err(HarnessError::DegenerateOptimalBatch)
        ));
    }

    #[test]
    fn ratio_low_replication_warning() {
        let config = RatioConfig {
            process: ar1_process(5),
            n: 4096,
            replications: 10,
        };
        let report = ratio_experiment(&config).unwrap();
        assert!(report.low_replication_warning);
        assert!(report.ratio.is_finite() && report.ratio > 0.0);
    }

    #[test]
    fn divergence_small_reps_skips_verdict() {
        let report = divergence_demo(10, 2, 9).unwrap();
        assert!(report.verdict.is_none());
        assert!(report.warning.is_some());
        assert_eq!(report.rows.len(), 1);
    }

    #[test]
    fn stop_constant_stream_stops_at_n_min() {
        let mut input = String::new();
        for _ in 0..5000 {
            input.push_str("5\n");
        }
        let row = sequential_stop_stream(
            Cursor::new(input),
            BlockSchedule::power_law(1.0, 1.5).unwrap(),
            0.05,
            0.05,
            100,
            5000,
        )
        .unwrap();
        assert_eq!(row.n_stop, 100);
        assert!(row.converged);
        assert_eq!(row.half_width, 0.0);
        assert_eq!(row.mean, 5.0);
    }

    #[test]
    fn stop_target_met_at_n_min() {
        // huge target: stops at the first allowed check
        let config = StopConfig {
            process: ar1_process(11),
            schedule: BlockSchedule::power_law(2.514, 1.5).unwrap(),
            alpha: 0.05,
            half_width_target: 50.0,
            n_min: 10,
            n_max: 100_000,
            replications: 20,
        };
        let report = sequential_stop(&config).unwrap();
        assert!(report.rows.iter().all(|r| r.n_stop == 10 && r.converged));
    }

    #[test]
    fn stop_flags_unconverged() {
        let config = StopConfig {
            process: ar1_process(13),
            schedule: BlockSchedule::power_law(2.514, 1.5).unwrap(),
            alpha: 0.05,
            half_width_target: 1e-6,
            n_min: 10,
            n_max: 500,
            replications: 3,
        };
        let report = sequential_stop(&config).unwrap();
        assert_eq!(report.not_converged, 3);
        assert!(report.rows.iter().all(|r| r.n_stop == 500));
    }

    #[test]
    fn multichain_aggregates() {
        let config = MultichainConfig {
            process: ar1_process(17),
            schedule: BlockSchedule::power_law(2.514, 1.5).unwrap(),
            mode: MeanMode::Unknown,
            chains: 9,
            n_per_chain: 2000,
        };
        let report = multichain(&config).unwrap();
        assert_eq!(report.per_chain.len(), 9);
        let mut sorted = report.per_chain.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(report.median, sorted[4]);
        assert!(report.iqr >= 0.0);

        // one chain: aggregate equals the single estimate
        let one = multichain(&MultichainConfig {
            chains: 1,
            ..config
        })
        .unwrap();
        assert_eq!(one.mean, one.per_chain[0]);
        assert_eq!(one.median, one.per_chain[0]);
        assert_eq!(one.iqr, 0.0);
    }

    #[test]
    fn constant_stream_estimates_zero() {
        // constant data has no variance at all
        let mut input = String::new();
        for _ in 0..100 {
            input.push_str("2.5\n");
        }
        let opts = EstimateOptions {
            schedule: BlockSchedule::power_law(1.0, 2.0).unwrap(),
            mode: Mode::UnknownMean,
            emit_every: 100,
            alpha: 0.05,
            ci_vn_scale: false,
            theta: None,
        };
        let mut out = Vec::new();
        let run = run_estimate(Cursor::new(input), &opts, &mut out).unwrap();
        assert_eq!(run.estimator.tavc().unwrap().sigma2, 0.0);
    }

    #[test]
    fn multichain_constant_process_all_zero() {
        // an indicator threshold above the chain's range makes the
        // observable constant: every chain estimates exactly zero
        let config = MultichainConfig {
            process: ProcessSpec::new(
                ProcessKind::CantorChain {
                    observable: tavc::processes::Observable::Indicator { threshold: 2.0 },
                },
                1,
            )
            .unwrap(),
            schedule: BlockSchedule::power_law(1.0, 1.5).unwrap(),
            mode: MeanMode::Unknown,
            chains: 4,
            n_per_chain: 500,
        };
        let report = multichain(&config).unwrap();
        assert_eq!(report.per_chain, vec![0.0; 4]);
        assert_eq!(report.iqr, 0.0);
        assert_eq!(report.median, 0.0);
    }

    #[test]
    fn tune_reads_prefix() {
        let process = ar1_process(23);
        let mut input = String::new();
        for x in process.stream(0).take(5000) {
            input.push_str(&format!("{x}\n"));
        }
        let r = tune_from_stream(Cursor::new(&input), 2000).unwrap();
        assert_eq!(r.n, 2000);
        assert!(r.block_len >= 1);
    }

    #[test]
    fn spectral_estimate_column() {
        let opts = EstimateOptions {
            schedule: BlockSchedule::power_law(1.0, 2.0).unwrap(),
            mode: Mode::KnownMean(0.0),
            emit_every: 4,
            alpha: 0.05,
            ci_vn_scale: false,
            theta: Some(0.0),
        };
        let mut out = Vec::new();
        run_estimate(Cursor::new("1\n2\n3\n4\n"), &opts, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let row = text.lines().nth(2).unwrap();
        let cols: Vec<&str> = row.split(',').collect();
        let sigma2: f64 = cols[2].parse().unwrap();
        let f_hat: f64 = cols[5].parse().unwrap();
        assert_eq!(sigma2, 62.0 / 7.0);
        // 2π f(0) = sigma2 for the same stream
        assert!((f_hat * 2.0 * std::f64::consts::PI - sigma2).abs() < 1e-12);

        // unknown mean + theta is refused
        let bad = EstimateOptions {
            mode: Mode::UnknownMean,
            ..opts
        };
        let mut out = Vec::new();
        assert!(matches!(
            run_estimate(Cursor::new("1\n"), &bad, &mut out),
            Err(HarnessError::SpectralNeedsKnownMean)
        ));
    }
}

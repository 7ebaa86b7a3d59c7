//! Command-line front end for the streaming TAVC estimator and its
//! experiment harness. Input streams are UTF-8 text, one decimal value per
//! line; every report is CSV with a `# tavc-csv v1` version line on top.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use tavc::estimator::Mode;
use tavc::processes::{ProcessKind, ProcessSpec};
use tavc::reference::{batched_means_tavc, BatchSpec};
use tavc::schedule::BlockSchedule;
use tavc_cli::engine::{self, EstimateOptions, MeanMode};
use tavc_cli::CSV_VERSION;

#[derive(Parser)]
#[command(
    name = "tavc",
    version,
    about = "Streaming estimation of long-run variance (TAVC) with O(1) memory"
)]
struct Cli {
    /// Block schedule: power:c=<f>,p=<f> | geom:r=<int> | explicit:@<path>
    #[arg(long, global = true, default_value = "power:c=1,p=1.5")]
    schedule: String,

    /// Base RNG seed for simulated processes.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,

    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for replicated experiments (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stream estimation: read numbers, emit running estimate rows.
    Estimate(EstimateArgs),
    /// Batched-means baseline over a buffered stream.
    Reference(ReferenceArgs),
    /// Pilot selection of the schedule constant from a stream prefix.
    Tune(TuneArgs),
    /// Emit a simulated process stream (one value per line).
    Simulate(SimulateArgs),
    /// Replication sweep: MSE against ground truth across sample sizes.
    Sweep(SweepArgs),
    /// RMSE ratio of the recursive estimator to optimal batched means.
    Ratio(RatioArgs),
    /// Demonstrate estimator divergence under a doubling schedule.
    Diverge(DivergeArgs),
    /// Sequential fixed-width stopping rule.
    Stop(StopArgs),
    /// Independent chains with aggregate dispersion diagnostics.
    Multichain(MultichainArgs),
}

#[derive(Args)]
struct EstimateArgs {
    /// known:<mu> or unknown.
    #[arg(long, default_value = "unknown")]
    mode: String,
    #[arg(long, default_value_t = 1000)]
    emit_every: u64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Scale the CI by sqrt(v_n) instead of sqrt(n) (comparison form).
    #[arg(long)]
    ci_vn: bool,
    /// Also estimate the spectral density at this frequency (radians);
    /// requires a known mean.
    #[arg(long)]
    theta: Option<f64>,
    /// Write the final estimator state (one line) here.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Input file; - for stdin.
    #[arg(long, default_value = "-")]
    input: String,
}

#[derive(Args)]
struct ReferenceArgs {
    /// Batch length.
    #[arg(short, long)]
    l: usize,
    /// Disjoint batches instead of sliding ones.
    #[arg(long)]
    no_overlap: bool,
    #[arg(long, default_value = "-")]
    input: String,
}

#[derive(Args)]
struct TuneArgs {
    /// Pilot size: how many leading values to buffer.
    #[arg(long)]
    pilot_n: usize,
    #[arg(long, default_value = "-")]
    input: String,
}

#[derive(Args)]
struct SimulateArgs {
    /// Process: iid:sd=1 | ar1:phi=0.5,sd=1 | ma1:b=0.5 | linabs:rho=0.7 |
    /// cantor:obs=identity|ind,y0=0.5
    #[arg(long)]
    process: String,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    replicate: u64,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    process: String,
    /// known or unknown (known uses the process's analytic mean).
    #[arg(long, default_value = "known")]
    mode: String,
    /// Comma-separated strictly increasing sample sizes.
    #[arg(long)]
    n_grid: String,
    #[arg(long, default_value_t = 100)]
    reps: u64,
    /// Also write the per-replication audit log here.
    #[arg(long)]
    audit: Option<PathBuf>,
}

#[derive(Args)]
struct RatioArgs {
    #[arg(long)]
    process: String,
    #[arg(long)]
    n: u64,
    #[arg(long, default_value_t = 300)]
    reps: u64,
}

#[derive(Args)]
struct DivergeArgs {
    /// Largest sample size as a power of two.
    #[arg(long, default_value_t = 20)]
    max_exponent: u32,
    #[arg(long, default_value_t = 500)]
    reps: u64,
}

#[derive(Args)]
struct StopArgs {
    /// Simulated process (replicated mode); omit when using --input.
    #[arg(long)]
    process: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Half-width target for the confidence interval.
    #[arg(long)]
    target: f64,
    #[arg(long, default_value_t = engine::DEFAULT_STOP_N_MIN)]
    n_min: u64,
    #[arg(long, default_value_t = 1_000_000)]
    n_max: u64,
    #[arg(long, default_value_t = 500)]
    reps: u64,
    /// Single-stream mode: read values instead of simulating.
    #[arg(long)]
    input: Option<String>,
}

#[derive(Args)]
struct MultichainArgs {
    #[arg(long)]
    process: String,
    #[arg(long)]
    chains: u64,
    #[arg(long)]
    n: u64,
    #[arg(long, default_value = "unknown")]
    mode: String,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let schedule = parse_schedule(&cli.schedule)?;
    let mut out = open_output(cli.out.as_deref())?;

    match &cli.command {
        Command::Estimate(args) => {
            let opts = EstimateOptions {
                schedule,
                mode: parse_mode(&args.mode)?,
                emit_every: args.emit_every.max(1),
                alpha: args.alpha,
                ci_vn_scale: args.ci_vn,
                theta: args.theta,
            };
            let run = engine::run_estimate(open_input(&args.input)?, &opts, &mut out)?;
            if run.estimator.n() == 0 {
                eprintln!("warning: empty input, nothing estimated");
            }
            if let Some(path) = &args.checkpoint {
                let mut f = BufWriter::new(File::create(path)?);
                writeln!(f, "{}", run.estimator.snapshot())?;
            }
        }
        Command::Reference(args) => {
            let xs = read_all(open_input(&args.input)?)?;
            if xs.is_empty() {
                eprintln!("warning: empty input, nothing estimated");
                writeln!(out, "{CSV_VERSION}")?;
                writeln!(out, "n,l,overlap,sigma2_hat")?;
                return Ok(());
            }
            let spec = BatchSpec {
                len: args.l,
                overlap: !args.no_overlap,
            };
            let sigma2 = batched_means_tavc(&xs, spec)?;
            writeln!(out, "{CSV_VERSION}")?;
            writeln!(out, "n,l,overlap,sigma2_hat")?;
            writeln!(out, "{},{},{},{}", xs.len(), args.l, spec.overlap, sigma2)?;
        }
        Command::Tune(args) => {
            let r = engine::tune_from_stream(open_input(&args.input)?, args.pilot_n)?;
            writeln!(out, "{CSV_VERSION}")?;
            writeln!(out, "l_hat,lambda_hat,c_hat")?;
            writeln!(out, "{},{},{}", r.block_len, r.lambda_hat, r.c_hat)?;
        }
        Command::Simulate(args) => {
            let process = parse_process(&args.process, cli.seed)?;
            for x in process.stream(args.replicate).take(args.n) {
                writeln!(out, "{x}")?;
            }
        }
        Command::Sweep(args) => {
            let config = engine::SweepConfig {
                process: parse_process(&args.process, cli.seed)?,
                schedule,
                mode: parse_mean_mode(&args.mode)?,
                n_grid: parse_grid(&args.n_grid)?,
                replications: args.reps,
            };
            let outcome = engine::mse_sweep(&config)?;
            engine::write_sweep_csv(&outcome, &mut out)?;
            if let Some(path) = &args.audit {
                let mut f = BufWriter::new(File::create(path)?);
                engine::write_audit_csv(&outcome.audit, &mut f)?;
            }
        }
        Command::Ratio(args) => {
            let config = engine::RatioConfig {
                process: parse_process(&args.process, cli.seed)?,
                n: args.n,
                replications: args.reps,
            };
            let report = engine::ratio_experiment(&config)?;
            engine::write_ratio_csv(&report, &mut out)?;
        }
        Command::Diverge(args) => {
            let report = engine::divergence_demo(args.max_exponent, args.reps, cli.seed)?;
            engine::write_divergence_csv(&report, &mut out)?;
        }
        Command::Stop(args) => match (&args.input, &args.process) {
            (Some(input), _) => {
                let row = engine::sequential_stop_stream(
                    open_input(input)?,
                    schedule,
                    args.alpha,
                    args.target,
                    args.n_min,
                    args.n_max,
                )?;
                let report = engine::StopReport {
                    coverage: None,
                    mean_stop_n: row.n_stop as f64,
                    not_converged: u64::from(!row.converged),
                    rows: vec![row],
                };
                engine::write_stop_csv(&report, &mut out)?;
            }
            (None, Some(process)) => {
                let config = engine::StopConfig {
                    process: parse_process(process, cli.seed)?,
                    schedule,
                    alpha: args.alpha,
                    half_width_target: args.target,
                    n_min: args.n_min,
                    n_max: args.n_max,
                    replications: args.reps,
                };
                let report = engine::sequential_stop(&config)?;
                engine::write_stop_csv(&report, &mut out)?;
            }
            (None, None) => bail!("stop needs either --process or --input"),
        },
        Command::Multichain(args) => {
            let config = engine::MultichainConfig {
                process: parse_process(&args.process, cli.seed)?,
                schedule,
                mode: parse_mean_mode(&args.mode)?,
                chains: args.chains,
                n_per_chain: args.n,
            };
            let report = engine::multichain(&config)?;
            engine::write_multichain_csv(&report, &mut out)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn open_input(spec: &str) -> Result<Box<dyn BufRead>> {
    Ok(if spec == "-" {
        Box::new(BufReader::new(io::stdin()))
    } else {
        Box::new(BufReader::new(
            File::open(spec).with_context(|| format!("opening {spec}"))?,
        ))
    })
}

fn read_all(input: Box<dyn BufRead>) -> Result<Vec<f64>> {
    let mut xs = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let x: f64 = text
            .parse()
            .with_context(|| format!("line {}: cannot parse {text:?} as a number", idx + 1))?;
        xs.push(x);
    }
    Ok(xs)
}

/// Resolve `explicit:@<path>` (newline-delimited integers) and hand the rest
/// to the library parser.
fn parse_schedule(spec: &str) -> Result<BlockSchedule> {
    if let Some(path) = spec.strip_prefix("explicit:@") {
        let file = BufReader::new(File::open(path).with_context(|| format!("opening {path}"))?);
        let mut table = Vec::new();
        for line in file.lines() {
            let line = line?;
            let text = line.trim();
            if text.is_empty() {
                continue;
            }
            table.push(
                text.parse()
                    .with_context(|| format!("bad boundary {text:?} in {path}"))?,
            );
        }
        return Ok(BlockSchedule::explicit(table)?);
    }
    Ok(spec.parse::<BlockSchedule>()?)
}

fn parse_process(spec: &str, seed: u64) -> Result<ProcessSpec> {
    let kind: ProcessKind = spec.parse()?;
    Ok(ProcessSpec::new(kind, seed)?)
}

fn parse_mode(spec: &str) -> Result<Mode> {
    if spec == "unknown" {
        return Ok(Mode::UnknownMean);
    }
    if let Some(mu) = spec.strip_prefix("known:") {
        return Ok(Mode::KnownMean(mu.parse().context("parsing known mean")?));
    }
    bail!("mode must be 'unknown' or 'known:<mu>', got {spec:?}")
}

fn parse_mean_mode(spec: &str) -> Result<MeanMode> {
    match spec {
        "known" => Ok(MeanMode::Known),
        "unknown" => Ok(MeanMode::Unknown),
        _ => bail!("mode must be 'known' or 'unknown', got {spec:?}"),
    }
}

fn parse_grid(spec: &str) -> Result<Vec<u64>> {
    let grid: Result<Vec<u64>, _> = spec.split(',').map(|v| v.trim().parse()).collect();
    grid.context("parsing n-grid")
}

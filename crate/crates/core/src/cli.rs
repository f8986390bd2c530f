//! Command-line front end: `run`, `check`, `sweep` and `table`.
//!
//! Exit codes: 0 when every check passes, 1 when a check fails, 2 on usage or
//! configuration errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::analysis::sweep::{
    grid, nonblocking_read_columns, read_results_csv, read_speedup_columns, render_table,
    result_timing, run_sweep, table_cells, write_results_csv, CellParams,
};
use crate::analysis::{
    check_bounds, check_linearizable, check_liveness, check_safety, BoundsConfig, BoundsReport,
    BruteVerdict, History, LivenessReport, SafetyReport, BRUTE_FORCE_CAP,
};
use crate::protocol::Algorithm;
use crate::sim::{run, Scenario, ScenarioError};
use crate::time::Time;
use crate::trace::{Trace, TraceError, TraceSummary};

pub const EXIT_PASS: u8 = 0;
pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "plsim",
    version,
    about = "Simulate and check lease-and-promise replicated objects"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario, write its trace and a summary, and audit it.
    Run(RunArgs),
    /// Check a trace for safety, linearizability, liveness and blocking bounds.
    Check(CheckArgs),
    /// Run a parameter grid over a scenario template and write a results CSV.
    Sweep(SweepArgs),
    /// Render the two blocking-time tables from sweep results.
    Table(TableArgs),
}

#[derive(Debug, Args)]
pub struct CheckFlags {
    /// Require β to divide 2δ for algorithm-2 RMW bounds.
    #[arg(long)]
    pub strict_bounds: bool,
    /// Largest history the exhaustive linearizability search will take.
    #[arg(long, default_value_t = BRUTE_FORCE_CAP)]
    pub brute_force_cap: usize,
    /// Extra ticks tolerated above each bound. Defaults to three step costs.
    #[arg(long)]
    pub slack: Option<i64>,
    /// Do not fail when requests are still pending at the horizon.
    #[arg(long)]
    pub allow_stuck: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub scenario: PathBuf,
    /// Overrides the scenario's seed.
    #[arg(long, env = "PLSIM_SEED")]
    pub seed: Option<u64>,
    #[arg(long, short, default_value = "out")]
    pub out: PathBuf,
    /// Case-1 reads consider every batch, not only conflicting ones.
    #[arg(long)]
    pub read_all_batches: bool,
    /// Reads skip the final wait for the promise of the batch they read.
    #[arg(long)]
    pub skip_read_promise_wait: bool,
    #[command(flatten)]
    pub checks: CheckFlags,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    pub trace: PathBuf,
    /// Also write the full report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub checks: CheckFlags,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub template: PathBuf,
    /// Algorithms: cht, alg1, alg2.
    #[arg(long, value_delimiter = ',', default_value = "cht,alg1,alg2")]
    pub algorithms: Vec<String>,
    /// α values: integers or sums of multiples of d and d*, e.g. `2d`, `d+3d*`.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub alphas: Vec<String>,
    /// β values, as for α, or `inf`.
    #[arg(long, value_delimiter = ',', default_value = "inf")]
    pub betas: Vec<String>,
    /// Use the cells of both tables instead of the α/β grid.
    #[arg(long, conflicts_with_all = ["alphas", "betas", "algorithms"])]
    pub tables: bool,
    /// Seeds: a count `N` (0..N) or a range `A..B`.
    #[arg(long, default_value = "10")]
    pub seeds: String,
    #[arg(long, short, default_value = "results.csv")]
    pub out: PathBuf,
    #[command(flatten)]
    pub checks: CheckFlags,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    pub results: PathBuf,
    /// Directory for read_speedup.csv and nonblocking_reads.csv.
    #[arg(long, short, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Scenario {
        path: PathBuf,
        source: ScenarioError,
    },
    #[error("{path}: {source}")]
    Trace { path: PathBuf, source: TraceError },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn csv(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
        move |source| CliError::Csv {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Everything the checks found on one trace.
#[derive(Debug, Serialize)]
pub struct CheckReport {
    pub summary: TraceSummary,
    pub safety: SafetyReport,
    pub witness: Result<usize, String>,
    pub brute_force: String,
    pub liveness: LivenessReport,
    pub bounds: BoundsReport,
    pub passed: bool,
}

impl CheckReport {
    pub fn build(trace: &Trace, flags: &CheckFlags) -> CheckReport {
        let safety = check_safety(trace);
        let (witness, brute_force) = match History::from_trace(trace) {
            Ok(h) => {
                let lin = check_linearizable(trace, &h, flags.brute_force_cap);
                let witness = lin
                    .witness
                    .as_ref()
                    .map(|w| w.order.len())
                    .map_err(|e| e.to_string());
                let brute = match &lin.brute_force {
                    BruteVerdict::Linearizable { .. } => "linearizable".to_string(),
                    BruteVerdict::NotLinearizable { minimal } => {
                        format!("not linearizable: {minimal:?}")
                    }
                    BruteVerdict::TooLarge { completed, cap } => {
                        format!("skipped ({completed} ops > cap {cap})")
                    }
                };
                (witness, brute)
            }
            Err(e) => (
                Err(e.to_string()),
                "skipped (malformed history)".to_string(),
            ),
        };
        let liveness = check_liveness(trace);
        let bounds = check_bounds(trace, &bounds_config(flags));
        let passed = safety.passed()
            && witness.is_ok()
            && !brute_force.starts_with("not")
            && (flags.allow_stuck || liveness.passed())
            && bounds.passed();
        CheckReport {
            summary: trace.summary(),
            safety,
            witness,
            brute_force,
            liveness,
            bounds,
            passed,
        }
    }

    pub fn write_text<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let s = &self.summary;
        writeln!(
            w,
            "ops: {} invoked, {} completed ({} reads, {} rmws); batches locked: {}",
            s.ops_invoked, s.ops_completed, s.reads_completed, s.rmws_completed, s.batches_locked
        )?;
        writeln!(
            w,
            "messages: {} sent, {} dropped, {} heartbeats",
            s.messages_sent, s.messages_dropped, s.heartbeats_sent
        )?;
        writeln!(w, "safety:")?;
        write!(w, "{}", self.safety)?;
        match &self.witness {
            Ok(n) => writeln!(w, "linearizability: witness order of {n} ops verified")?,
            Err(e) => writeln!(w, "linearizability: FAIL {e}")?,
        }
        writeln!(w, "exhaustive check: {}", self.brute_force)?;
        let l = &self.liveness;
        if l.passed() {
            writeln!(w, "liveness: all {} requests completed", l.requested)?;
        } else {
            writeln!(
                w,
                "liveness: {} of {} requests completed; stuck {:?}",
                l.completed, l.requested, l.stuck
            )?;
        }
        writeln!(w, "blocking bounds:")?;
        write!(w, "{}", self.bounds)?;
        writeln!(w, "{}", if self.passed { "PASS" } else { "FAIL" })
    }
}

fn bounds_config(flags: &CheckFlags) -> BoundsConfig {
    BoundsConfig {
        slack: flags.slack,
        strict: flags.strict_bounds,
        ..BoundsConfig::default()
    }
}

/// Parses a tick count written as a sum of terms: an integer, `kd` (k·δ) or
/// `kd*` (k·δ*); or `inf`.
pub fn parse_ticks(text: &str, delta: i64, delta_star: i64) -> Result<Time, String> {
    let text = text.trim();
    if text == "inf" {
        return Ok(Time::INFINITY);
    }
    let mut total = 0i64;
    for term in text.split('+') {
        let term = term.trim();
        let (coef, unit) = if let Some(c) = term.strip_suffix("d*") {
            (c, delta_star)
        } else if let Some(c) = term.strip_suffix('d') {
            (c, delta)
        } else {
            (term, 1)
        };
        let k: i64 = if coef.is_empty() && unit != 1 {
            1
        } else {
            coef.parse()
                .map_err(|_| format!("cannot parse {term:?} in {text:?}"))?
        };
        total += k * unit;
    }
    Ok(Time::new(total))
}

/// Parses `N` as `0..N` or `A..B` as given.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, String> {
    let bad = || format!("seeds must be `N` or `A..B`, got {text:?}");
    match text.split_once("..") {
        Some((a, b)) => {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            Ok((a..b).collect())
        }
        None => Ok((0..text.trim().parse::<u64>().map_err(|_| bad())?).collect()),
    }
}

fn parse_algorithm(text: &str) -> Result<Algorithm, String> {
    match text.trim().to_ascii_lowercase().as_str() {
        "cht" => Ok(Algorithm::Cht),
        "alg1" | "1" => Ok(Algorithm::Alg1),
        "alg2" | "2" => Ok(Algorithm::Alg2),
        other => Err(format!("unknown algorithm {other:?}")),
    }
}

fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    let s = Scenario::load(path).map_err(|source| CliError::Scenario {
        path: path.to_path_buf(),
        source,
    })?;
    s.validate().map_err(|source| CliError::Scenario {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(s)
}

pub fn cmd_run<W: Write>(args: &RunArgs, out: &mut W) -> Result<bool, CliError> {
    let mut scenario = load_scenario(&args.scenario)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    scenario.protocol.read_all_batches |= args.read_all_batches;
    scenario.protocol.skip_read_promise_wait |= args.skip_read_promise_wait;
    let trace = run(&scenario).map_err(|source| CliError::Scenario {
        path: args.scenario.clone(),
        source,
    })?;
    fs::create_dir_all(&args.out).map_err(CliError::io(&args.out))?;
    let trace_path = args.out.join("trace.jsonl");
    trace.save(&trace_path).map_err(|source| CliError::Trace {
        path: trace_path.clone(),
        source,
    })?;
    let report = CheckReport::build(&trace, &args.checks);
    let summary_path = args.out.join("summary.json");
    let json = serde_json::to_string_pretty(&report).expect("reports serialize");
    fs::write(&summary_path, json).map_err(CliError::io(&summary_path))?;
    let name = if scenario.name.is_empty() {
        "scenario"
    } else {
        &scenario.name
    };
    let _ = writeln!(
        out,
        "{name} (seed {}): trace written to {}",
        scenario.seed,
        trace_path.display()
    );
    let _ = report.write_text(out);
    Ok(report.passed)
}

pub fn cmd_check<W: Write>(args: &CheckArgs, out: &mut W) -> Result<bool, CliError> {
    let trace = Trace::load(&args.trace).map_err(|source| CliError::Trace {
        path: args.trace.clone(),
        source,
    })?;
    let report = CheckReport::build(&trace, &args.checks);
    if let Some(path) = &args.report {
        let json = serde_json::to_string_pretty(&report).expect("reports serialize");
        fs::write(path, json).map_err(CliError::io(path))?;
    }
    let _ = report.write_text(out);
    Ok(report.passed)
}

pub fn cmd_sweep<W: Write>(args: &SweepArgs, out: &mut W) -> Result<bool, CliError> {
    let template = load_scenario(&args.template)?;
    let (d, ds) = (template.timing.delta, template.timing.delta_star());
    let cells: Vec<CellParams> = if args.tables {
        table_cells(d, ds)
    } else {
        // An empty list (`--alphas ""`) gives an empty grid.
        let items = |v: &[String]| {
            v.iter()
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect::<Vec<_>>()
        };
        let algorithms = items(&args.algorithms)
            .iter()
            .map(|a| parse_algorithm(a))
            .collect::<Result<Vec<_>, _>>();
        let ticks = |v: &[String]| {
            items(v)
                .iter()
                .map(|t| parse_ticks(t, d, ds))
                .collect::<Result<Vec<_>, _>>()
        };
        let alphas = ticks(&args.alphas)
            .map_err(CliError::Usage)?
            .into_iter()
            .map(|a| a.ticks().ok_or_else(|| "α must be finite".to_string()))
            .collect::<Result<Vec<_>, _>>();
        grid(
            &algorithms.map_err(CliError::Usage)?,
            &alphas.map_err(CliError::Usage)?,
            &ticks(&args.betas).map_err(CliError::Usage)?,
        )
    };
    let seeds = parse_seeds(&args.seeds).map_err(CliError::Usage)?;
    let results = run_sweep(&template, &cells, &seeds, &bounds_config(&args.checks));
    let file = fs::File::create(&args.out).map_err(CliError::io(&args.out))?;
    write_results_csv(&results, file).map_err(CliError::csv(&args.out))?;
    let mut clean = true;
    for r in &results {
        let status = if !r.skipped.is_empty() {
            format!("skipped: {}", r.skipped)
        } else if r.clean() {
            "ok".to_string()
        } else {
            clean = false;
            format!(
                "FAIL ({} bound violations, {} unsafe runs, {} non-linearizable runs)",
                r.bound_violations, r.safety_failures, r.linearizability_failures
            )
        };
        let _ = writeln!(
            out,
            "{:?} alpha={} beta={} runs={}: {status}",
            r.algorithm, r.alpha, r.beta, r.runs
        );
    }
    let _ = writeln!(
        out,
        "{} cells written to {}",
        results.len(),
        args.out.display()
    );
    Ok(clean)
}

pub fn cmd_table<W: Write>(args: &TableArgs, out: &mut W) -> Result<bool, CliError> {
    let file = fs::File::open(&args.results).map_err(CliError::io(&args.results))?;
    let results = read_results_csv(file).map_err(CliError::csv(&args.results))?;
    let Some((d, ds)) = result_timing(&results) else {
        return Err(CliError::Usage(format!(
            "{}: no results",
            args.results.display()
        )));
    };
    fs::create_dir_all(&args.out).map_err(CliError::io(&args.out))?;
    for (name, columns) in [
        ("read_speedup.csv", read_speedup_columns(d, ds)),
        ("nonblocking_reads.csv", nonblocking_read_columns(d, ds)),
    ] {
        let path = args.out.join(name);
        let mut buf = Vec::new();
        render_table(&results, &columns, &mut buf).map_err(CliError::csv(&path))?;
        fs::write(&path, &buf).map_err(CliError::io(&path))?;
        let _ = writeln!(out, "{name} (delta={d}, delta*={ds}):");
        let _ = out.write_all(&buf);
    }
    Ok(true)
}

pub fn execute<W: Write>(cli: &Cli, out: &mut W) -> Result<bool, CliError> {
    match &cli.command {
        Command::Run(a) => cmd_run(a, out),
        Command::Check(a) => cmd_check(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
        Command::Table(a) => cmd_table(a, out),
    }
}

/// Parses the process arguments, runs the command and maps the outcome to an
/// exit code.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_PASS
            });
        }
    };
    let mut stdout = std::io::stdout().lock();
    match execute(&cli, &mut stdout) {
        Ok(true) => ExitCode::from(EXIT_PASS),
        Ok(false) => ExitCode::from(EXIT_CHECK_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

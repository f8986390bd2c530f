//! Parameter sweeps over a scenario template and the blocking-time tables
//! assembled from their results.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::protocol::Algorithm;
use crate::sim::{run, Scenario};
use crate::time::Time;

use super::blocking::{OpClass, Period};
use super::bounds::{check_bounds, theoretical_bound, BoundQuery, BoundsConfig, BucketVerdict};
use super::history::History;
use super::linearizability::check_witness;
use super::safety::check_safety;

/// The protocol knobs varied by a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CellParams {
    pub algorithm: Algorithm,
    pub alpha: i64,
    pub beta: Time,
}

/// Cross product of the given values. CHT cells keep only α = 0, β = ∞;
/// algorithm-1 cells keep only β = ∞.
pub fn grid(algorithms: &[Algorithm], alphas: &[i64], betas: &[Time]) -> Vec<CellParams> {
    let mut out = Vec::new();
    for &algorithm in algorithms {
        for &alpha in alphas {
            for &beta in betas {
                let keep = match algorithm {
                    Algorithm::Cht => alpha == 0 && beta == Time::INFINITY,
                    Algorithm::Alg1 => beta == Time::INFINITY,
                    Algorithm::Alg2 => true,
                };
                let cell = CellParams {
                    algorithm,
                    alpha,
                    beta,
                };
                if keep && !out.contains(&cell) {
                    out.push(cell);
                }
            }
        }
    }
    out
}

/// A table column: its heading and parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Column {
    pub name: &'static str,
    pub cell: CellParams,
}

/// Columns of the read-improvement table.
pub fn read_speedup_columns(delta: i64, delta_star: i64) -> Vec<Column> {
    vec![
        Column {
            name: "CHT",
            cell: CellParams {
                algorithm: Algorithm::Cht,
                alpha: 0,
                beta: Time::INFINITY,
            },
        },
        Column {
            name: "Alg1 alpha=2d",
            cell: CellParams {
                algorithm: Algorithm::Alg1,
                alpha: 2 * delta,
                beta: Time::INFINITY,
            },
        },
        Column {
            name: "Alg2 alpha=beta=2d*",
            cell: CellParams {
                algorithm: Algorithm::Alg2,
                alpha: 2 * delta_star,
                beta: Time::new(2 * delta_star),
            },
        },
    ]
}

/// Columns of the non-blocking-reads table.
pub fn nonblocking_read_columns(delta: i64, delta_star: i64) -> Vec<Column> {
    vec![
        Column {
            name: "CHT",
            cell: CellParams {
                algorithm: Algorithm::Cht,
                alpha: 0,
                beta: Time::INFINITY,
            },
        },
        Column {
            name: "Alg1 alpha=3d",
            cell: CellParams {
                algorithm: Algorithm::Alg1,
                alpha: 3 * delta,
                beta: Time::INFINITY,
            },
        },
        Column {
            name: "Alg2 alpha=beta=3d*",
            cell: CellParams {
                algorithm: Algorithm::Alg2,
                alpha: 3 * delta_star,
                beta: Time::new(3 * delta_star),
            },
        },
        Column {
            name: "Alg2 alpha=d+3d* beta=3d*",
            cell: CellParams {
                algorithm: Algorithm::Alg2,
                alpha: delta + 3 * delta_star,
                beta: Time::new(3 * delta_star),
            },
        },
    ]
}

/// All cells needed by both tables.
pub fn table_cells(delta: i64, delta_star: i64) -> Vec<CellParams> {
    let mut cells: Vec<CellParams> = Vec::new();
    for c in read_speedup_columns(delta, delta_star)
        .into_iter()
        .chain(nonblocking_read_columns(delta, delta_star))
    {
        if !cells.contains(&c.cell) {
            cells.push(c.cell);
        }
    }
    cells
}

/// One sweep cell aggregated over its seeds. Also the CSV row format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub algorithm: Algorithm,
    pub alpha: i64,
    pub beta: Time,
    pub delta: i64,
    pub delta_star: i64,
    pub epsilon: i64,
    pub runs: usize,
    /// Non-empty when the cell was skipped, with the reason.
    pub skipped: String,
    pub stable_rmw_max: Option<i64>,
    pub stable_rmw_bound: Option<i64>,
    pub stable_read_max: Option<i64>,
    pub stable_read_bound: Option<i64>,
    pub nice_rmw_max: Option<i64>,
    pub nice_rmw_bound: Option<i64>,
    pub nice_read_max: Option<i64>,
    pub nice_read_bound: Option<i64>,
    pub bound_violations: usize,
    pub safety_failures: usize,
    pub linearizability_failures: usize,
}

impl CellResult {
    pub fn cell(&self) -> CellParams {
        CellParams {
            algorithm: self.algorithm,
            alpha: self.alpha,
            beta: self.beta,
        }
    }

    pub fn max(&self, period: Period, op: OpClass) -> Option<i64> {
        match (period, op) {
            (Period::Stable, OpClass::Rmw) => self.stable_rmw_max,
            (Period::Stable, OpClass::Read) => self.stable_read_max,
            (Period::Nice, OpClass::Rmw) => self.nice_rmw_max,
            (Period::Nice, OpClass::Read) => self.nice_read_max,
            _ => None,
        }
    }

    pub fn bound(&self, period: Period, op: OpClass) -> Option<i64> {
        match (period, op) {
            (Period::Stable, OpClass::Rmw) => self.stable_rmw_bound,
            (Period::Stable, OpClass::Read) => self.stable_read_bound,
            (Period::Nice, OpClass::Rmw) => self.nice_rmw_bound,
            (Period::Nice, OpClass::Read) => self.nice_read_bound,
            _ => None,
        }
    }

    /// Whether the cell ran and every check passed.
    pub fn clean(&self) -> bool {
        self.skipped.is_empty()
            && self.bound_violations == 0
            && self.safety_failures == 0
            && self.linearizability_failures == 0
    }
}

/// Applies a cell's parameters to a template.
pub fn apply_cell(template: &Scenario, cell: CellParams) -> Scenario {
    let mut s = template.clone();
    s.protocol.algorithm = cell.algorithm;
    s.protocol.alpha = cell.alpha;
    s.protocol.beta = cell.beta;
    s
}

fn max_opt(a: Option<i64>, b: Option<i64>) -> Option<i64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Runs every cell on every seed. Cells outside the table's parameter
/// range or with invalid protocol parameters are skipped and flagged.
pub fn run_sweep(
    template: &Scenario,
    cells: &[CellParams],
    seeds: &[u64],
    bounds: &BoundsConfig,
) -> Vec<CellResult> {
    cells
        .par_iter()
        .map(|&cell| run_cell(template, cell, seeds, bounds))
        .collect()
}

fn run_cell(
    template: &Scenario,
    cell: CellParams,
    seeds: &[u64],
    bounds: &BoundsConfig,
) -> CellResult {
    let base = apply_cell(template, cell);
    let timing = &base.timing;
    let query = |period, op| BoundQuery {
        algorithm: cell.algorithm,
        period,
        op,
        alpha: cell.alpha,
        beta: cell.beta,
        delta: timing.delta,
        delta_star: timing.delta_star(),
        epsilon: base.protocol.wait_epsilon(),
        strict: bounds.strict,
    };
    let mut result = CellResult {
        algorithm: cell.algorithm,
        alpha: cell.alpha,
        beta: cell.beta,
        delta: timing.delta,
        delta_star: timing.delta_star(),
        epsilon: base.protocol.epsilon,
        runs: 0,
        skipped: String::new(),
        stable_rmw_max: None,
        stable_rmw_bound: None,
        stable_read_max: None,
        stable_read_bound: None,
        nice_rmw_max: None,
        nice_rmw_bound: None,
        nice_read_max: None,
        nice_read_bound: None,
        bound_violations: 0,
        safety_failures: 0,
        linearizability_failures: 0,
    };
    for (period, op) in [
        (Period::Stable, OpClass::Rmw),
        (Period::Stable, OpClass::Read),
    ] {
        if let Err(e) = theoretical_bound(&query(period, op)) {
            result.skipped = e.to_string();
            return result;
        }
    }
    if let Err(e) = base.validate() {
        result.skipped = e.to_string();
        return result;
    }
    result.stable_rmw_bound = theoretical_bound(&query(Period::Stable, OpClass::Rmw)).ok();
    result.stable_read_bound = theoretical_bound(&query(Period::Stable, OpClass::Read)).ok();
    result.nice_rmw_bound = theoretical_bound(&query(Period::Nice, OpClass::Rmw)).ok();
    result.nice_read_bound = theoretical_bound(&query(Period::Nice, OpClass::Read)).ok();

    let outcomes: Vec<_> = seeds
        .par_iter()
        .map(|&seed| {
            let mut s = base.clone();
            s.seed = seed;
            let trace = run(&s).expect("validated");
            let safe = check_safety(&trace).passed();
            let linear =
                History::from_trace(&trace).is_ok_and(|h| check_witness(&trace, &h).is_ok());
            (check_bounds(&trace, bounds), safe, linear)
        })
        .collect();
    for (report, safe, linear) in outcomes {
        result.runs += 1;
        result.safety_failures += usize::from(!safe);
        result.linearizability_failures += usize::from(!linear);
        result.bound_violations += report
            .rows
            .iter()
            .filter(|r| r.verdict == BucketVerdict::Fail)
            .count();
        let m = |p, o| report.blocking.max(p, o);
        result.stable_rmw_max = max_opt(result.stable_rmw_max, m(Period::Stable, OpClass::Rmw));
        result.stable_read_max = max_opt(result.stable_read_max, m(Period::Stable, OpClass::Read));
        result.nice_rmw_max = max_opt(result.nice_rmw_max, m(Period::Nice, OpClass::Rmw));
        result.nice_read_max = max_opt(result.nice_read_max, m(Period::Nice, OpClass::Read));
    }
    result
}

/// CSV header of [`CellResult`], for result files with no rows.
pub const RESULT_COLUMNS: [&str; 19] = [
    "algorithm",
    "alpha",
    "beta",
    "delta",
    "delta_star",
    "epsilon",
    "runs",
    "skipped",
    "stable_rmw_max",
    "stable_rmw_bound",
    "stable_read_max",
    "stable_read_bound",
    "nice_rmw_max",
    "nice_rmw_bound",
    "nice_read_max",
    "nice_read_bound",
    "bound_violations",
    "safety_failures",
    "linearizability_failures",
];

pub fn write_results_csv<W: Write>(results: &[CellResult], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if results.is_empty() {
        out.write_record(RESULT_COLUMNS)?;
    }
    for r in results {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_results_csv<R: Read>(r: R) -> csv::Result<Vec<CellResult>> {
    csv::Reader::from_reader(r).deserialize().collect()
}

const TABLE_ROWS: [(Period, OpClass); 4] = [
    (Period::Stable, OpClass::Rmw),
    (Period::Stable, OpClass::Read),
    (Period::Nice, OpClass::Rmw),
    (Period::Nice, OpClass::Read),
];

/// A table shaped like the published ones: rows are period × operation,
/// each column reports the measured maximum and the bound. Cells with no
/// matching result read "no data".
pub fn render_table<W: Write>(results: &[CellResult], columns: &[Column], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["period".to_string(), "op".to_string()];
    for c in columns {
        header.push(format!("{} measured", c.name));
        header.push(format!("{} bound", c.name));
    }
    out.write_record(&header)?;
    for (period, op) in TABLE_ROWS {
        let mut row = vec![period.to_string(), op.to_string()];
        for c in columns {
            let hit = results
                .iter()
                .find(|r| r.cell() == c.cell && r.skipped.is_empty());
            let fmt = |v: Option<i64>| v.map_or("no data".to_string(), |v| v.to_string());
            row.push(fmt(hit.and_then(|r| r.max(period, op))));
            row.push(fmt(hit.and_then(|r| r.bound(period, op))));
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// The (δ, δ*) of the results, taken from the first row.
pub fn result_timing(results: &[CellResult]) -> Option<(i64, i64)> {
    results.first().map(|r| (r.delta, r.delta_star))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CellResult {
        CellResult {
            algorithm: Algorithm::Alg2,
            alpha: 4,
            beta: Time::new(4),
            delta: 12,
            delta_star: 2,
            epsilon: 0,
            runs: 3,
            skipped: String::new(),
            stable_rmw_max: Some(24),
            stable_rmw_bound: Some(24),
            stable_read_max: None,
            stable_read_bound: Some(12),
            nice_rmw_max: Some(4),
            nice_rmw_bound: Some(4),
            nice_read_max: Some(2),
            nice_read_bound: Some(2),
            bound_violations: 0,
            safety_failures: 0,
            linearizability_failures: 0,
        }
    }

    #[test]
    fn empty_results_keep_the_header() {
        let mut full = Vec::new();
        write_results_csv(&[sample()], &mut full).unwrap();
        let mut empty = Vec::new();
        write_results_csv(&[], &mut empty).unwrap();
        let header = String::from_utf8(full)
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string();
        assert_eq!(String::from_utf8(empty).unwrap().trim_end(), header);
        assert!(read_results_csv(header.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn results_roundtrip_through_csv() {
        let mut infinite = sample();
        infinite.beta = Time::INFINITY;
        infinite.skipped = "β = inf outside range".into();
        let rows = vec![sample(), infinite];
        let mut buf = Vec::new();
        write_results_csv(&rows, &mut buf).unwrap();
        assert_eq!(read_results_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn grid_drops_cells_without_status_rounds_for_other_algorithms() {
        let cells = grid(
            &[Algorithm::Cht, Algorithm::Alg1, Algorithm::Alg2],
            &[0, 8],
            &[Time::new(4), Time::INFINITY],
        );
        let count = |a| cells.iter().filter(|c| c.algorithm == a).count();
        assert_eq!(
            (
                count(Algorithm::Cht),
                count(Algorithm::Alg1),
                count(Algorithm::Alg2)
            ),
            (1, 2, 4)
        );
        assert!(grid(&[], &[0], &[Time::INFINITY]).is_empty());
    }
}

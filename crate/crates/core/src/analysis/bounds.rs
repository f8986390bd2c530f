use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::protocol::Algorithm;
use crate::time::Time;
use crate::trace::Trace;

use super::blocking::{blocking_times_with, BlockingConfig, BlockingReport};
pub use super::blocking::{OpClass, Period};

/// One cell of the worst-case blocking tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundQuery {
    pub algorithm: Algorithm,
    pub period: Period,
    pub op: OpClass,
    pub alpha: i64,
    /// Status period; `inf` turns algorithm 2 into algorithm 1.
    pub beta: Time,
    pub delta: i64,
    pub delta_star: i64,
    pub epsilon: i64,
    /// Additionally require β to divide 2δ for algorithm-2 RMWs.
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BoundError {
    #[error("bounds exist only for the stable period and nice periods")]
    NoBound(Period),
    #[error("α = {alpha} exceeds 3δ = {max}")]
    AlphaAboveThreeDelta { alpha: i64, max: i64 },
    #[error("α = {alpha} exceeds δ + β = {max}")]
    AlphaAboveDeltaPlusBeta { alpha: i64, max: i64 },
    #[error("β = {beta} outside [2δ*, 2δ] = [{lo}, {hi}]")]
    BetaOutOfRange { beta: i64, lo: i64, hi: i64 },
    #[error("β = {beta} does not divide 2δ = {two_delta}")]
    BetaNotDivisor { beta: i64, two_delta: i64 },
    #[error("the lease-only baseline requires α = 0")]
    BaselineAlpha,
}

impl BoundQuery {
    fn effective_algorithm(&self) -> Algorithm {
        match self.algorithm {
            Algorithm::Alg2 if !self.beta.is_finite() => Algorithm::Alg1,
            a => a,
        }
    }

    /// The header conditions of the table column the query falls in.
    pub fn validate(&self) -> Result<(), BoundError> {
        if !matches!(self.period, Period::Stable | Period::Nice) {
            return Err(BoundError::NoBound(self.period));
        }
        match self.effective_algorithm() {
            Algorithm::Cht if self.alpha != 0 => Err(BoundError::BaselineAlpha),
            Algorithm::Cht => Ok(()),
            Algorithm::Alg1 => {
                if self.alpha > 3 * self.delta {
                    return Err(BoundError::AlphaAboveThreeDelta {
                        alpha: self.alpha,
                        max: 3 * self.delta,
                    });
                }
                Ok(())
            }
            Algorithm::Alg2 => {
                let beta = self.beta.finite();
                if self.alpha > self.delta + beta {
                    return Err(BoundError::AlphaAboveDeltaPlusBeta {
                        alpha: self.alpha,
                        max: self.delta + beta,
                    });
                }
                let (lo, hi) = (2 * self.delta_star, 2 * self.delta);
                if beta < lo || beta > hi {
                    return Err(BoundError::BetaOutOfRange { beta, lo, hi });
                }
                if self.strict && self.op == OpClass::Rmw && (2 * self.delta) % beta != 0 {
                    return Err(BoundError::BetaNotDivisor {
                        beta,
                        two_delta: 2 * self.delta,
                    });
                }
                Ok(())
            }
        }
    }
}

/// Worst-case blocking time in ticks of the table cell matching `q`, for any
/// ε ≥ 0 (reducing to the ε = 0 table when ε = 0).
pub fn theoretical_bound(q: &BoundQuery) -> Result<i64, BoundError> {
    q.validate()?;
    let (d, ds, a, e) = (q.delta, q.delta_star, q.alpha, q.epsilon);
    let nice = q.period == Period::Nice;
    let bound = match (q.effective_algorithm(), q.op) {
        // The baseline is algorithm 1 with α = 0, minus the promise waits.
        (Algorithm::Cht, OpClass::Rmw) => {
            if nice {
                2 * ds
            } else {
                2 * d
            }
        }
        (Algorithm::Cht, OpClass::Read) => (if nice { 3 * ds } else { 3 * d }).max(e),
        (Algorithm::Alg1, OpClass::Rmw) => (if nice { 2 * ds } else { 2 * d }).max(a + e),
        (Algorithm::Alg1, OpClass::Read) => (if nice { 3 * ds } else { 3 * d } - a).max(e),
        (Algorithm::Alg2, op) => {
            let b = q.beta.finite();
            match (op, nice) {
                // The last status round goes out at the largest multiple of
                // β below 2δ; that is 2δ − β when β divides 2δ.
                (OpClass::Rmw, false) => (2 * d).max(ceil_div(2 * d, b) * b - b + a + e),
                (OpClass::Read, false) => (d + b - a).max(e),
                (OpClass::Rmw, true) => (2 * ds).max(a + e),
                (OpClass::Read, true) => (3 * ds - a).max(e),
            }
        }
    };
    Ok(bound)
}

fn ceil_div(a: i64, b: i64) -> i64 {
    (a + b - 1) / b
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BucketVerdict {
    Pass,
    Fail,
    NoData,
    /// The configuration lies outside the table's parameter range.
    NotApplicable(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BoundRow {
    pub period: Period,
    pub op: OpClass,
    pub measured: Option<i64>,
    pub count: usize,
    pub bound: Option<i64>,
    pub slack: i64,
    pub verdict: BucketVerdict,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundsReport {
    pub rows: Vec<BoundRow>,
    pub blocking: BlockingReport,
}

impl BoundsReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.verdict != BucketVerdict::Fail)
    }

    pub fn row(&self, period: Period, op: OpClass) -> Option<&BoundRow> {
        self.rows.iter().find(|r| r.period == period && r.op == op)
    }
}

impl fmt::Display for BoundsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.rows {
            let measured = r.measured.map_or("-".to_string(), |m| m.to_string());
            let bound = r.bound.map_or("-".to_string(), |b| b.to_string());
            let verdict = match &r.verdict {
                BucketVerdict::Pass => "pass".to_string(),
                BucketVerdict::Fail => "FAIL".to_string(),
                BucketVerdict::NoData => "no data".to_string(),
                BucketVerdict::NotApplicable(why) => format!("n/a ({why})"),
            };
            writeln!(
                f,
                "  {:<6} {:<4} max {:>5} over {:>4} ops, bound {:>5} + {}: {verdict}",
                r.period.to_string(),
                r.op.to_string(),
                measured,
                r.count,
                bound,
                r.slack
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BoundsConfig {
    pub blocking: BlockingConfig,
    /// Defaults to three per-step costs.
    pub slack: Option<i64>,
    pub strict: bool,
}

/// Compares measured bucket maxima against the table cells for the run's
/// configuration, using the network's true δ and δ*.
pub fn check_bounds(trace: &Trace, config: &BoundsConfig) -> BoundsReport {
    let s = &trace.header.scenario;
    let p = &s.protocol;
    let blocking = blocking_times_with(trace, &config.blocking);
    let slack = config.slack.unwrap_or(3 * p.step_cost);
    let mut rows = Vec::new();
    for period in [Period::Stable, Period::Nice] {
        for op in [OpClass::Rmw, OpClass::Read] {
            let q = BoundQuery {
                algorithm: p.algorithm,
                period,
                op,
                alpha: p.alpha,
                beta: p.beta,
                delta: s.timing.delta,
                delta_star: s.timing.delta_star(),
                epsilon: p.wait_epsilon(),
                strict: config.strict,
            };
            let stats = blocking
                .buckets
                .get(&super::blocking::Bucket { period, op });
            let measured = stats.filter(|s| s.count > 0).map(|s| s.max);
            let count = stats.map_or(0, |s| s.count);
            let bound = theoretical_bound(&q);
            let verdict = match (&bound, measured) {
                (Err(e), _) => BucketVerdict::NotApplicable(e.to_string()),
                (Ok(_), None) => BucketVerdict::NoData,
                (Ok(b), Some(m)) if m <= b + slack => BucketVerdict::Pass,
                (Ok(_), Some(_)) => BucketVerdict::Fail,
            };
            rows.push(BoundRow {
                period,
                op,
                measured,
                count,
                bound: bound.ok(),
                slack,
                verdict,
            });
        }
    }
    BoundsReport { rows, blocking }
}

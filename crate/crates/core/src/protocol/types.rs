use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::object::OpKind;
use crate::time::Time;

/// Process identifier; also the process's index in the system.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProcessId(pub usize);

impl fmt::Debug for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// Batch index. `-1` and `0` are the two initial slots.
pub type BatchIndex = i64;

/// Globally unique operation identity. Ordered by `(issuer, counter)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OpId {
    pub issuer: ProcessId,
    pub counter: u64,
}

/// An operation instance. Ordering is by id first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Operation {
    pub id: OpId,
    pub kind: OpKind,
}

/// Operations sorted in id order.
pub type OpSet = BTreeSet<Operation>;

/// Lexicographic comparison of operation ids.
pub fn op_order(a: &Operation, b: &Operation) -> std::cmp::Ordering {
    a.id.cmp(&b.id)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Batch {
    pub ops: OpSet,
    pub promise: Time,
}

impl Batch {
    /// `(∅, ∞)`: the value of every unknown slot other than 0.
    pub fn initial() -> Batch {
        Batch {
            ops: OpSet::new(),
            promise: Time::INFINITY,
        }
    }

    /// `(∅, 0)`: slot 0 at every process.
    pub fn zero() -> Batch {
        Batch {
            ops: OpSet::new(),
            promise: Time::ZERO,
        }
    }

    pub fn is_initial(&self) -> bool {
        self.ops.is_empty() && self.promise == Time::INFINITY
    }
}

/// A read lease `(batch, start)`, ordered lexicographically.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Lease {
    pub batch: BatchIndex,
    pub start: Time,
}

impl Lease {
    pub fn initial() -> Lease {
        Lease {
            batch: 0,
            start: Time::NEG_INFINITY,
        }
    }

    /// Valid at local time `t` iff `t < start + λ`.
    pub fn valid_at(&self, t: Time, lambda: i64) -> bool {
        t < self.start + lambda
    }
}

/// Lexicographic comparison on `(batch, start)`.
pub fn lease_compare(a: &Lease, b: &Lease) -> std::cmp::Ordering {
    a.cmp(b)
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Estimate {
    pub ops: OpSet,
    pub ts: Time,
    pub k: BatchIndex,
}

impl Estimate {
    pub fn initial() -> Estimate {
        Estimate {
            ops: OpSet::new(),
            ts: Time::new(-1),
            k: 0,
        }
    }

    pub fn key(&self) -> (Time, BatchIndex) {
        (self.ts, self.k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Lease-only baseline: no promises, reads wait on every conflicting
    /// pending batch.
    Cht,
    /// Promise mechanism.
    Alg1,
    /// Promise mechanism with periodic status rounds.
    Alg2,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Cht => "cht",
            Algorithm::Alg1 => "alg1",
            Algorithm::Alg2 => "alg2",
        })
    }
}

/// Protocol configuration. All durations are in ticks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolParams {
    pub algorithm: Algorithm,
    /// Promise length α.
    #[serde(default)]
    pub alpha: i64,
    /// Status period β. `inf` reduces Algorithm 2 to Algorithm 1.
    #[serde(default = "infinite")]
    pub beta: Time,
    /// Lease period λ.
    pub lambda: i64,
    /// Lease renewal period R.
    pub renew: i64,
    /// Clock skew bound ε assumed by the protocol.
    #[serde(default)]
    pub epsilon: i64,
    /// Post-GST delay bound δ assumed by the protocol.
    pub delta: i64,
    /// Period of "periodically send" loops. Defaults to `max(1, δ/2)`.
    #[serde(default)]
    pub retx: Option<i64>,
    /// Per-response local processing cost α₀.
    #[serde(default)]
    pub step_cost: i64,
    /// Case-1 reads ignore the conflict filter.
    #[serde(default)]
    pub read_all_batches: bool,
    /// Reads skip the final wait for the promise of the batch they read.
    #[serde(default)]
    pub skip_read_promise_wait: bool,
    /// Clears the extra-ε waits. Unsafe when ε > 0; exists for checker
    /// validation.
    #[serde(default = "yes")]
    pub epsilon_waits: bool,
}

fn infinite() -> Time {
    Time::INFINITY
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParamError {
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("{0} must be non-negative")]
    Negative(&'static str),
    #[error("λ = {lambda} must exceed 3δ + α₀ = {min}")]
    LeaseTooShort { lambda: i64, min: i64 },
    #[error("R = {renew} must be below λ − (3δ + α₀) = {max}")]
    RenewTooLong { renew: i64, max: i64 },
    #[error("β must be at least 1 tick")]
    BetaTooSmall,
    #[error("β is only meaningful for algorithm 2")]
    BetaWithoutStatus,
    #[error("α must be 0 for the lease-only baseline")]
    AlphaWithBaseline,
}

impl ProtocolParams {
    /// A configuration with the given algorithm and delay bound and
    /// conservative lease timing: λ = 6δ + α, R = 2δ.
    pub fn new(algorithm: Algorithm, delta: i64, alpha: i64) -> ProtocolParams {
        ProtocolParams {
            algorithm,
            alpha,
            beta: Time::INFINITY,
            lambda: 6 * delta + alpha,
            renew: 2 * delta,
            epsilon: 0,
            delta,
            retx: None,
            step_cost: 0,
            read_all_batches: false,
            skip_read_promise_wait: false,
            epsilon_waits: true,
        }
    }

    pub fn retx(&self) -> i64 {
        self.retx.unwrap_or((self.delta / 2).max(1))
    }

    /// ε as applied at the four corrected wait sites.
    pub fn wait_epsilon(&self) -> i64 {
        if self.epsilon_waits {
            self.epsilon
        } else {
            0
        }
    }

    /// Whether main-loop batches are committed with status rounds.
    pub fn uses_status(&self) -> bool {
        self.algorithm == Algorithm::Alg2 && self.beta.is_finite()
    }

    pub fn uses_promises(&self) -> bool {
        self.algorithm != Algorithm::Cht
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if self.delta <= 0 {
            return Err(ParamError::NotPositive("δ"));
        }
        if self.lambda <= 0 {
            return Err(ParamError::NotPositive("λ"));
        }
        if self.renew <= 0 {
            return Err(ParamError::NotPositive("R"));
        }
        if self.retx() <= 0 {
            return Err(ParamError::NotPositive("retx"));
        }
        for (name, v) in [
            ("α", self.alpha),
            ("ε", self.epsilon),
            ("α₀", self.step_cost),
        ] {
            if v < 0 {
                return Err(ParamError::Negative(name));
            }
        }
        let min = 3 * self.delta + self.step_cost;
        if self.lambda <= min {
            return Err(ParamError::LeaseTooShort {
                lambda: self.lambda,
                min,
            });
        }
        if self.renew >= self.lambda - min {
            return Err(ParamError::RenewTooLong {
                renew: self.renew,
                max: self.lambda - min,
            });
        }
        match self.algorithm {
            Algorithm::Alg2 => {
                if self.beta < Time::new(1) {
                    return Err(ParamError::BetaTooSmall);
                }
            }
            Algorithm::Alg1 | Algorithm::Cht => {
                if self.beta != Time::INFINITY {
                    return Err(ParamError::BetaWithoutStatus);
                }
            }
        }
        if self.algorithm == Algorithm::Cht && self.alpha != 0 {
            return Err(ParamError::AlphaWithBaseline);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cmp::Ordering;

    #[test]
    fn lease_order_is_lexicographic() {
        let l = |b, s| Lease {
            batch: b,
            start: Time::new(s),
        };
        assert_eq!(lease_compare(&l(3, 10), &l(2, 99)), Ordering::Greater);
        assert_eq!(lease_compare(&l(3, 10), &l(3, 10)), Ordering::Equal);
        assert_eq!(lease_compare(&Lease::initial(), &l(0, 0)), Ordering::Less);
    }

    #[test]
    fn op_ids_order_by_issuer_then_counter() {
        let op = |p, c| Operation {
            id: OpId {
                issuer: ProcessId(p),
                counter: c,
            },
            kind: OpKind::NoOp,
        };
        assert_eq!(op_order(&op(1, 1), &op(1, 2)), Ordering::Less);
        assert_eq!(op_order(&op(1, 7), &op(2, 1)), Ordering::Less);
        assert_eq!(op_order(&op(3, 4), &op(3, 4)), Ordering::Equal);
    }

    #[test]
    fn parameter_ranges() {
        let p = ProtocolParams::new(Algorithm::Alg1, 10, 20);
        assert!(p.validate().is_ok());
        let mut q = p.clone();
        q.lambda = 30;
        assert!(matches!(
            q.validate(),
            Err(ParamError::LeaseTooShort { .. })
        ));
        let mut q = p.clone();
        q.renew = q.lambda - 30;
        assert!(matches!(q.validate(), Err(ParamError::RenewTooLong { .. })));
        let mut q = p;
        q.algorithm = Algorithm::Alg2;
        q.beta = Time::ZERO;
        assert_eq!(q.validate(), Err(ParamError::BetaTooSmall));
    }
}

//! Two independent linearizability checkers: one rebuilds the protocol's own
//! linearization from the trace, the other searches all orders of a small
//! history with no knowledge of the protocol.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use crate::object::{ObjectType, OpKind, Value};
use crate::protocol::{BatchIndex, OpId, OpSet};
use crate::time::Time;
use crate::trace::{Event, ResponseDetail, Trace};

use super::history::{History, HistoryOp};

/// Default operation cap of the exhaustive checker.
pub const BRUTE_FORCE_CAP: usize = 12;
const MAX_SEARCH_OPS: usize = 24;

/// Earliest real time at which some clock shows at least `t`.
pub fn earliest_real(offsets: &[i64], t: Time) -> i64 {
    if t == Time::NEG_INFINITY {
        return 0;
    }
    let max = offsets.iter().copied().max().unwrap_or(0);
    (t.finite() - max).max(0)
}

/// What a locked batch contributes to the linearization.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LockedBatch {
    pub j: BatchIndex,
    pub ops: OpSet,
    /// Earliest real time any process locked it.
    pub first_lock: i64,
    /// Promise of the main-loop lock, or 0 if only recommitted.
    pub promise: Time,
    /// Real time the batch takes effect: its first lock, or once some clock
    /// passes the promise by the wait margin, whichever is later.
    pub takes_effect: i64,
}

/// Locked batches by index.
pub fn locked_batches(trace: &Trace) -> BTreeMap<BatchIndex, LockedBatch> {
    let offsets = &trace.header.clock_offsets;
    let mut out: BTreeMap<BatchIndex, LockedBatch> = BTreeMap::new();
    for r in &trace.records {
        let Event::Lock {
            j,
            ops,
            promise,
            recommit,
            ..
        } = &r.event
        else {
            continue;
        };
        let b = out.entry(*j).or_insert_with(|| LockedBatch {
            j: *j,
            ops: ops.clone(),
            first_lock: r.real,
            promise: Time::ZERO,
            takes_effect: 0,
        });
        if !recommit {
            b.promise = *promise;
        }
    }
    // With skewed clocks a promise only expires once clocks pass it by ε.
    let eps = trace.header.scenario.protocol.wait_epsilon();
    for b in out.values_mut() {
        let expiry = if b.promise > Time::ZERO {
            b.promise + eps
        } else {
            b.promise
        };
        b.takes_effect = b.first_lock.max(earliest_real(offsets, expiry));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WitnessEntry {
    pub op: OpId,
    pub kind: OpKind,
    pub takes_effect: i64,
    /// Batch of an RMW; for a read, the batch it read after.
    pub batch: BatchIndex,
    pub is_read: bool,
}

/// A linearization reconstructed from the trace.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Witness {
    pub order: Vec<WitnessEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WitnessFailure {
    /// Batch `j` takes effect before a lower-indexed batch.
    BatchOrder {
        j: BatchIndex,
    },
    RmwNotInBatch(OpId),
    ReadWithoutDetail(OpId),
    UnlockedReadBatch {
        op: OpId,
        k_hat: BatchIndex,
    },
    WrongResponse {
        op: OpId,
        expected: Value,
        returned: Value,
    },
    RealTimeOrder {
        earlier: OpId,
        later: OpId,
    },
}

impl fmt::Display for WitnessFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WitnessFailure::BatchOrder { j } => {
                write!(f, "batch {j} takes effect before its predecessor")
            }
            WitnessFailure::RmwNotInBatch(op) => {
                write!(f, "completed RMW {op:?} is in no locked batch")
            }
            WitnessFailure::ReadWithoutDetail(op) => {
                write!(f, "read {op:?} lacks its read-path details")
            }
            WitnessFailure::UnlockedReadBatch { op, k_hat } => {
                write!(f, "read {op:?} used batch {k_hat}, which was never locked")
            }
            WitnessFailure::WrongResponse {
                op,
                expected,
                returned,
            } => {
                write!(
                    f,
                    "{op:?} returned {returned:?} but the witness order yields {expected:?}"
                )
            }
            WitnessFailure::RealTimeOrder { earlier, later } => {
                write!(f, "{later:?} completed before {earlier:?} was invoked, yet follows it in the witness")
            }
        }
    }
}

/// Orders batches by index with their ops in ID order, and interleaves
/// completed reads by the real time they take effect; then replays the order
/// and checks responses and real-time precedence.
pub fn check_witness(trace: &Trace, history: &History) -> Result<Witness, WitnessFailure> {
    let object = trace.header.scenario.object;
    let batches = locked_batches(trace);
    let mut prev: Option<&LockedBatch> = None;
    for b in batches.values() {
        if prev.is_some_and(|p| p.takes_effect > b.takes_effect) {
            return Err(WitnessFailure::BatchOrder { j: b.j });
        }
        prev = Some(b);
    }
    let mut entries = Vec::new();
    for b in batches.values() {
        for op in &b.ops {
            entries.push(WitnessEntry {
                op: op.id,
                kind: op.kind,
                takes_effect: b.takes_effect,
                batch: b.j,
                is_read: false,
            });
        }
    }
    let in_batch: HashSet<OpId> = entries.iter().map(|e| e.op).collect();
    for op in history.completed() {
        if !op.kind.is_read() {
            if !in_batch.contains(&op.id) {
                return Err(WitnessFailure::RmwNotInBatch(op.id));
            }
            continue;
        }
        let detail = op.response.as_ref().and_then(|r| r.detail.as_ref());
        let Some(ResponseDetail::Read {
            real_prime, k_hat, ..
        }) = detail
        else {
            return Err(WitnessFailure::ReadWithoutDetail(op.id));
        };
        let batch_effect = if *k_hat == 0 {
            0
        } else {
            batches
                .get(k_hat)
                .ok_or(WitnessFailure::UnlockedReadBatch {
                    op: op.id,
                    k_hat: *k_hat,
                })?
                .takes_effect
        };
        entries.push(WitnessEntry {
            op: op.id,
            kind: op.kind,
            takes_effect: (*real_prime).max(batch_effect),
            batch: *k_hat,
            is_read: true,
        });
    }
    // Among equal times batches keep index order. A read goes before the
    // first conflicting batch it did not observe, otherwise after them all.
    let slot = |e: &WitnessEntry| {
        if !e.is_read {
            return (e.batch, 1);
        }
        let missed = batches.range(e.batch + 1..).find(|(_, b)| {
            b.takes_effect == e.takes_effect
                && object.conflicts_with_any(e.kind, b.ops.iter().map(|o| &o.kind))
        });
        missed.map_or((BatchIndex::MAX, 1), |(&j, _)| (j, 0))
    };
    entries.sort_by_cached_key(|e| (e.takes_effect, slot(e), e.op));

    let by_id: BTreeMap<OpId, &HistoryOp> = history.ops.iter().map(|o| (o.id, o)).collect();
    let mut state = object.initial();
    let mut latest_invocation: Option<(u64, OpId)> = None;
    for e in &entries {
        let (next, value) = object
            .apply(state, e.kind)
            .expect("trace operations are supported");
        state = next;
        let Some(h) = by_id.get(&e.op) else { continue };
        if let Some(r) = &h.response {
            if r.value != value {
                return Err(WitnessFailure::WrongResponse {
                    op: e.op,
                    expected: value,
                    returned: r.value,
                });
            }
            if let Some((inv, earlier)) = latest_invocation {
                if r.at.seq < inv {
                    return Err(WitnessFailure::RealTimeOrder {
                        earlier,
                        later: e.op,
                    });
                }
            }
        }
        if latest_invocation.is_none_or(|(inv, _)| h.invoke.seq > inv) {
            latest_invocation = Some((h.invoke.seq, e.op));
        }
    }
    Ok(Witness { order: entries })
}

/// Outcome of the exhaustive search.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BruteVerdict {
    Linearizable {
        order: Vec<OpId>,
    },
    /// `minimal` is a sub-history that is already not linearizable and from
    /// which no single operation can be removed without restoring
    /// linearizability.
    NotLinearizable {
        minimal: Vec<OpId>,
    },
    TooLarge {
        completed: usize,
        cap: usize,
    },
}

impl BruteVerdict {
    pub fn is_linearizable(&self) -> Option<bool> {
        match self {
            BruteVerdict::Linearizable { .. } => Some(true),
            BruteVerdict::NotLinearizable { .. } => Some(false),
            BruteVerdict::TooLarge { .. } => None,
        }
    }
}

/// Exhaustive linearizability search (Wing and Gong, with memoization of
/// failed configurations). NoOps are ignored. Histories with more than `cap`
/// completed operations are not checked.
pub fn check_brute_force(history: &History, object: ObjectType, cap: usize) -> BruteVerdict {
    let ops: Vec<&HistoryOp> = history
        .ops
        .iter()
        .filter(|o| o.kind != OpKind::NoOp)
        .collect();
    let completed = ops.iter().filter(|o| o.is_complete()).count();
    if completed > cap || ops.len() > MAX_SEARCH_OPS {
        return BruteVerdict::TooLarge { completed, cap };
    }
    if let Some(order) = search(&ops, object) {
        return BruteVerdict::Linearizable {
            order: order.into_iter().map(|i| ops[i].id).collect(),
        };
    }
    let mut keep: Vec<&HistoryOp> = ops;
    let mut i = 0;
    while i < keep.len() {
        let mut trial = keep.clone();
        trial.remove(i);
        if search(&trial, object).is_none() {
            keep = trial;
        } else {
            i += 1;
        }
    }
    BruteVerdict::NotLinearizable {
        minimal: keep.into_iter().map(|o| o.id).collect(),
    }
}

fn search(ops: &[&HistoryOp], object: ObjectType) -> Option<Vec<usize>> {
    let must: u32 = ops
        .iter()
        .enumerate()
        .filter(|(_, o)| o.is_complete())
        .fold(0, |m, (i, _)| m | 1 << i);
    let mut failed = HashSet::new();
    let mut order = Vec::new();
    dfs(
        ops,
        object,
        must,
        0,
        object.initial(),
        &mut order,
        &mut failed,
    )
    .then_some(order)
}

fn dfs(
    ops: &[&HistoryOp],
    object: ObjectType,
    must: u32,
    done: u32,
    state: Value,
    order: &mut Vec<usize>,
    failed: &mut HashSet<(u32, Value)>,
) -> bool {
    if done & must == must {
        return true;
    }
    if failed.contains(&(done, state)) {
        return false;
    }
    for i in 0..ops.len() {
        if done & (1 << i) != 0 {
            continue;
        }
        // `i` may go next only if no other remaining op responded before it
        // was invoked.
        let inv = ops[i].invoke.seq;
        let blocked = ops.iter().enumerate().any(|(j, o)| {
            j != i && done & (1 << j) == 0 && o.response.as_ref().is_some_and(|r| r.at.seq < inv)
        });
        if blocked {
            continue;
        }
        let Ok((next, value)) = object.apply(state, ops[i].kind) else {
            continue;
        };
        if ops[i].response.as_ref().is_some_and(|r| r.value != value) {
            continue;
        }
        order.push(i);
        if dfs(ops, object, must, done | 1 << i, next, order, failed) {
            return true;
        }
        order.pop();
    }
    failed.insert((done, state));
    false
}

/// Combined verdict for a run.
#[derive(Clone, Debug)]
pub struct LinearizabilityReport {
    pub witness: Result<Witness, WitnessFailure>,
    pub brute_force: BruteVerdict,
}

impl LinearizabilityReport {
    /// The witness checker is authoritative; the exhaustive checker must not
    /// contradict it when it ran.
    pub fn passed(&self) -> bool {
        self.witness.is_ok() && self.brute_force.is_linearizable() != Some(false)
    }

    pub fn checkers_agree(&self) -> bool {
        self.brute_force
            .is_linearizable()
            .is_none_or(|b| b == self.witness.is_ok())
    }
}

pub fn check_linearizable(trace: &Trace, history: &History, cap: usize) -> LinearizabilityReport {
    LinearizabilityReport {
        witness: check_witness(trace, history),
        brute_force: check_brute_force(history, trace.header.scenario.object, cap),
    }
}

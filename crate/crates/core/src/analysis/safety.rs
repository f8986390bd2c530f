//! Post-run audit of the protocol's safety invariants and of the simulator's
//! own network contract.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::Serialize;

use crate::leader::first_overlap;
use crate::protocol::{Algorithm, BatchIndex, Lease, OpId, OpSet, ProcessId};
use crate::time::Time;
use crate::trace::{DropReason, Event, Record, ResponseDetail, Trace};

/// The first record that breaks an invariant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Counterexample {
    pub seq: Option<u64>,
    pub real: Option<i64>,
    pub what: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InvariantResult {
    pub name: &'static str,
    /// Number of individual checks performed.
    pub checked: u64,
    pub counterexample: Option<Counterexample>,
}

impl InvariantResult {
    pub fn passed(&self) -> bool {
        self.counterexample.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SafetyReport {
    pub invariants: Vec<InvariantResult>,
}

impl SafetyReport {
    pub fn passed(&self) -> bool {
        self.invariants.iter().all(InvariantResult::passed)
    }

    pub fn violations(&self) -> impl Iterator<Item = &InvariantResult> {
        self.invariants.iter().filter(|i| !i.passed())
    }

    pub fn get(&self, name: &str) -> Option<&InvariantResult> {
        self.invariants.iter().find(|i| i.name == name)
    }
}

impl fmt::Display for SafetyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in &self.invariants {
            match &i.counterexample {
                None => writeln!(f, "  pass  {:<26} ({} checks)", i.name, i.checked)?,
                Some(c) => {
                    let at = c.seq.map_or(String::new(), |s| {
                        format!(" at record {s} (real {})", c.real.unwrap_or(0))
                    });
                    writeln!(f, "  FAIL  {:<26}{at}: {}", i.name, c.what)?
                }
            }
        }
        Ok(())
    }
}

/// Accumulates one invariant's checks and keeps the first failure.
struct Audit {
    name: &'static str,
    checked: u64,
    counterexample: Option<Counterexample>,
}

impl Audit {
    fn new(name: &'static str) -> Audit {
        Audit {
            name,
            checked: 0,
            counterexample: None,
        }
    }

    fn check(&mut self, ok: bool, r: Option<&Record>, what: impl FnOnce() -> String) {
        self.checked += 1;
        if !ok && self.counterexample.is_none() {
            self.counterexample = Some(Counterexample {
                seq: r.map(|r| r.seq),
                real: r.map(|r| r.real),
                what: what(),
            });
        }
    }

    fn finish(self) -> InvariantResult {
        InvariantResult {
            name: self.name,
            checked: self.checked,
            counterexample: self.counterexample,
        }
    }
}

pub const INVARIANTS: [&str; 17] = [
    "batch_agreement",
    "batch_disjointness",
    "exactly_once",
    "majority_acceptance",
    "majority_persistence",
    "estimate_monotonicity",
    "lease_monotonicity",
    "lease_batch_known",
    "max_t_monotonicity",
    "leadership_disjointness",
    "promise_uniqueness",
    "promise_discipline",
    "state_agreement",
    "silent_after_crash",
    "delay_bounds",
    "fifo_links",
    "no_anomalies",
];

#[derive(Default)]
struct BatchBook {
    ops: BTreeMap<BatchIndex, OpSet>,
    op_batch: HashMap<OpId, BatchIndex>,
}

impl BatchBook {
    fn record(
        &mut self,
        j: BatchIndex,
        ops: &OpSet,
        r: &Record,
        agreement: &mut Audit,
        disjoint: &mut Audit,
    ) {
        if let Some(first) = self.ops.get(&j) {
            agreement.check(first == ops, Some(r), || {
                format!("batch {j} set to two different op sets")
            });
            return;
        }
        agreement.check(true, Some(r), String::new);
        self.ops.insert(j, ops.clone());
        for op in ops {
            let prev = self.op_batch.insert(op.id, j);
            disjoint.check(prev.is_none(), Some(r), || {
                format!(
                    "{:?} placed in batches {} and {j}",
                    op.id,
                    prev.unwrap_or(0)
                )
            });
        }
    }
}

/// Audits every invariant over the whole trace.
pub fn check_safety(trace: &Trace) -> SafetyReport {
    let scenario = &trace.header.scenario;
    let n = scenario.n;
    let majority = n / 2 + 1;
    let params = &scenario.protocol;
    let promise_eps = if params.algorithm == Algorithm::Cht {
        0
    } else {
        params.epsilon
    };

    let mut agreement = Audit::new("batch_agreement");
    let mut disjoint = Audit::new("batch_disjointness");
    let mut exactly_once = Audit::new("exactly_once");
    let mut acceptance = Audit::new("majority_acceptance");
    let mut persistence = Audit::new("majority_persistence");
    let mut est_mono = Audit::new("estimate_monotonicity");
    let mut lease_mono = Audit::new("lease_monotonicity");
    let mut lease_known = Audit::new("lease_batch_known");
    let mut maxt_mono = Audit::new("max_t_monotonicity");
    let mut grants = Audit::new("leadership_disjointness");
    let mut promise_unique = Audit::new("promise_uniqueness");
    let mut discipline = Audit::new("promise_discipline");
    let mut state_agree = Audit::new("state_agreement");
    let mut silent = Audit::new("silent_after_crash");
    let mut delays = Audit::new("delay_bounds");
    let mut fifo = Audit::new("fifo_links");
    let mut anomalies = Audit::new("no_anomalies");

    let crashed_at: BTreeMap<ProcessId, i64> =
        scenario.crashes.iter().map(|c| (c.process, c.at)).collect();
    let correct = |p: ProcessId| !crashed_at.contains_key(&p);

    let mut book = BatchBook::default();
    let mut local_promises: Vec<(BatchIndex, Time, u64, i64)> = Vec::new();
    let mut main_promise: BTreeMap<BatchIndex, Time> = BTreeMap::new();
    let mut states: BTreeMap<BatchIndex, crate::object::Value> = BTreeMap::new();
    // Per process.
    let mut local_batches: Vec<BTreeMap<BatchIndex, Time>> = vec![BTreeMap::new(); n];
    let mut executed: Vec<BatchIndex> = vec![0; n];
    let mut estimate_key: Vec<Option<(Time, BatchIndex)>> = vec![None; n];
    let mut lease: Vec<Option<Lease>> = vec![None; n];
    let mut max_t: Vec<Option<Time>> = vec![None; n];
    let mut crashed: BTreeSet<ProcessId> = BTreeSet::new();
    // Accepts of (ops, t, j), and processes holding Batch[j].
    let mut accepted: HashMap<(Time, BatchIndex), BTreeSet<ProcessId>> = HashMap::new();
    let mut accepted_ops: HashMap<(Time, BatchIndex), OpSet> = HashMap::new();
    let mut holders: BTreeMap<BatchIndex, BTreeSet<ProcessId>> = BTreeMap::new();
    // Network.
    let mut sends: HashMap<u64, (i64, ProcessId, ProcessId)> = HashMap::new();
    let mut fifo_last: HashMap<(ProcessId, ProcessId), u64> = HashMap::new();

    for r in &trace.records {
        if let (Some(p), false) = (r.process, matches!(r.event, Event::NeverInvoked { .. })) {
            silent.check(!crashed.contains(&p), Some(r), || {
                format!("{p} acts after crashing")
            });
        }
        let p = r.process;
        match &r.event {
            Event::Crash => {
                crashed.insert(p.expect("crash has a process"));
            }
            Event::Anomaly { what } => anomalies.check(false, Some(r), || what.clone()),
            Event::Accept { ops, ts, k } => {
                let p = p.expect("accept has a process");
                let key = (*ts, *k);
                let prev = estimate_key[p.0];
                est_mono.check(prev.is_none_or(|prev| prev <= key), Some(r), || {
                    format!("{p} estimate moved from {prev:?} back to {key:?}")
                });
                estimate_key[p.0] = Some(key);
                accepted.entry(key).or_default().insert(p);
                accepted_ops.entry(key).or_insert_with(|| ops.clone());
            }
            Event::BatchSet { j, batch } => {
                let p = p.expect("batch_set has a process");
                book.record(*j, &batch.ops, r, &mut agreement, &mut disjoint);
                local_batches[p.0].insert(*j, batch.promise);
                holders.entry(*j).or_default().insert(p);
                local_promises.push((*j, batch.promise, r.seq, r.real));
            }
            Event::Lock {
                t,
                j,
                ops,
                promise,
                recommit,
            } => {
                book.record(*j, ops, r, &mut agreement, &mut disjoint);
                let voters = accepted.get(&(*t, *j)).map_or(0, BTreeSet::len);
                let same_ops = accepted_ops.get(&(*t, *j)).is_some_and(|o| o == ops);
                acceptance.check(voters >= majority && same_ops, Some(r), || {
                    format!("batch {j} locked at leadership {t} with {voters} acceptances (majority {majority})")
                });
                if *j >= 1 && !recommit {
                    let prev = if *j == 1 {
                        n
                    } else {
                        holders.get(&(j - 1)).map_or(0, BTreeSet::len)
                    };
                    persistence.check(prev >= majority, Some(r), || {
                        format!(
                            "batch {j} locked while only {prev} processes hold batch {}",
                            j - 1
                        )
                    });
                }
                if !recommit {
                    match main_promise.get(j) {
                        Some(&g) => promise_unique.check(g == *promise, Some(r), || {
                            format!("batch {j} locked with promises {g} and {promise}")
                        }),
                        None => {
                            promise_unique.check(true, Some(r), String::new);
                            main_promise.insert(*j, *promise);
                        }
                    }
                }
            }
            Event::Execute { j, state } => {
                let p = p.expect("execute has a process");
                let expected = executed[p.0] + 1;
                exactly_once.check(*j == expected, Some(r), || {
                    format!("{p} executed batch {j} after batch {}", executed[p.0])
                });
                executed[p.0] = *j;
                match states.get(j) {
                    Some(s) => state_agree.check(s == state, Some(r), || {
                        format!(
                            "{p} reached {state:?} after batch {j}; another process reached {s:?}"
                        )
                    }),
                    None => {
                        state_agree.check(true, Some(r), String::new);
                        states.insert(*j, *state);
                    }
                }
            }
            Event::LeaseSet { lease: l } => {
                let p = p.expect("lease_set has a process");
                let prev = lease[p.0];
                lease_mono.check(
                    prev.is_none_or(|prev| prev.batch <= l.batch),
                    Some(r),
                    || format!("{p} lease batch moved from {prev:?} back to {l:?}"),
                );
                lease[p.0] = Some(*l);
                let missing = (1..=l.batch).find(|j| !local_batches[p.0].contains_key(j));
                lease_known.check(missing.is_none(), Some(r), || {
                    format!(
                        "{p} holds lease on batch {} without batch {}",
                        l.batch,
                        missing.unwrap_or(0)
                    )
                });
            }
            Event::MaxT { value } => {
                let p = p.expect("max_t has a process");
                let prev = max_t[p.0];
                maxt_mono.check(prev.is_none_or(|prev| prev <= *value), Some(r), || {
                    format!("{p} maxT moved from {prev:?} back to {value}")
                });
                max_t[p.0] = Some(*value);
            }
            Event::Respond { op, detail, .. } => {
                let p = p.expect("respond has a process");
                let local = r.local.expect("process records carry a local time");
                let visible = match detail {
                    ResponseDetail::Rmw { .. } => book.op_batch.get(op).copied(),
                    ResponseDetail::Read { k_hat, .. } => Some(*k_hat),
                };
                let skip =
                    matches!(detail, ResponseDetail::Read { .. }) && params.skip_read_promise_wait;
                if let Some(j) = visible.filter(|&j| j >= 1 && !skip) {
                    let promise = local_batches[p.0]
                        .get(&j)
                        .copied()
                        .unwrap_or(Time::INFINITY);
                    discipline.check(local >= promise + promise_eps, Some(r), || {
                        format!(
                            "{p} exposed batch {j} at local {local} before promise {promise} + ε"
                        )
                    });
                }
                if let ResponseDetail::Rmw { .. } = detail {
                    exactly_once.check(book.op_batch.contains_key(op), Some(r), || {
                        format!("{op:?} responded but is in no batch")
                    });
                }
            }
            Event::Send {
                to,
                seq,
                deliver_at,
                dropped,
                ..
            } => {
                let from = p.expect("send has a process");
                sends.insert(*seq, (r.real, from, *to));
                let post_gst = r.real >= scenario.timing.gst;
                if post_gst && correct(from) && correct(*to) {
                    delays.check(dropped.is_none() && deliver_at.is_some(), Some(r), || {
                        format!("message {seq} {from}->{to} dropped after GST")
                    });
                }
            }
            Event::Drop { seq, reason, .. } => {
                if let Some(&(sent, from, to)) = sends.get(seq) {
                    let ok = sent < scenario.timing.gst || *reason == DropReason::ReceiverCrashed;
                    delays.check(ok, Some(r), || {
                        format!("message {seq} {from}->{to} dropped after GST")
                    });
                }
            }
            Event::Deliver { from, seq, .. } => {
                let to = p.expect("deliver has a process");
                let Some(&(sent, _, _)) = sends.get(seq) else {
                    delays.check(false, Some(r), || {
                        format!("delivery of unknown message {seq}")
                    });
                    continue;
                };
                let latency = r.real - sent;
                if sent >= scenario.timing.gst && correct(*from) && correct(to) {
                    let delta = scenario.timing.delta;
                    delays.check(latency <= delta, Some(r), || {
                        format!("message {seq} {from}->{to} took {latency} > δ = {delta}")
                    });
                    let nice = scenario
                        .nice_periods
                        .iter()
                        .any(|np| np.contains(sent) && sent >= np.start + delta);
                    if nice {
                        let ds = scenario.timing.delta_star();
                        delays.check(latency <= ds, Some(r), || {
                            format!("message {seq} {from}->{to} took {latency} > δ* = {ds} in a nice period")
                        });
                    }
                }
                if sent >= scenario.timing.fifo_after() {
                    let last = fifo_last.insert((*from, to), *seq);
                    fifo.check(last.is_none_or(|l| l < *seq), Some(r), || {
                        format!(
                            "message {seq} {from}->{to} overtook message {}",
                            last.unwrap_or(0)
                        )
                    });
                }
            }
            _ => {}
        }
    }

    // A process never holds a batch with a promise above the promise the
    // batch was locked with in the main loop (0 if it was only recommitted).
    for (j, promise, seq, real) in local_promises {
        let g = main_promise.get(&j).copied().unwrap_or(Time::ZERO);
        promise_unique.checked += 1;
        if promise > g && promise_unique.counterexample.is_none() {
            promise_unique.counterexample = Some(Counterexample {
                seq: Some(seq),
                real: Some(real),
                what: format!("batch {j} held with promise {promise} above its locked promise {g}"),
            });
        }
    }

    let overlap = first_overlap(&trace.footer.grants);
    grants.check(overlap.is_none(), None, || {
        let (a, b) = overlap.expect("overlap");
        format!(
            "{} granted [{}, {}] and {} granted [{}, {}]",
            a.process, a.from, a.to, b.process, b.from, b.to
        )
    });

    SafetyReport {
        invariants: vec![
            agreement.finish(),
            disjoint.finish(),
            exactly_once.finish(),
            acceptance.finish(),
            persistence.finish(),
            est_mono.finish(),
            lease_mono.finish(),
            lease_known.finish(),
            maxt_mono.finish(),
            grants.finish(),
            promise_unique.finish(),
            discipline.finish(),
            state_agree.finish(),
            silent.finish(),
            delays.finish(),
            fifo.finish(),
            anomalies.finish(),
        ],
    }
}

/// Correct processes' requests that never completed.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LivenessReport {
    pub requested: u64,
    pub completed: u64,
    /// `(process, requested, completed)` for each correct process that fell short.
    pub stuck: Vec<(ProcessId, u64, u64)>,
}

impl LivenessReport {
    pub fn passed(&self) -> bool {
        self.stuck.is_empty()
    }
}

/// Every request to a correct process must have completed by the horizon.
pub fn check_liveness(trace: &Trace) -> LivenessReport {
    let scenario = &trace.header.scenario;
    let mut requested = vec![0u64; scenario.n];
    let mut completed = vec![0u64; scenario.n];
    for r in &trace.records {
        match (&r.event, r.process) {
            (Event::Requested { .. }, Some(p)) => requested[p.0] += 1,
            (Event::Respond { origin, .. }, Some(p)) if *origin != crate::trace::Origin::Leader => {
                completed[p.0] += 1
            }
            _ => {}
        }
    }
    let mut report = LivenessReport::default();
    for p in scenario.correct() {
        report.requested += requested[p.0];
        report.completed += completed[p.0];
        if completed[p.0] < requested[p.0] {
            report.stuck.push((p, requested[p.0], completed[p.0]));
        }
    }
    report
}

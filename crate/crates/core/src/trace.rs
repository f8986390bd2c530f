//! Timestamped event log of a simulation run and its JSON-lines file format.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::object::{OpKind, Value};
use crate::protocol::{
    Batch, BatchIndex, Lease, Message, MessageKind, OpId, OpSet, Operation, ProcessId,
};
use crate::sim::Scenario;
use crate::time::Time;

pub const TRACE_SCHEMA: &str = "promise-lease/trace/1";

/// Where an invocation came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    /// Entry of the scenario's fixed workload list.
    Workload(usize),
    /// Closed-loop generator.
    Generator(usize),
    /// NoOp issued by a new leader.
    Leader,
}

/// The blocking reason attached to a wait.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaitCause {
    NoValidLease,
    ConflictingPendingBatch,
    Promise,
    AwaitingCommit,
    Processing,
    LeaderInit,
    Estimates,
    FillGaps,
    Acks,
    LeaseHolderAcks,
    LeaseExpiry,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Thread {
    Client,
    Control,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    LostLeadership,
    /// A reply carried an estimate from a leadership at least as recent.
    Superseded,
    /// A higher leadership timestamp was acknowledged (`t < maxT`).
    Preempted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// Lost by the pre-GST link model.
    Lost,
    /// Dropped by a link script.
    Scripted,
    /// Receiver crashed before delivery.
    ReceiverCrashed,
}

/// Per-response details used by the checkers.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "path", rename_all = "snake_case")]
pub enum ResponseDetail {
    Rmw {
        takes_effect: Time,
    },
    Read {
        /// Local clock at the last lease check.
        t_prime: Time,
        /// Real time of the last lease check.
        real_prime: i64,
        lease: Lease,
        k_hat: BatchIndex,
        /// Whether `t' < lease.start`.
        before_lease_start: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Event {
    /// Message handed to the network. `deliver_at` is `None` when dropped.
    Send {
        to: ProcessId,
        seq: u64,
        msg_kind: MessageKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        message: Option<Message>,
        deliver_at: Option<i64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dropped: Option<DropReason>,
    },
    Deliver {
        from: ProcessId,
        seq: u64,
        msg_kind: MessageKind,
    },
    Drop {
        from: ProcessId,
        seq: u64,
        msg_kind: MessageKind,
        reason: DropReason,
    },
    Crash,
    /// A workload invocation reached a live process.
    Requested {
        origin: Origin,
        op_kind: OpKind,
    },
    /// A workload invocation targeted a crashed process.
    NeverInvoked {
        origin: Origin,
        op_kind: OpKind,
    },
    Invoke {
        op: Operation,
        origin: Origin,
    },
    Respond {
        op: OpId,
        op_kind: OpKind,
        origin: Origin,
        value: Value,
        detail: ResponseDetail,
    },
    Accept {
        ops: OpSet,
        ts: Time,
        k: BatchIndex,
    },
    BatchSet {
        j: BatchIndex,
        batch: Batch,
    },
    DoOpsStart {
        t: Time,
        j: BatchIndex,
        ops: OpSet,
        promise: Time,
        status: bool,
    },
    StatusRound {
        t: Time,
        j: BatchIndex,
        promise: Time,
        round: u32,
    },
    Lock {
        t: Time,
        j: BatchIndex,
        ops: OpSet,
        promise: Time,
        recommit: bool,
    },
    Execute {
        j: BatchIndex,
        state: Value,
    },
    LeaseSet {
        lease: Lease,
    },
    MaxT {
        value: Time,
    },
    LeaderWorkStart {
        t: Time,
    },
    LeaderWorkEnd {
        t: Time,
        reason: EndReason,
    },
    WaitStart {
        thread: Thread,
        cause: WaitCause,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        op: Option<OpId>,
    },
    WaitEnd {
        thread: Thread,
        cause: WaitCause,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        op: Option<OpId>,
    },
    /// A state the pseudocode assumes impossible was reached.
    Anomaly {
        what: String,
    },
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::Send { .. } => "send",
            Event::Deliver { .. } => "deliver",
            Event::Drop { .. } => "drop",
            Event::Crash => "crash",
            Event::Requested { .. } => "requested",
            Event::NeverInvoked { .. } => "never_invoked",
            Event::Invoke { .. } => "invoke",
            Event::Respond { .. } => "respond",
            Event::Accept { .. } => "accept",
            Event::BatchSet { .. } => "batch_set",
            Event::DoOpsStart { .. } => "do_ops_start",
            Event::StatusRound { .. } => "status_round",
            Event::Lock { .. } => "lock",
            Event::Execute { .. } => "execute",
            Event::LeaseSet { .. } => "lease_set",
            Event::MaxT { .. } => "max_t",
            Event::LeaderWorkStart { .. } => "leader_work_start",
            Event::LeaderWorkEnd { .. } => "leader_work_end",
            Event::WaitStart { .. } => "wait_start",
            Event::WaitEnd { .. } => "wait_end",
            Event::Anomaly { .. } => "anomaly",
        }
    }
}

/// One trace line. Records are totally ordered by `seq`, which is consistent
/// with `real`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub seq: u64,
    pub real: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process: Option<ProcessId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local: Option<Time>,
    #[serde(flatten)]
    pub event: Event,
}

/// Grant ledger entry: `process` received `true` from AmLeader over `[from, to]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GrantInterval {
    pub process: ProcessId,
    pub from: Time,
    pub to: Time,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema: String,
    pub scenario: Scenario,
    /// Normalized clock offsets: `local = real + offset`.
    pub clock_offsets: Vec<i64>,
    /// Provider stabilization point (local time), if known.
    pub leader_stable_from: Option<Time>,
}

/// Final state of the run that is not derivable from the record stream.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceFooter {
    /// Union of AmLeader `true` intervals per process, as merged by the provider.
    pub grants: Vec<GrantInterval>,
    pub heartbeats_sent: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub header: TraceHeader,
    pub records: Vec<Record>,
    pub footer: TraceFooter,
}

/// Counters derived from a trace.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub records: usize,
    /// Protocol messages handed to the network (self-addressed requests excluded).
    pub messages_sent: u64,
    pub messages_by_kind: BTreeMap<MessageKind, u64>,
    pub messages_dropped: u64,
    pub heartbeats_sent: u64,
    pub ops_invoked: u64,
    pub ops_completed: u64,
    pub reads_completed: u64,
    pub rmws_completed: u64,
    pub batches_locked: u64,
    pub crashes: u64,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("unsupported trace schema {0:?}")]
    Schema(String),
    #[error("trace file is empty")]
    Empty,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TrailerLine {
    Footer(TraceFooter),
}

impl Trace {
    pub fn summary(&self) -> TraceSummary {
        let mut s = TraceSummary {
            records: self.records.len(),
            ..Default::default()
        };
        s.heartbeats_sent = self.footer.heartbeats_sent;
        for r in &self.records {
            match &r.event {
                Event::Send {
                    msg_kind, dropped, ..
                } => {
                    s.messages_sent += 1;
                    *s.messages_by_kind.entry(*msg_kind).or_default() += 1;
                    if dropped.is_some() {
                        s.messages_dropped += 1;
                    }
                }
                Event::Drop { .. } => s.messages_dropped += 1,
                Event::Invoke { .. } => s.ops_invoked += 1,
                Event::Respond { detail, .. } => {
                    s.ops_completed += 1;
                    match detail {
                        ResponseDetail::Read { .. } => s.reads_completed += 1,
                        ResponseDetail::Rmw { .. } => s.rmws_completed += 1,
                    }
                }
                Event::Lock { .. } => s.batches_locked += 1,
                Event::Crash => s.crashes += 1,
                _ => {}
            }
        }
        s
    }

    /// Record lines only, serialized exactly as in the trace file.
    pub fn record_lines(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("records serialize"))
            .collect()
    }

    pub fn write_jsonl<W: Write>(&self, w: W) -> Result<(), TraceError> {
        let mut w = BufWriter::new(w);
        serde_json::to_writer(&mut w, &self.header).map_err(std::io::Error::from)?;
        writeln!(w)?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
            writeln!(w)?;
        }
        serde_json::to_writer(&mut w, &TrailerLine::Footer(self.footer.clone()))
            .map_err(std::io::Error::from)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Trace, TraceError> {
        let mut lines = r
            .lines()
            .enumerate()
            .filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()));
        let (_, first) = lines.next().ok_or(TraceError::Empty)?;
        let header: TraceHeader = serde_json::from_str(&first?)
            .map_err(|source| TraceError::Parse { line: 1, source })?;
        if header.schema != TRACE_SCHEMA {
            return Err(TraceError::Schema(header.schema));
        }
        let mut records = Vec::new();
        let mut footer = TraceFooter::default();
        for (i, line) in lines {
            let line = line?;
            if line.starts_with("{\"footer\"") {
                let TrailerLine::Footer(f) =
                    serde_json::from_str(&line).map_err(|source| TraceError::Parse {
                        line: i + 1,
                        source,
                    })?;
                footer = f;
                continue;
            }
            records.push(
                serde_json::from_str(&line).map_err(|source| TraceError::Parse {
                    line: i + 1,
                    source,
                })?,
            );
        }
        Ok(Trace {
            header,
            records,
            footer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TraceError> {
        self.write_jsonl(File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Trace, TraceError> {
        Trace::read_jsonl(BufReader::new(File::open(path)?))
    }
}

use std::collections::BTreeMap;

use thiserror::Error;

use crate::object::{OpKind, Value};
use crate::protocol::{OpId, ProcessId};
use crate::time::Time;
use crate::trace::{Event, Origin, ResponseDetail, Trace};

/// A point in a run: record sequence number, real time and the acting
/// process's clock.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Instant {
    pub seq: u64,
    pub real: i64,
    pub local: Time,
}

impl Instant {
    /// An instant carrying only an ordering position.
    pub fn at(seq: u64) -> Instant {
        Instant {
            seq,
            real: seq as i64,
            local: Time::new(seq as i64),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Response {
    pub at: Instant,
    pub value: Value,
    pub detail: Option<ResponseDetail>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HistoryOp {
    pub id: OpId,
    pub process: ProcessId,
    pub kind: OpKind,
    pub origin: Origin,
    pub invoke: Instant,
    pub response: Option<Response>,
}

impl HistoryOp {
    /// A completed operation with abstract invocation and response positions.
    pub fn completed(
        process: usize,
        counter: u64,
        kind: OpKind,
        invoke: u64,
        respond: u64,
        value: Value,
    ) -> HistoryOp {
        HistoryOp {
            id: OpId {
                issuer: ProcessId(process),
                counter,
            },
            process: ProcessId(process),
            kind,
            origin: Origin::Workload(0),
            invoke: Instant::at(invoke),
            response: Some(Response {
                at: Instant::at(respond),
                value,
                detail: None,
            }),
        }
    }

    /// An operation that never responded.
    pub fn pending(process: usize, counter: u64, kind: OpKind, invoke: u64) -> HistoryOp {
        HistoryOp {
            id: OpId {
                issuer: ProcessId(process),
                counter,
            },
            process: ProcessId(process),
            kind,
            origin: Origin::Workload(0),
            invoke: Instant::at(invoke),
            response: None,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.response.is_some()
    }

    /// Local-clock duration from invocation to response on the issuer.
    pub fn blocking(&self) -> Option<i64> {
        let r = self.response.as_ref()?;
        Some(r.at.local.finite() - self.invoke.local.finite())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HistoryError {
    #[error("record {seq}: response to {op:?} without an invocation")]
    ResponseWithoutInvocation { seq: u64, op: OpId },
    #[error("record {seq}: second response to {op:?}")]
    DuplicateResponse { seq: u64, op: OpId },
    #[error("record {seq}: operation {op:?} invoked twice")]
    DuplicateInvocation { seq: u64, op: OpId },
    #[error("record {seq}: response to {op:?} precedes its invocation")]
    ResponseBeforeInvocation { seq: u64, op: OpId },
}

/// Invocations and responses of a run, in invocation order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct History {
    pub ops: Vec<HistoryOp>,
}

impl History {
    pub fn new(ops: Vec<HistoryOp>) -> Result<History, HistoryError> {
        let mut seen = BTreeMap::new();
        for op in &ops {
            if seen.insert(op.id, ()).is_some() {
                return Err(HistoryError::DuplicateInvocation {
                    seq: op.invoke.seq,
                    op: op.id,
                });
            }
            if let Some(r) = &op.response {
                if r.at.seq < op.invoke.seq {
                    return Err(HistoryError::ResponseBeforeInvocation {
                        seq: r.at.seq,
                        op: op.id,
                    });
                }
            }
        }
        Ok(History { ops })
    }

    pub fn from_trace(trace: &Trace) -> Result<History, HistoryError> {
        let mut ops: Vec<HistoryOp> = Vec::new();
        let mut index: BTreeMap<OpId, usize> = BTreeMap::new();
        for r in &trace.records {
            let (Some(process), Some(local)) = (r.process, r.local) else {
                continue;
            };
            let at = Instant {
                seq: r.seq,
                real: r.real,
                local,
            };
            match &r.event {
                Event::Invoke { op, origin } => {
                    if index.insert(op.id, ops.len()).is_some() {
                        return Err(HistoryError::DuplicateInvocation {
                            seq: r.seq,
                            op: op.id,
                        });
                    }
                    ops.push(HistoryOp {
                        id: op.id,
                        process,
                        kind: op.kind,
                        origin: *origin,
                        invoke: at,
                        response: None,
                    });
                }
                Event::Respond {
                    op, value, detail, ..
                } => {
                    let &i = index
                        .get(op)
                        .ok_or(HistoryError::ResponseWithoutInvocation {
                            seq: r.seq,
                            op: *op,
                        })?;
                    if ops[i].response.is_some() {
                        return Err(HistoryError::DuplicateResponse {
                            seq: r.seq,
                            op: *op,
                        });
                    }
                    ops[i].response = Some(Response {
                        at,
                        value: *value,
                        detail: Some(detail.clone()),
                    });
                }
                _ => {}
            }
        }
        Ok(History { ops })
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn completed(&self) -> impl Iterator<Item = &HistoryOp> {
        self.ops.iter().filter(|o| o.is_complete())
    }

    pub fn get(&self, id: OpId) -> Option<&HistoryOp> {
        self.ops.iter().find(|o| o.id == id)
    }

    /// The history without leader-issued NoOps, which neither change state
    /// nor return information.
    pub fn without_noops(&self) -> History {
        History {
            ops: self
                .ops
                .iter()
                .filter(|o| o.kind != OpKind::NoOp)
                .cloned()
                .collect(),
        }
    }
}

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::types::{Batch, BatchIndex, Lease, OpSet, Operation, ProcessId};
use crate::time::Time;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    OpRequest {
        op: Operation,
    },
    EstRequest {
        t: Time,
    },
    EstReply {
        t: Time,
        ops: OpSet,
        ts: Time,
        k: BatchIndex,
        prev: Batch,
    },
    Prepare {
        ops: OpSet,
        promise: Time,
        t: Time,
        j: BatchIndex,
        prev: Batch,
    },
    Status {
        ops: OpSet,
        promise: Time,
        t: Time,
        j: BatchIndex,
        prev: Batch,
    },
    PAck {
        t: Time,
        j: BatchIndex,
    },
    CommitLease {
        batch: Batch,
        j: BatchIndex,
        lease: Lease,
        holders: BTreeSet<ProcessId>,
    },
    RequestLease,
    MyGaps {
        gaps: BTreeSet<BatchIndex>,
    },
    MyBatch {
        j: BatchIndex,
        batch: Batch,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    OpRequest,
    EstRequest,
    EstReply,
    Prepare,
    Status,
    PAck,
    CommitLease,
    RequestLease,
    MyGaps,
    MyBatch,
    /// Leader-election traffic; not a protocol message.
    Heartbeat,
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::OpRequest { .. } => MessageKind::OpRequest,
            Message::EstRequest { .. } => MessageKind::EstRequest,
            Message::EstReply { .. } => MessageKind::EstReply,
            Message::Prepare { .. } => MessageKind::Prepare,
            Message::Status { .. } => MessageKind::Status,
            Message::PAck { .. } => MessageKind::PAck,
            Message::CommitLease { .. } => MessageKind::CommitLease,
            Message::RequestLease => MessageKind::RequestLease,
            Message::MyGaps { .. } => MessageKind::MyGaps,
            Message::MyBatch { .. } => MessageKind::MyBatch,
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_string(self).expect("unit variant serializes");
        f.write_str(s.trim_matches('"'))
    }
}

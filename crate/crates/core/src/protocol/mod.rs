//! The per-process replication protocol: batches agreed by majority quorums,
//! read leases, promises and status rounds.

mod message;
mod process;
mod types;

pub use message::{Message, MessageKind};
pub use process::{Process, StepContext};
pub use types::{
    lease_compare, op_order, Algorithm, Batch, BatchIndex, Estimate, Lease, OpId, OpSet, Operation,
    ParamError, ProcessId, ProtocolParams,
};

//! Linearizable replicated objects with leader leases and promise times.
//!
//! The crate contains the protocol state machine ([`protocol`]), the
//! leader-election primitives it relies on ([`leader`]), a deterministic
//! simulator of partially synchronous networks ([`sim`]), and post-run
//! checkers for safety, linearizability and blocking-time bounds
//! ([`analysis`]).

pub mod analysis;
pub mod cli;
pub mod leader;
pub mod object;
pub mod protocol;
pub mod sim;
pub mod time;
pub mod trace;

pub use object::{ObjectType, OpKind, Value};
pub use protocol::{Algorithm, ProcessId, ProtocolParams};
pub use sim::{run, Scenario};
pub use time::Time;
pub use trace::Trace;

//! Replicated object types: states, operations, transitions and the read/RMW
//! conflict relation.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// An object state or an operation response.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Value {
    Int(i64),
    Bool(bool),
    Pair(i64, i64),
    Ack,
}

/// Operation kinds across all built-in object types.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum OpKind {
    Read,
    ReadKey { key: u8 },
    Write { value: i64 },
    WriteKey { key: u8, value: i64 },
    FetchInc,
    Cas { expect: i64, new: i64 },
    NoOp,
}

impl OpKind {
    /// Read kinds never change the state of any object that accepts them.
    pub fn is_read(self) -> bool {
        matches!(self, OpKind::Read | OpKind::ReadKey { .. })
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpKind::Read => write!(f, "read"),
            OpKind::ReadKey { key } => write!(f, "read[{key}]"),
            OpKind::Write { value } => write!(f, "write({value})"),
            OpKind::WriteKey { key, value } => write!(f, "write[{key}]({value})"),
            OpKind::FetchInc => write!(f, "fetch_inc"),
            OpKind::Cas { expect, new } => write!(f, "cas({expect},{new})"),
            OpKind::NoOp => write!(f, "noop"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ObjectError {
    #[error("operation {op} is not supported by object type {object}")]
    UnknownOp { object: ObjectType, op: OpKind },
    #[error("state {state:?} is not a state of object type {object}")]
    BadState { object: ObjectType, state: Value },
    #[error("{0} is not a read")]
    NotARead(OpKind),
    #[error("{0} is not a read-modify-write")]
    NotAnRmw(OpKind),
    #[error("unknown object type {0:?}")]
    UnknownType(String),
}

/// Built-in object types, registered by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectType {
    /// Integer register: `read`, `write`.
    Register,
    /// Counter: `read`, `fetch_inc`.
    Counter,
    /// Compare-and-swap cell: `read`, `write`, `cas`.
    CasCell,
    /// Two independent integer registers addressed by key 0 or 1.
    KeyPair,
}

impl ObjectType {
    pub const ALL: [ObjectType; 4] = [
        ObjectType::Register,
        ObjectType::Counter,
        ObjectType::CasCell,
        ObjectType::KeyPair,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectType::Register => "register",
            ObjectType::Counter => "counter",
            ObjectType::CasCell => "cas_cell",
            ObjectType::KeyPair => "key_pair",
        }
    }

    pub fn initial(self) -> Value {
        match self {
            ObjectType::KeyPair => Value::Pair(0, 0),
            _ => Value::Int(0),
        }
    }

    /// Whether `op` belongs to this type.
    pub fn supports(self, op: OpKind) -> bool {
        match (self, op) {
            (_, OpKind::NoOp) => true,
            (ObjectType::Register, OpKind::Read | OpKind::Write { .. }) => true,
            (ObjectType::Counter, OpKind::Read | OpKind::FetchInc) => true,
            (ObjectType::CasCell, OpKind::Read | OpKind::Write { .. } | OpKind::Cas { .. }) => true,
            (ObjectType::KeyPair, OpKind::ReadKey { key } | OpKind::WriteKey { key, .. }) => {
                key < 2
            }
            _ => false,
        }
    }

    /// The transition function: `(state, op) -> (state', response)`.
    pub fn apply(self, state: Value, op: OpKind) -> Result<(Value, Value), ObjectError> {
        if !self.supports(op) {
            return Err(ObjectError::UnknownOp { object: self, op });
        }
        let bad = || ObjectError::BadState {
            object: self,
            state,
        };
        match self {
            ObjectType::KeyPair => {
                let Value::Pair(a, b) = state else {
                    return Err(bad());
                };
                Ok(match op {
                    OpKind::ReadKey { key: 0 } => (state, Value::Int(a)),
                    OpKind::ReadKey { .. } => (state, Value::Int(b)),
                    OpKind::WriteKey { key: 0, value } => (Value::Pair(value, b), Value::Ack),
                    OpKind::WriteKey { value, .. } => (Value::Pair(a, value), Value::Ack),
                    _ => (state, Value::Ack),
                })
            }
            _ => {
                let Value::Int(v) = state else {
                    return Err(bad());
                };
                Ok(match op {
                    OpKind::Read => (state, Value::Int(v)),
                    OpKind::Write { value } => (Value::Int(value), Value::Ack),
                    OpKind::FetchInc => (Value::Int(v + 1), Value::Int(v)),
                    OpKind::Cas { expect, new } if expect == v => {
                        (Value::Int(new), Value::Bool(true))
                    }
                    OpKind::Cas { .. } => (state, Value::Bool(false)),
                    _ => (state, Value::Ack),
                })
            }
        }
    }

    /// Declared conflict relation between a read kind and an RMW kind.
    pub fn conflicts(self, read: OpKind, rmw: OpKind) -> Result<bool, ObjectError> {
        for op in [read, rmw] {
            if !self.supports(op) {
                return Err(ObjectError::UnknownOp { object: self, op });
            }
        }
        if !read.is_read() {
            return Err(ObjectError::NotARead(read));
        }
        if rmw.is_read() {
            return Err(ObjectError::NotAnRmw(rmw));
        }
        Ok(match rmw {
            OpKind::NoOp => false,
            OpKind::Cas { expect, new } => expect != new,
            OpKind::WriteKey { key, .. } => read == OpKind::ReadKey { key },
            _ => true,
        })
    }

    /// Whether a read conflicts with at least one operation of a set.
    pub fn conflicts_with_any<'a>(
        self,
        read: OpKind,
        rmws: impl IntoIterator<Item = &'a OpKind>,
    ) -> bool {
        rmws.into_iter()
            .any(|&w| self.conflicts(read, w).unwrap_or(false))
    }

    /// A finite operation alphabet with write values in `0..=2`.
    pub fn op_alphabet(self) -> Vec<OpKind> {
        let mut ops = vec![OpKind::NoOp];
        match self {
            ObjectType::Register => {
                ops.push(OpKind::Read);
                ops.extend((0..=2).map(|value| OpKind::Write { value }));
            }
            ObjectType::Counter => ops.extend([OpKind::Read, OpKind::FetchInc]),
            ObjectType::CasCell => {
                ops.push(OpKind::Read);
                ops.extend((0..=2).map(|value| OpKind::Write { value }));
                for expect in 0..=2 {
                    ops.extend((0..=2).map(|new| OpKind::Cas { expect, new }));
                }
            }
            ObjectType::KeyPair => {
                for key in 0..2 {
                    ops.push(OpKind::ReadKey { key });
                    ops.extend((0..=2).map(|value| OpKind::WriteKey { key, value }));
                }
            }
        }
        ops
    }

    /// States reachable from the initial state within `depth` operations of the
    /// finite alphabet.
    pub fn reachable_states(self, depth: usize) -> BTreeSet<Value> {
        let alphabet = self.op_alphabet();
        let mut seen = BTreeSet::from([self.initial()]);
        let mut frontier = vec![self.initial()];
        for _ in 0..depth {
            let mut next = Vec::new();
            for &s in &frontier {
                for &op in &alphabet {
                    let (s2, _) = self.apply(s, op).expect("alphabet ops are supported");
                    if seen.insert(s2) {
                        next.push(s2);
                    }
                }
            }
            frontier = next;
        }
        seen
    }
}

/// Conflict by definition: some state in `states` makes the read's response
/// differ before and after the RMW.
pub fn conflicts_by_enumeration(
    object: ObjectType,
    read: OpKind,
    rmw: OpKind,
    states: &BTreeSet<Value>,
) -> Result<bool, ObjectError> {
    for &s in states {
        let (_, before) = object.apply(s, read)?;
        let (s2, _) = object.apply(s, rmw)?;
        let (_, after) = object.apply(s2, read)?;
        if before != after {
            return Ok(true);
        }
    }
    Ok(false)
}

impl fmt::Display for ObjectType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectType {
    type Err = ObjectError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ObjectType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| ObjectError::UnknownType(s.to_string()))
    }
}

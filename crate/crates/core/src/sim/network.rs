use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::scenario::Scenario;
use crate::protocol::{Message, MessageKind, ProcessId};
use crate::trace::DropReason;

/// A message or a leader-election heartbeat.
#[derive(Clone, Debug)]
pub enum Payload {
    Protocol(Message),
    Heartbeat,
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::Protocol(m) => m.kind(),
            Payload::Heartbeat => MessageKind::Heartbeat,
        }
    }
}

#[derive(Clone, Debug)]
pub struct InFlight {
    pub from: ProcessId,
    pub to: ProcessId,
    pub seq: u64,
    pub payload: Payload,
}

/// Links between processes. Delivery order is `(deliver_at, seq)`.
pub struct Network {
    rng: ChaCha8Rng,
    in_flight: BTreeMap<(i64, u64), InFlight>,
    fifo_tail: BTreeMap<(ProcessId, ProcessId), i64>,
    next_seq: u64,
}

impl Network {
    pub fn new(rng: ChaCha8Rng) -> Network {
        Network {
            rng,
            in_flight: BTreeMap::new(),
            fifo_tail: BTreeMap::new(),
            next_seq: 0,
        }
    }

    /// Schedules a message sent at real time `now`. Returns its sequence number
    /// and either its delivery time or the reason it was dropped.
    pub fn send(
        &mut self,
        scenario: &Scenario,
        now: i64,
        from: ProcessId,
        to: ProcessId,
        payload: Payload,
    ) -> (u64, Result<i64, DropReason>) {
        let seq = self.next_seq;
        self.next_seq += 1;
        let kind = payload.kind();
        let timing = &scenario.timing;
        let delay = match scenario
            .links
            .iter()
            .find(|r| r.matches(from, to, kind, now))
        {
            Some(rule) if rule.drop => return (seq, Err(DropReason::Scripted)),
            Some(rule) => rule.delay.expect("validated rule has a delay"),
            None if now < timing.gst => {
                if self.rng.gen_bool(scenario.pre_gst.loss) {
                    return (seq, Err(DropReason::Lost));
                }
                let max = scenario.pre_gst.max_delay.unwrap_or(10 * timing.delta);
                self.rng.gen_range(1..=max)
            }
            None => {
                let bound = if scenario.in_nice_period(now) {
                    timing.delta_star()
                } else {
                    timing.delta
                };
                self.rng.gen_range(1..=bound)
            }
        };
        let mut at = now + delay;
        if now >= timing.fifo_after() {
            let tail = self.fifo_tail.entry((from, to)).or_insert(at);
            at = at.max(*tail);
            *tail = at;
        }
        self.in_flight.insert(
            (at, seq),
            InFlight {
                from,
                to,
                seq,
                payload,
            },
        );
        (seq, Ok(at))
    }

    /// Removes and returns the next message due at or before `now`.
    pub fn pop_due(&mut self, now: i64) -> Option<InFlight> {
        let (&key, _) = self.in_flight.first_key_value()?;
        if key.0 > now {
            return None;
        }
        self.in_flight.remove(&key)
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }
}

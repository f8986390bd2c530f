//! Leader election: the `leader()` (Ω) and `AmLeader(t1, t2)` primitives.
//!
//! Providers record every `true` answer of `am_leader` in a grant ledger. Across
//! distinct processes the recorded intervals are pairwise disjoint.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::ProcessId;
use crate::time::Time;
use crate::trace::GrantInterval;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LeaderError {
    #[error("AmLeader called with t1 = {t1} > t2 = {t2}")]
    InvertedInterval { t1: Time, t2: Time },
    #[error("AmLeader called with t2 = {t2} beyond the caller's clock {now}")]
    FutureInterval { t2: Time, now: Time },
    #[error("leadership segments overlap or are unsorted at segment {0}")]
    OverlappingSegments(usize),
    #[error("leadership segment {0} extends past the stabilization point")]
    SegmentAfterStabilization(usize),
    #[error("process {0} does not exist")]
    UnknownProcess(ProcessId),
}

/// The two primitives as seen by a protocol process.
pub trait Leadership {
    /// Ω: the process `caller` currently trusts.
    fn leader(&mut self, caller: ProcessId, now: Time) -> ProcessId;
    /// Whether `caller` was leader continuously over `[t1, t2]` of its clock.
    fn am_leader(
        &mut self,
        caller: ProcessId,
        t1: Time,
        t2: Time,
        now: Time,
    ) -> Result<bool, LeaderError>;
}

/// A provider driven by the simulator.
pub trait LeadershipProvider: Leadership + Send {
    /// Called once per real tick, before any process steps. `clocks[p]` is the
    /// clock value of `p` at this tick.
    fn on_tick(&mut self, _clocks: &[Time], _alive: &[bool]) {}
    /// Heartbeat from `sender` received by `receiver` at local time `now`.
    fn on_heartbeat(&mut self, _receiver: ProcessId, _sender: ProcessId, _now: Time) {}
    /// Heartbeat period, for providers that exchange messages.
    fn heartbeat_period(&self) -> Option<i64> {
        None
    }
    /// Local time after which the stable leader's calls return true, if fixed.
    fn stable_from(&self) -> Option<Time>;
    fn ledger(&self) -> &GrantLedger;
}

/// Merged record of `true` answers, keyed by `(process, t1)`.
#[derive(Clone, Debug, Default)]
pub struct GrantLedger {
    spans: BTreeMap<(ProcessId, Time), Time>,
}

impl GrantLedger {
    pub fn record(&mut self, p: ProcessId, t1: Time, t2: Time) {
        let end = self.spans.entry((p, t1)).or_insert(t2);
        *end = (*end).max(t2);
    }

    /// Recorded intervals, merging overlapping spans of the same process.
    pub fn intervals(&self) -> Vec<GrantInterval> {
        let mut out: Vec<GrantInterval> = Vec::new();
        for (&(process, from), &to) in &self.spans {
            match out.last_mut() {
                Some(last) if last.process == process && from <= last.to => {
                    last.to = last.to.max(to)
                }
                _ => out.push(GrantInterval { process, from, to }),
            }
        }
        out
    }
}

/// First pair of intervals of distinct processes that intersect.
pub fn first_overlap(grants: &[GrantInterval]) -> Option<(GrantInterval, GrantInterval)> {
    let mut sorted = grants.to_vec();
    sorted.sort_by_key(|g| (g.from, g.to, g.process));
    // The two furthest-reaching earlier intervals of distinct processes.
    let mut top: Option<GrantInterval> = None;
    let mut second: Option<GrantInterval> = None;
    for g in sorted {
        let rival = match top {
            Some(t) if t.process != g.process => Some(t),
            _ => second,
        };
        if let Some(r) = rival {
            if r.to >= g.from {
                return Some((r, g));
            }
        }
        match top {
            Some(t) if t.process == g.process => {
                if g.to > t.to {
                    top = Some(g);
                }
            }
            Some(t) if g.to > t.to => {
                second = Some(t);
                top = Some(g);
            }
            Some(_) => {
                if second.is_none_or(|s| g.to > s.to) {
                    second = Some(g);
                }
            }
            None => top = Some(g),
        }
    }
    None
}

/// A scripted leadership grant over `[start, end]` of local clock values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub holder: ProcessId,
    pub start: Time,
    pub end: Time,
}

/// Omniscient token timeline: scripted segments followed by a final
/// `(leader, [stable_from, ∞))` grant.
#[derive(Clone, Debug)]
pub struct Arbiter {
    segments: Vec<Segment>,
    ledger: GrantLedger,
}

impl Arbiter {
    pub fn new(
        n: usize,
        script: &[Segment],
        stable_leader: ProcessId,
        stable_from: Time,
    ) -> Result<Arbiter, LeaderError> {
        let mut segments = script.to_vec();
        segments.push(Segment {
            holder: stable_leader,
            start: stable_from,
            end: Time::INFINITY,
        });
        for (i, s) in segments.iter().enumerate() {
            if s.holder.0 >= n {
                return Err(LeaderError::UnknownProcess(s.holder));
            }
            if s.start > s.end {
                return Err(LeaderError::OverlappingSegments(i));
            }
            if i + 1 < segments.len() && s.end >= stable_from {
                return Err(LeaderError::SegmentAfterStabilization(i));
            }
            if i > 0 && segments[i - 1].end >= s.start {
                return Err(LeaderError::OverlappingSegments(i));
            }
        }
        Ok(Arbiter {
            segments,
            ledger: GrantLedger::default(),
        })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }
}

fn check_interval(t1: Time, t2: Time, now: Time) -> Result<(), LeaderError> {
    if t1 > t2 {
        return Err(LeaderError::InvertedInterval { t1, t2 });
    }
    if t2 > now {
        return Err(LeaderError::FutureInterval { t2, now });
    }
    Ok(())
}

impl Leadership for Arbiter {
    fn leader(&mut self, _caller: ProcessId, now: Time) -> ProcessId {
        self.segments
            .iter()
            .rev()
            .find(|s| s.start <= now)
            .unwrap_or(&self.segments[0])
            .holder
    }

    fn am_leader(
        &mut self,
        caller: ProcessId,
        t1: Time,
        t2: Time,
        now: Time,
    ) -> Result<bool, LeaderError> {
        check_interval(t1, t2, now)?;
        let granted = self
            .segments
            .iter()
            .any(|s| s.holder == caller && s.start <= t1 && t2 <= s.end);
        if granted {
            self.ledger.record(caller, t1, t2);
        }
        Ok(granted)
    }
}

impl LeadershipProvider for Arbiter {
    fn stable_from(&self) -> Option<Time> {
        self.segments.last().map(|s| s.start)
    }

    fn ledger(&self) -> &GrantLedger {
        &self.ledger
    }
}

#[derive(Clone, Debug, Default)]
struct Claim {
    open: Option<(Time, Time)>,
    closed: Vec<(Time, Time)>,
}

/// Heartbeat failure detector with the smallest-id rule. A process trusts the
/// smallest id heard from within `timeout` (itself included). Claims are
/// granted from a ledger that only opens a new claim when no other claim is
/// open and the claimant's clock exceeds every other closed claim.
#[derive(Clone, Debug)]
pub struct HeartbeatProvider {
    period: i64,
    timeout: i64,
    last_heard: Vec<Vec<Time>>,
    claims: Vec<Claim>,
    ledger: GrantLedger,
}

impl HeartbeatProvider {
    pub fn new(n: usize, period: i64, timeout: i64) -> HeartbeatProvider {
        HeartbeatProvider {
            period: period.max(1),
            timeout,
            last_heard: vec![vec![Time::NEG_INFINITY; n]; n],
            claims: vec![Claim::default(); n],
            ledger: GrantLedger::default(),
        }
    }

    fn trusted(&self, caller: ProcessId, now: Time) -> ProcessId {
        let heard = &self.last_heard[caller.0];
        (0..heard.len())
            .find(|&q| q == caller.0 || heard[q] >= now + (-self.timeout))
            .map(ProcessId)
            .unwrap_or(caller)
    }
}

impl Leadership for HeartbeatProvider {
    fn leader(&mut self, caller: ProcessId, now: Time) -> ProcessId {
        self.trusted(caller, now)
    }

    fn am_leader(
        &mut self,
        caller: ProcessId,
        t1: Time,
        t2: Time,
        now: Time,
    ) -> Result<bool, LeaderError> {
        check_interval(t1, t2, now)?;
        let c = &self.claims[caller.0];
        let granted = c
            .open
            .iter()
            .chain(c.closed.iter())
            .any(|&(s, e)| s <= t1 && t2 <= e);
        if granted {
            self.ledger.record(caller, t1, t2);
        }
        Ok(granted)
    }
}

impl LeadershipProvider for HeartbeatProvider {
    fn on_tick(&mut self, clocks: &[Time], alive: &[bool]) {
        for p in 0..clocks.len() {
            let now = clocks[p];
            let wants = alive[p] && self.trusted(ProcessId(p), now) == ProcessId(p);
            match (wants, self.claims[p].open) {
                (true, Some((s, _))) => self.claims[p].open = Some((s, now)),
                (true, None) => {
                    let blocked = self.claims.iter().enumerate().any(|(q, c)| {
                        q != p && (c.open.is_some() || c.closed.iter().any(|&(_, e)| e >= now))
                    });
                    if !blocked {
                        self.claims[p].open = Some((now, now));
                    }
                }
                (false, Some(span)) => {
                    self.claims[p].closed.push(span);
                    self.claims[p].open = None;
                }
                (false, None) => {}
            }
        }
    }

    fn on_heartbeat(&mut self, receiver: ProcessId, sender: ProcessId, now: Time) {
        self.last_heard[receiver.0][sender.0] = now;
    }

    fn heartbeat_period(&self) -> Option<i64> {
        Some(self.period)
    }

    fn stable_from(&self) -> Option<Time> {
        None
    }

    fn ledger(&self) -> &GrantLedger {
        &self.ledger
    }
}

/// Scenario-level provider selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "provider", rename_all = "snake_case", deny_unknown_fields)]
pub enum LeadershipConfig {
    Arbiter {
        /// Defaults to the smallest-id process that never crashes.
        #[serde(default)]
        stable_leader: Option<ProcessId>,
        /// Defaults to GST.
        #[serde(default)]
        stable_from: Option<Time>,
        #[serde(default)]
        segments: Vec<Segment>,
    },
    Heartbeat {
        /// Defaults to `max(1, δ/2)`.
        #[serde(default)]
        period: Option<i64>,
        /// Defaults to `2δ`.
        #[serde(default)]
        timeout: Option<i64>,
    },
}

impl Default for LeadershipConfig {
    fn default() -> Self {
        LeadershipConfig::Arbiter {
            stable_leader: None,
            stable_from: None,
            segments: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: i64) -> Time {
        Time::new(v)
    }

    #[test]
    fn arbiter_grants_only_within_segments() {
        let script = [Segment {
            holder: ProcessId(1),
            start: t(0),
            end: t(10),
        }];
        let mut a = Arbiter::new(3, &script, ProcessId(0), t(20)).unwrap();
        assert!(a.am_leader(ProcessId(1), t(2), t(10), t(12)).unwrap());
        assert!(!a.am_leader(ProcessId(1), t(2), t(11), t(12)).unwrap());
        assert!(!a.am_leader(ProcessId(2), t(5), t(5), t(5)).unwrap());
        assert!(a.am_leader(ProcessId(0), t(20), t(99), t(99)).unwrap());
        assert!(!a.am_leader(ProcessId(0), t(19), t(99), t(99)).unwrap());
        assert_eq!(a.leader(ProcessId(2), t(15)), ProcessId(1));
        assert_eq!(a.leader(ProcessId(2), t(25)), ProcessId(0));
        assert!(matches!(
            a.am_leader(ProcessId(0), t(30), t(29), t(40)),
            Err(LeaderError::InvertedInterval { .. })
        ));
        assert!(first_overlap(&a.ledger().intervals()).is_none());
    }

    #[test]
    fn arbiter_rejects_overlapping_script() {
        let script = [
            Segment {
                holder: ProcessId(1),
                start: t(0),
                end: t(10),
            },
            Segment {
                holder: ProcessId(2),
                start: t(10),
                end: t(12),
            },
        ];
        assert!(Arbiter::new(3, &script, ProcessId(0), t(20)).is_err());
    }

    #[test]
    fn overlap_detection() {
        let g = |p, a, b| GrantInterval {
            process: ProcessId(p),
            from: t(a),
            to: t(b),
        };
        assert!(first_overlap(&[g(0, 0, 5), g(1, 6, 9), g(0, 10, 20)]).is_none());
        assert!(first_overlap(&[g(0, 0, 5), g(1, 5, 9)]).is_some());
        assert!(first_overlap(&[g(0, 0, 50), g(0, 1, 2), g(1, 10, 12)]).is_some());
    }

    #[test]
    fn heartbeat_claims_are_disjoint() {
        let mut h = HeartbeatProvider::new(2, 1, 4);
        let alive = [true, true];
        // Both processes trust themselves at first; only one claim may open.
        h.on_tick(&[t(0), t(0)], &alive);
        assert!(h.am_leader(ProcessId(0), t(0), t(0), t(0)).unwrap());
        assert!(!h.am_leader(ProcessId(1), t(0), t(0), t(0)).unwrap());
        // p1 hears p0 and stops wanting leadership.
        h.on_heartbeat(ProcessId(1), ProcessId(0), t(1));
        h.on_tick(&[t(1), t(1)], &alive);
        assert!(h.am_leader(ProcessId(0), t(0), t(1), t(1)).unwrap());
        assert_eq!(h.leader(ProcessId(1), t(2)), ProcessId(0));
        assert!(first_overlap(&h.ledger().intervals()).is_none());
    }
}

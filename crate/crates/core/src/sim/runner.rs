use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::clock::Clocks;
use super::network::{Network, Payload};
use super::scenario::{Scenario, ScenarioError};
use crate::leader::{Arbiter, HeartbeatProvider, LeadershipConfig, LeadershipProvider};
use crate::object::OpKind;
use crate::protocol::{Process, ProcessId, StepContext};
use crate::time::Time;
use crate::trace::{
    DropReason, Event, Origin, Record, Trace, TraceFooter, TraceHeader, TRACE_SCHEMA,
};

const WORKLOAD_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Executes a scenario to its horizon.
pub fn run(scenario: &Scenario) -> Result<Trace, ScenarioError> {
    scenario.validate()?;
    Ok(Simulation::new(scenario)?.run())
}

struct Simulation<'a> {
    scenario: &'a Scenario,
    processes: Vec<Process>,
    alive: Vec<bool>,
    clocks: Clocks,
    network: Network,
    provider: Box<dyn LeadershipProvider>,
    workload_rng: ChaCha8Rng,
    /// Invocations due per real time, in insertion order.
    schedule: BTreeMap<i64, Vec<(ProcessId, OpKind, Origin)>>,
    generator_issued: Vec<usize>,
    records: Vec<Record>,
    heartbeats_sent: u64,
}

impl<'a> Simulation<'a> {
    fn new(scenario: &'a Scenario) -> Result<Simulation<'a>, ScenarioError> {
        let n = scenario.n;
        let delta = scenario.timing.delta;
        let provider: Box<dyn LeadershipProvider> = match &scenario.leadership {
            LeadershipConfig::Arbiter { segments, .. } => Box::new(Arbiter::new(
                n,
                segments,
                scenario.stable_leader().expect("validated"),
                scenario.leader_stable_from().expect("arbiter"),
            )?),
            LeadershipConfig::Heartbeat { period, timeout } => Box::new(HeartbeatProvider::new(
                n,
                period.unwrap_or((delta / 2).max(1)),
                timeout.unwrap_or(2 * delta),
            )),
        };
        let processes = (0..n)
            .map(|p| Process::new(ProcessId(p), n, scenario.protocol.clone(), scenario.object))
            .collect();
        let mut schedule: BTreeMap<i64, Vec<_>> = BTreeMap::new();
        for (i, w) in scenario.workload.iter().enumerate() {
            schedule
                .entry(w.at)
                .or_default()
                .push((w.process, w.op, Origin::Workload(i)));
        }
        let mut sim = Simulation {
            scenario,
            processes,
            alive: vec![true; n],
            clocks: Clocks::new(scenario.normalized_offsets()),
            network: Network::new(ChaCha8Rng::seed_from_u64(scenario.seed)),
            provider,
            workload_rng: ChaCha8Rng::seed_from_u64(scenario.seed ^ WORKLOAD_STREAM),
            schedule,
            generator_issued: vec![0; scenario.generators.len()],
            records: Vec::new(),
            heartbeats_sent: 0,
        };
        for g in 0..scenario.generators.len() {
            sim.schedule_generator(g, scenario.generators[g].start);
        }
        Ok(sim)
    }

    fn schedule_generator(&mut self, g: usize, at: i64) {
        let gen = &self.scenario.generators[g];
        if at >= gen.stop
            || at > self.scenario.horizon
            || gen.count.is_some_and(|c| self.generator_issued[g] >= c)
        {
            return;
        }
        let op = gen.ops[self.workload_rng.gen_range(0..gen.ops.len())];
        self.generator_issued[g] += 1;
        self.schedule
            .entry(at)
            .or_default()
            .push((gen.process, op, Origin::Generator(g)));
    }

    fn record(&mut self, real: i64, process: Option<ProcessId>, event: Event) {
        let local = process.map(|p| self.clocks.value(p, real));
        let seq = self.records.len() as u64;
        self.records.push(Record {
            seq,
            real,
            process,
            local,
            event,
        });
    }

    fn send(&mut self, real: i64, from: ProcessId, to: ProcessId, payload: Payload) {
        let msg_kind = payload.kind();
        let message = match &payload {
            Payload::Protocol(m) => Some(m.clone()),
            Payload::Heartbeat => None,
        };
        let (seq, outcome) = self.network.send(self.scenario, real, from, to, payload);
        if message.is_none() {
            self.heartbeats_sent += 1;
            return;
        }
        let (deliver_at, dropped) = match outcome {
            Ok(at) => (Some(at), None),
            Err(reason) => (None, Some(reason)),
        };
        self.record(
            real,
            Some(from),
            Event::Send {
                to,
                seq,
                msg_kind,
                message,
                deliver_at,
                dropped,
            },
        );
    }

    fn run(mut self) -> Trace {
        let scenario = self.scenario;
        let n = scenario.n;
        let mut crashes: BTreeMap<i64, Vec<ProcessId>> = BTreeMap::new();
        for c in &scenario.crashes {
            crashes.entry(c.at).or_default().push(c.process);
        }
        let heartbeat = self.provider.heartbeat_period();

        for real in 0..=scenario.horizon {
            for p in crashes.remove(&real).unwrap_or_default() {
                self.alive[p.0] = false;
                self.processes[p.0].crash();
                self.record(real, Some(p), Event::Crash);
            }

            while let Some(m) = self.network.pop_due(real) {
                let msg_kind = m.payload.kind();
                if !self.alive[m.to.0] {
                    if !matches!(m.payload, Payload::Heartbeat) {
                        let ev = Event::Drop {
                            from: m.from,
                            seq: m.seq,
                            msg_kind,
                            reason: DropReason::ReceiverCrashed,
                        };
                        self.record(real, None, ev);
                    }
                    continue;
                }
                match m.payload {
                    Payload::Heartbeat => {
                        let now = self.clocks.value(m.to, real);
                        self.provider.on_heartbeat(m.to, m.from, now);
                    }
                    Payload::Protocol(msg) => {
                        self.record(
                            real,
                            Some(m.to),
                            Event::Deliver {
                                from: m.from,
                                seq: m.seq,
                                msg_kind,
                            },
                        );
                        self.processes[m.to.0].deliver(m.from, msg);
                    }
                }
            }

            for (p, op_kind, origin) in self.schedule.remove(&real).unwrap_or_default() {
                if self.alive[p.0] {
                    self.record(real, Some(p), Event::Requested { origin, op_kind });
                    self.processes[p.0].invoke(op_kind, origin);
                } else {
                    self.record(real, Some(p), Event::NeverInvoked { origin, op_kind });
                }
            }

            if let Some(period) = heartbeat {
                if real % period == 0 {
                    for p in 0..n {
                        if !self.alive[p] {
                            continue;
                        }
                        for q in (0..n).filter(|&q| q != p) {
                            self.send(real, ProcessId(p), ProcessId(q), Payload::Heartbeat);
                        }
                    }
                }
            }

            let readings: Vec<Time> = (0..n)
                .map(|p| self.clocks.value(ProcessId(p), real))
                .collect();
            self.provider.on_tick(&readings, &self.alive);

            for p in 0..n {
                if !self.alive[p] {
                    continue;
                }
                let id = ProcessId(p);
                let (now, _) = self.clocks.read(id, real);
                let mut ctx = StepContext::new(now, real, self.provider.as_mut());
                self.processes[p].tick(&mut ctx);
                let StepContext { outbox, events, .. } = ctx;
                for event in events {
                    if let Event::Respond {
                        origin: Origin::Generator(g),
                        ..
                    } = event
                    {
                        let think = scenario.generators[g].think.max(1);
                        self.schedule_generator(g, real + think);
                    }
                    self.record(real, Some(id), event);
                }
                for (to, msg) in outbox {
                    self.send(real, id, to, Payload::Protocol(msg));
                }
            }
        }

        let footer = TraceFooter {
            grants: self.provider.ledger().intervals(),
            heartbeats_sent: self.heartbeats_sent,
        };
        let header = TraceHeader {
            schema: TRACE_SCHEMA.to_string(),
            scenario: scenario.clone(),
            clock_offsets: self.clocks.offsets().to_vec(),
            leader_stable_from: self.provider.stable_from(),
        };
        Trace {
            header,
            records: self.records,
            footer,
        }
    }
}

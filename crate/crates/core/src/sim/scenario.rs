use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::leader::{Arbiter, LeaderError, LeadershipConfig};
use crate::object::{ObjectType, OpKind};
use crate::protocol::{MessageKind, ParamError, ProcessId, ProtocolParams};
use crate::time::Time;

pub const SCENARIO_SCHEMA: &str = "promise-lease/scenario/1";

fn scenario_schema() -> String {
    SCENARIO_SCHEMA.to_string()
}

/// A complete, self-contained simulation configuration. Real times are ticks
/// of the simulator's global clock.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "scenario_schema")]
    pub schema: String,
    #[serde(default)]
    pub name: String,
    pub n: usize,
    pub seed: u64,
    /// Last simulated real tick (inclusive).
    pub horizon: i64,
    pub object: ObjectType,
    pub timing: Timing,
    pub protocol: ProtocolParams,
    #[serde(default)]
    pub nice_periods: Vec<NicePeriod>,
    #[serde(default)]
    pub crashes: Vec<Crash>,
    /// Per-process clock offsets (`local = real + offset`, shifted so the
    /// smallest offset is 0). Empty means synchronized clocks.
    #[serde(default)]
    pub clock_offsets: Vec<i64>,
    #[serde(default)]
    pub pre_gst: PreGst,
    /// Scripted per-link behavior; the first matching rule applies.
    #[serde(default)]
    pub links: Vec<LinkRule>,
    #[serde(default)]
    pub leadership: LeadershipConfig,
    #[serde(default)]
    pub workload: Vec<WorkItem>,
    #[serde(default)]
    pub generators: Vec<Generator>,
}

/// The network's actual timing. The protocol's own assumptions live in
/// [`ProtocolParams`] and may differ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    /// Post-GST delay bound δ.
    pub delta: i64,
    /// Nice-period delay bound δ*. Defaults to δ.
    #[serde(default)]
    pub delta_star: Option<i64>,
    /// Clock skew bound ε.
    #[serde(default)]
    pub epsilon: i64,
    #[serde(default)]
    pub gst: i64,
    /// Real time after which links are FIFO. Defaults to GST.
    #[serde(default)]
    pub fifo_after: Option<i64>,
}

impl Timing {
    pub fn new(delta: i64) -> Timing {
        Timing {
            delta,
            delta_star: None,
            epsilon: 0,
            gst: 0,
            fifo_after: None,
        }
    }

    pub fn delta_star(&self) -> i64 {
        self.delta_star.unwrap_or(self.delta)
    }

    pub fn fifo_after(&self) -> i64 {
        self.fifo_after.unwrap_or(self.gst)
    }
}

/// Real-time interval `[start, end)` in which messages sent take at most δ*.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NicePeriod {
    pub start: i64,
    pub end: i64,
}

impl NicePeriod {
    pub fn contains(&self, real: i64) -> bool {
        self.start <= real && real < self.end
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Crash {
    pub process: ProcessId,
    pub at: i64,
}

/// Default pre-GST link model: uniform delay in `[1, max_delay]`, independent
/// loss with probability `loss`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreGst {
    /// Defaults to 10δ.
    #[serde(default)]
    pub max_delay: Option<i64>,
    #[serde(default = "default_loss")]
    pub loss: f64,
}

fn default_loss() -> f64 {
    0.2
}

impl Default for PreGst {
    fn default() -> Self {
        PreGst {
            max_delay: None,
            loss: default_loss(),
        }
    }
}

/// Scripted treatment of messages sent in real time `[start, end)` on
/// matching links. Unset endpoints and an empty kind list match everything.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkRule {
    #[serde(default)]
    pub from: Option<ProcessId>,
    #[serde(default)]
    pub to: Option<ProcessId>,
    #[serde(default)]
    pub kinds: Vec<MessageKind>,
    #[serde(default)]
    pub start: i64,
    #[serde(default = "forever")]
    pub end: i64,
    /// Fixed delay in ticks.
    #[serde(default)]
    pub delay: Option<i64>,
    #[serde(default)]
    pub drop: bool,
}

fn forever() -> i64 {
    i64::MAX
}

impl LinkRule {
    pub fn matches(&self, from: ProcessId, to: ProcessId, kind: MessageKind, real: i64) -> bool {
        self.from.is_none_or(|f| f == from)
            && self.to.is_none_or(|t| t == to)
            && (self.kinds.is_empty() || self.kinds.contains(&kind))
            && self.start <= real
            && real < self.end
    }
}

/// A single invocation at a fixed real time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkItem {
    pub process: ProcessId,
    pub at: i64,
    #[serde(flatten)]
    pub op: OpKind,
}

/// Closed loop: invoke an operation drawn uniformly from `ops`, and the next
/// one `think` ticks after each response, while before `stop` and under
/// `count` invocations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub process: ProcessId,
    pub start: i64,
    pub stop: i64,
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default)]
    pub think: i64,
    pub ops: Vec<OpKind>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unsupported scenario schema {0:?}")]
    Schema(String),
    #[error("n must be at least 1")]
    NoProcesses,
    #[error("horizon must be positive")]
    Horizon,
    #[error("seed {0} exceeds the largest scenario-file integer {max}", max = i64::MAX)]
    SeedRange(u64),
    #[error("majority-correct violated: {crashes} crashes among {n} processes")]
    TooManyCrashes { crashes: usize, n: usize },
    #[error("process {0} crashes more than once")]
    DuplicateCrash(ProcessId),
    #[error("crash of {process} at {at} is after GST {gst}")]
    CrashAfterGst {
        process: ProcessId,
        at: i64,
        gst: i64,
    },
    #[error("process {0} does not exist")]
    UnknownProcess(ProcessId),
    #[error("timing: {0}")]
    Timing(String),
    #[error("clock offsets spread {spread} exceeds ε = {epsilon}")]
    ClockSkew { spread: i64, epsilon: i64 },
    #[error("protocol parameters: {0}")]
    Params(#[from] ParamError),
    #[error("leadership: {0}")]
    Leadership(#[from] LeaderError),
    #[error("stable leader {0} crashes")]
    StableLeaderCrashes(ProcessId),
    #[error("workload: {0}")]
    Workload(String),
    #[error("link rule {index}: {reason}")]
    Link { index: usize, reason: String },
    #[error("scenario file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("scenario file: {0}")]
    Io(#[from] std::io::Error),
}

impl Scenario {
    /// A fault-free scenario with synchronized clocks, the default arbiter
    /// and no workload. The horizon leaves 20 rounds of `δ + λ` after GST.
    pub fn new(n: usize, object: ObjectType, timing: Timing, protocol: ProtocolParams) -> Scenario {
        let horizon = timing.gst + 20 * (timing.delta + protocol.lambda);
        Scenario {
            schema: scenario_schema(),
            name: String::new(),
            n,
            seed: 0,
            horizon,
            object,
            timing,
            protocol,
            nice_periods: Vec::new(),
            crashes: Vec::new(),
            clock_offsets: Vec::new(),
            pre_gst: PreGst::default(),
            links: Vec::new(),
            leadership: LeadershipConfig::default(),
            workload: Vec::new(),
            generators: Vec::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        if s.schema != SCENARIO_SCHEMA {
            return Err(ScenarioError::Schema(s.schema));
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        Scenario::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenarios serialize to TOML")
    }

    pub fn crashed(&self) -> BTreeSet<ProcessId> {
        self.crashes.iter().map(|c| c.process).collect()
    }

    pub fn correct(&self) -> Vec<ProcessId> {
        let crashed = self.crashed();
        (0..self.n)
            .map(ProcessId)
            .filter(|p| !crashed.contains(p))
            .collect()
    }

    /// Offsets shifted so that the smallest is 0; zeros when unset.
    pub fn normalized_offsets(&self) -> Vec<i64> {
        if self.clock_offsets.is_empty() {
            return vec![0; self.n];
        }
        let min = *self.clock_offsets.iter().min().expect("non-empty");
        self.clock_offsets.iter().map(|o| o - min).collect()
    }

    pub fn stable_leader(&self) -> Option<ProcessId> {
        match &self.leadership {
            LeadershipConfig::Arbiter { stable_leader, .. } => {
                stable_leader.or_else(|| self.correct().first().copied())
            }
            LeadershipConfig::Heartbeat { .. } => self.correct().first().copied(),
        }
    }

    /// Local time from which the arbiter's stable leader holds the token.
    pub fn leader_stable_from(&self) -> Option<Time> {
        match &self.leadership {
            LeadershipConfig::Arbiter { stable_from, .. } => {
                Some(stable_from.unwrap_or(Time::new(self.timing.gst)))
            }
            LeadershipConfig::Heartbeat { .. } => None,
        }
    }

    pub fn in_nice_period(&self, real: i64) -> bool {
        self.nice_periods.iter().any(|p| p.contains(real))
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.schema != SCENARIO_SCHEMA {
            return Err(ScenarioError::Schema(self.schema.clone()));
        }
        if self.n == 0 {
            return Err(ScenarioError::NoProcesses);
        }
        if self.horizon <= 0 {
            return Err(ScenarioError::Horizon);
        }
        if i64::try_from(self.seed).is_err() {
            return Err(ScenarioError::SeedRange(self.seed));
        }
        let valid = |p: ProcessId| {
            if p.0 < self.n {
                Ok(())
            } else {
                Err(ScenarioError::UnknownProcess(p))
            }
        };

        let t = &self.timing;
        if t.delta < 1 {
            return Err(ScenarioError::Timing("δ must be at least 1".into()));
        }
        if t.delta_star() < 1 || t.delta_star() > t.delta {
            return Err(ScenarioError::Timing("δ* must lie in [1, δ]".into()));
        }
        if t.epsilon < 0 || t.gst < 0 {
            return Err(ScenarioError::Timing(
                "ε and GST must be non-negative".into(),
            ));
        }
        if t.fifo_after() < t.gst {
            return Err(ScenarioError::Timing(
                "fifo_after must not precede GST".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.pre_gst.loss) {
            return Err(ScenarioError::Timing(
                "pre-GST loss must lie in [0, 1)".into(),
            ));
        }
        if self.pre_gst.max_delay.is_some_and(|d| d < 1) {
            return Err(ScenarioError::Timing(
                "pre-GST max delay must be at least 1".into(),
            ));
        }
        for p in &self.nice_periods {
            if p.start < t.gst || p.end <= p.start {
                return Err(ScenarioError::Timing(format!(
                    "nice period [{}, {}) must be non-empty and start at or after GST",
                    p.start, p.end
                )));
            }
        }
        if !self.clock_offsets.is_empty() {
            if self.clock_offsets.len() != self.n {
                return Err(ScenarioError::Timing(
                    "one clock offset per process required".into(),
                ));
            }
            let spread =
                self.clock_offsets.iter().max().unwrap() - self.clock_offsets.iter().min().unwrap();
            if spread > t.epsilon {
                return Err(ScenarioError::ClockSkew {
                    spread,
                    epsilon: t.epsilon,
                });
            }
        }

        let mut seen = BTreeSet::new();
        for c in &self.crashes {
            valid(c.process)?;
            if !seen.insert(c.process) {
                return Err(ScenarioError::DuplicateCrash(c.process));
            }
            if c.at > t.gst {
                return Err(ScenarioError::CrashAfterGst {
                    process: c.process,
                    at: c.at,
                    gst: t.gst,
                });
            }
        }
        if 2 * self.crashes.len() >= self.n {
            return Err(ScenarioError::TooManyCrashes {
                crashes: self.crashes.len(),
                n: self.n,
            });
        }

        self.protocol.validate()?;

        match &self.leadership {
            LeadershipConfig::Arbiter { segments, .. } => {
                let leader = self.stable_leader().expect("a majority is correct");
                valid(leader)?;
                if seen.contains(&leader) {
                    return Err(ScenarioError::StableLeaderCrashes(leader));
                }
                Arbiter::new(
                    self.n,
                    segments,
                    leader,
                    self.leader_stable_from().expect("arbiter"),
                )?;
            }
            LeadershipConfig::Heartbeat { period, timeout } => {
                if period.is_some_and(|p| p < 1) || timeout.is_some_and(|p| p < 1) {
                    return Err(ScenarioError::Timing(
                        "heartbeat period and timeout must be positive".into(),
                    ));
                }
            }
        }

        for (i, w) in self.workload.iter().enumerate() {
            valid(w.process)?;
            if !self.object.supports(w.op) || w.op == OpKind::NoOp {
                return Err(ScenarioError::Workload(format!(
                    "item {i}: {} is not an operation of {}",
                    w.op, self.object
                )));
            }
            if w.at < 0 || w.at > self.horizon {
                return Err(ScenarioError::Workload(format!(
                    "item {i}: time {} outside [0, horizon]",
                    w.at
                )));
            }
        }
        for (i, g) in self.generators.iter().enumerate() {
            valid(g.process)?;
            if g.ops.is_empty() || g.think < 0 || g.start < 0 || g.stop < g.start {
                return Err(ScenarioError::Workload(format!(
                    "generator {i} is malformed"
                )));
            }
            if let Some(op) = g
                .ops
                .iter()
                .find(|&&op| !self.object.supports(op) || op == OpKind::NoOp)
            {
                return Err(ScenarioError::Workload(format!(
                    "generator {i}: {op} is not an operation of {}",
                    self.object
                )));
            }
        }

        for (index, rule) in self.links.iter().enumerate() {
            let fail = |reason: &str| {
                Err(ScenarioError::Link {
                    index,
                    reason: reason.into(),
                })
            };
            if let Some(p) = rule.from.into_iter().chain(rule.to).find(|p| p.0 >= self.n) {
                return Err(ScenarioError::UnknownProcess(p));
            }
            if rule.drop == rule.delay.is_some() {
                return fail("exactly one of `delay` and `drop` is required");
            }
            if rule.end <= rule.start {
                return fail("empty time window");
            }
            let after_gst = rule.end > t.gst;
            if rule.drop && after_gst {
                return fail("messages sent after GST cannot be dropped");
            }
            if let Some(d) = rule.delay {
                if d < 1 {
                    return fail("delay must be at least 1 tick");
                }
                if after_gst && d > t.delta {
                    return fail("delay exceeds δ after GST");
                }
                let nice = self
                    .nice_periods
                    .iter()
                    .any(|p| rule.start < p.end && p.start < rule.end);
                if nice && d > t.delta_star() {
                    return fail("delay exceeds δ* inside a nice period");
                }
            }
        }
        Ok(())
    }
}

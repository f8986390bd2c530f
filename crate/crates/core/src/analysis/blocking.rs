use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::protocol::{OpId, ProcessId};
use crate::trace::{Event, Origin, Trace};

use super::history::History;
use super::linearizability::earliest_real;

/// The network regime an operation's whole execution fell in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Period {
    Stable,
    Nice,
    PreGst,
    /// Straddles GST or the warm-up after it.
    Unclassified,
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Period::Stable => "stable",
            Period::Nice => "nice",
            Period::PreGst => "pre_gst",
            Period::Unclassified => "unclassified",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpClass {
    Rmw,
    Read,
}

impl fmt::Display for OpClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OpClass::Rmw => "rmw",
            OpClass::Read => "read",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Bucket {
    pub period: Period,
    pub op: OpClass,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OpBlocking {
    pub op: OpId,
    pub process: ProcessId,
    pub class: OpClass,
    pub invoke_real: i64,
    pub respond_real: i64,
    /// Local-clock ticks from invocation to response.
    pub blocking: i64,
    pub period: Period,
    /// Counted in its bucket's maximum. RMWs count only when issued by the
    /// stable leader while it had no other batch in flight.
    pub counted: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BucketStats {
    pub count: usize,
    pub max: i64,
    pub max_op: Option<OpId>,
    pub mean: f64,
}

/// Which operations count as post-stabilization, and how far into a nice
/// period an operation must start to be classified nice.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BlockingConfig {
    /// Defaults to `4δ`: messages sent before a nice period (up to δ late,
    /// then FIFO-ordered) and batches started before it have drained.
    pub nice_margin: Option<i64>,
    /// Added after the stable leader's first lease; defaults to λ.
    pub warmup: Option<i64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockingReport {
    /// First real time counted as stable; `None` if the run never stabilized.
    pub stable_from: Option<i64>,
    pub leader: Option<ProcessId>,
    pub ops: Vec<OpBlocking>,
    #[serde(serialize_with = "buckets_as_list")]
    pub buckets: BTreeMap<Bucket, BucketStats>,
}

fn buckets_as_list<S: serde::Serializer>(
    b: &BTreeMap<Bucket, BucketStats>,
    s: S,
) -> Result<S::Ok, S::Error> {
    #[derive(Serialize)]
    struct Entry<'a> {
        #[serde(flatten)]
        bucket: &'a Bucket,
        #[serde(flatten)]
        stats: &'a BucketStats,
    }
    s.collect_seq(b.iter().map(|(bucket, stats)| Entry { bucket, stats }))
}

impl BlockingReport {
    pub fn max(&self, period: Period, op: OpClass) -> Option<i64> {
        self.buckets
            .get(&Bucket { period, op })
            .filter(|s| s.count > 0)
            .map(|s| s.max)
    }
}

pub fn blocking_times(trace: &Trace) -> BlockingReport {
    blocking_times_with(trace, &BlockingConfig::default())
}

pub fn blocking_times_with(trace: &Trace, config: &BlockingConfig) -> BlockingReport {
    let scenario = &trace.header.scenario;
    let delta = scenario.timing.delta;
    let nice_margin = config.nice_margin.unwrap_or(4 * delta);
    let warmup = config.warmup.unwrap_or(scenario.protocol.lambda);
    let offsets = &trace.header.clock_offsets;

    // The stable leader and the real time from which it holds leadership.
    let (leader, base) = match trace.header.leader_stable_from {
        Some(t0) => (
            scenario.stable_leader(),
            scenario.timing.gst.max(earliest_real(offsets, t0)),
        ),
        None => match trace.footer.grants.iter().max_by_key(|g| g.from) {
            Some(g) => (
                Some(g.process),
                scenario.timing.gst.max(earliest_real(offsets, g.from)),
            ),
            None => (None, scenario.timing.gst),
        },
    };
    let first_lock = leader.and_then(|l| {
        trace
            .records
            .iter()
            .find(|r| {
                r.process == Some(l) && r.real >= base && matches!(r.event, Event::Lock { .. })
            })
            .map(|r| r.real)
    });
    let stable_from = first_lock.map(|t| t + warmup);

    // Leader RMWs invoked while the leader was idle.
    let mut eligible = std::collections::HashSet::new();
    if let Some(l) = leader {
        let mut ready = false;
        let mut in_commit = false;
        for r in trace.records.iter().filter(|r| r.process == Some(l)) {
            match &r.event {
                Event::LeaderWorkStart { .. } | Event::LeaderWorkEnd { .. } => {
                    ready = false;
                    in_commit = false;
                }
                Event::DoOpsStart { .. } => in_commit = true,
                Event::Lock { .. } => {
                    ready = true;
                    in_commit = false;
                }
                Event::Invoke { op, origin }
                    if !op.kind.is_read() && *origin != Origin::Leader && ready && !in_commit =>
                {
                    eligible.insert(op.id);
                }
                _ => {}
            }
        }
    }

    let history = History::from_trace(trace).expect("simulator traces are well formed");
    let mut ops = Vec::new();
    for h in history.completed() {
        if h.origin == Origin::Leader {
            continue;
        }
        let respond_real = h.response.as_ref().expect("completed").at.real;
        let (inv, resp) = (h.invoke.real, respond_real);
        let stable = stable_from.is_some_and(|s| inv >= s);
        let nice = stable
            && scenario
                .nice_periods
                .iter()
                .any(|np| inv >= np.start + nice_margin && resp < np.end);
        let period = if nice {
            Period::Nice
        } else if stable {
            Period::Stable
        } else if resp < scenario.timing.gst {
            Period::PreGst
        } else {
            Period::Unclassified
        };
        let class = if h.kind.is_read() {
            OpClass::Read
        } else {
            OpClass::Rmw
        };
        let counted = class == OpClass::Read || eligible.contains(&h.id);
        ops.push(OpBlocking {
            op: h.id,
            process: h.process,
            class,
            invoke_real: inv,
            respond_real,
            blocking: h.blocking().expect("completed"),
            period,
            counted,
        });
    }

    let mut buckets: BTreeMap<Bucket, BucketStats> = BTreeMap::new();
    for o in ops.iter().filter(|o| o.counted) {
        let s = buckets
            .entry(Bucket {
                period: o.period,
                op: o.class,
            })
            .or_default();
        s.mean = (s.mean * s.count as f64 + o.blocking as f64) / (s.count + 1) as f64;
        s.count += 1;
        if s.max_op.is_none() || o.blocking > s.max {
            s.max = o.blocking;
            s.max_op = Some(o.op);
        }
    }
    BlockingReport {
        stable_from,
        leader,
        ops,
        buckets,
    }
}

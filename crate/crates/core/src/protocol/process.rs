//! One replica. The three pseudocode threads are explicit state machines:
//! message absorption, the control loop (leader work and PCM handlers) and the
//! client loop. A step runs all three to a fixed point at one clock reading.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::mem;

use super::message::Message;
use super::types::{
    Algorithm, Batch, BatchIndex, Estimate, Lease, OpId, OpSet, Operation, ProcessId,
    ProtocolParams,
};
use crate::leader::Leadership;
use crate::object::{ObjectType, OpKind, Value};
use crate::time::Time;
use crate::trace::{EndReason, Event, Origin, ResponseDetail, Thread, WaitCause};

static INITIAL_BATCH: Batch = Batch {
    ops: BTreeSet::new(),
    promise: Time::INFINITY,
};

/// Inputs and outputs of one step.
pub struct StepContext<'a> {
    /// The clock reading of this step.
    pub now: Time,
    /// Real time of this step; used for trace records only.
    pub real: i64,
    pub leadership: &'a mut dyn Leadership,
    /// Messages to other processes.
    pub outbox: Vec<(ProcessId, Message)>,
    pub events: Vec<Event>,
}

impl<'a> StepContext<'a> {
    pub fn new(now: Time, real: i64, leadership: &'a mut dyn Leadership) -> Self {
        StepContext {
            now,
            real,
            leadership,
            outbox: Vec::new(),
            events: Vec::new(),
        }
    }
}

enum Outcome {
    Progress,
    Blocked(Option<WaitCause>),
}

enum Client {
    Idle,
    Rmw {
        op: Operation,
        origin: Origin,
        next_send: Time,
        replied: bool,
    },
    Read {
        op: Operation,
        origin: Origin,
        stage: ReadStage,
    },
    Finishing {
        op: Operation,
        origin: Origin,
        value: Value,
        detail: ResponseDetail,
        until: Time,
    },
}

#[derive(Clone, Copy)]
struct ReadView {
    t_prime: Time,
    real_prime: i64,
    lease: Lease,
    k_hat: BatchIndex,
    before_lease_start: bool,
}

enum ReadStage {
    Lease,
    Batches { view: ReadView, upper: BatchIndex },
    Promise { view: ReadView },
}

enum Control {
    Idle,
    /// PCM handling of a CommitLease blocked in FillGaps(j − 1).
    CommitGaps {
        from: ProcessId,
        j: BatchIndex,
        lease: Lease,
        holders: BTreeSet<ProcessId>,
        next_send: Time,
    },
    Leader(Box<LeaderWork>),
}

struct LeaderWork {
    t: Time,
    phase: LeaderPhase,
}

enum LeaderPhase {
    InitWait,
    Estimates { next_send: Time },
    FillGaps { chosen: Estimate, next_send: Time },
    Commit(Box<Commit>),
    Main,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum CommitStage {
    Acks,
    LeaseHolders,
    LeaseExpiry { until: Time },
}

struct Commit {
    ops: OpSet,
    promise: Time,
    j: BatchIndex,
    status: bool,
    recommit: bool,
    first_send: Time,
    next_send: Time,
    rounds: u32,
    stage: CommitStage,
}

enum LeaderStep {
    Outcome(Outcome),
    Return(EndReason),
}

pub struct Process {
    id: ProcessId,
    n: usize,
    params: ProtocolParams,
    object: ObjectType,
    crashed: bool,

    max_t: Time,
    estimate: Estimate,
    batches: BTreeMap<BatchIndex, Batch>,
    states: BTreeMap<BatchIndex, Value>,
    replies: BTreeMap<OpId, Value>,
    takes_effect: BTreeMap<OpId, Time>,
    counter: u64,
    ops_requested: OpSet,
    ops_done: OpSet,
    max_batch_done: BatchIndex,
    pending: BTreeMap<BatchIndex, Batch>,
    max_pending_index: BatchIndex,
    lease: Lease,
    lease_holders: BTreeSet<ProcessId>,
    next_send_time: Time,
    replied: BTreeMap<Time, BTreeSet<ProcessId>>,
    estimates_received: BTreeMap<Time, BTreeSet<Estimate>>,
    packed: BTreeMap<(Time, BatchIndex), BTreeSet<ProcessId>>,

    inbox: VecDeque<(ProcessId, Message)>,
    pcm_queue: VecDeque<(ProcessId, Message)>,
    lease_requests: BTreeSet<ProcessId>,
    invocations: VecDeque<(OpKind, Origin)>,
    client: Client,
    control: Control,
    last_leader_check: Time,
    client_wait: Option<(WaitCause, Option<OpId>)>,
    control_wait: Option<(WaitCause, Option<OpId>)>,
}

impl Process {
    pub fn new(id: ProcessId, n: usize, params: ProtocolParams, object: ObjectType) -> Process {
        let sigma0 = object.initial();
        Process {
            id,
            n,
            params,
            object,
            crashed: false,
            max_t: Time::new(-1),
            estimate: Estimate::initial(),
            batches: BTreeMap::from([(-1, Batch::initial()), (0, Batch::zero())]),
            states: BTreeMap::from([(-1, sigma0), (0, sigma0)]),
            replies: BTreeMap::new(),
            takes_effect: BTreeMap::new(),
            counter: 0,
            ops_requested: OpSet::new(),
            ops_done: OpSet::new(),
            max_batch_done: 0,
            pending: BTreeMap::new(),
            max_pending_index: 0,
            lease: Lease::initial(),
            lease_holders: BTreeSet::new(),
            next_send_time: Time::ZERO,
            replied: BTreeMap::new(),
            estimates_received: BTreeMap::new(),
            packed: BTreeMap::new(),
            inbox: VecDeque::new(),
            pcm_queue: VecDeque::new(),
            lease_requests: BTreeSet::new(),
            invocations: VecDeque::new(),
            client: Client::Idle,
            control: Control::Idle,
            last_leader_check: Time::NEG_INFINITY,
            client_wait: None,
            control_wait: None,
        }
    }

    pub fn id(&self) -> ProcessId {
        self.id
    }

    pub fn params(&self) -> &ProtocolParams {
        &self.params
    }

    pub fn batch(&self, j: BatchIndex) -> &Batch {
        self.batches.get(&j).unwrap_or(&INITIAL_BATCH)
    }

    pub fn lease(&self) -> Lease {
        self.lease
    }

    pub fn estimate(&self) -> &Estimate {
        &self.estimate
    }

    pub fn max_t(&self) -> Time {
        self.max_t
    }

    pub fn max_batch_done(&self) -> BatchIndex {
        self.max_batch_done
    }

    pub fn max_pending_index(&self) -> BatchIndex {
        self.max_pending_index
    }

    pub fn pending(&self, j: BatchIndex) -> &Batch {
        self.pending.get(&j).unwrap_or(&INITIAL_BATCH)
    }

    pub fn state_after(&self, j: BatchIndex) -> Option<Value> {
        self.states.get(&j).copied()
    }

    pub fn reply(&self, op: OpId) -> Option<Value> {
        self.replies.get(&op).copied()
    }

    pub fn takes_effect(&self, op: OpId) -> Time {
        self.takes_effect
            .get(&op)
            .copied()
            .unwrap_or(Time::INFINITY)
    }

    pub fn lease_holders(&self) -> &BTreeSet<ProcessId> {
        &self.lease_holders
    }

    pub fn ops_requested(&self) -> &OpSet {
        &self.ops_requested
    }

    pub fn ops_done(&self) -> &OpSet {
        &self.ops_done
    }

    pub fn is_crashed(&self) -> bool {
        self.crashed
    }

    /// Whether the control thread is running leader work.
    pub fn in_leader_work(&self) -> bool {
        matches!(self.control, Control::Leader(_))
    }

    /// Whether the client thread has no operation in progress or queued.
    pub fn client_idle(&self) -> bool {
        matches!(self.client, Client::Idle) && self.invocations.is_empty()
    }

    pub fn crash(&mut self) {
        self.crashed = true;
        self.inbox.clear();
        self.pcm_queue.clear();
    }

    pub fn deliver(&mut self, from: ProcessId, msg: Message) {
        if !self.crashed {
            self.inbox.push_back((from, msg));
        }
    }

    /// Queues an operation for the client thread, which runs operations one at
    /// a time in invocation order.
    pub fn invoke(&mut self, kind: OpKind, origin: Origin) {
        if !self.crashed {
            self.invocations.push_back((kind, origin));
        }
    }

    /// Runs all threads at clock reading `ctx.now` until none can progress.
    pub fn tick(&mut self, ctx: &mut StepContext<'_>) {
        if self.crashed {
            return;
        }
        loop {
            let mut progress = self.absorb_messages(ctx);
            progress |= self.run_control(ctx);
            progress |= self.run_client(ctx);
            if !progress {
                break;
            }
        }
    }

    // ---- sending helpers ----

    fn send(&mut self, ctx: &mut StepContext<'_>, to: ProcessId, msg: Message) {
        if to == self.id {
            self.inbox.push_back((self.id, msg));
        } else {
            ctx.outbox.push((to, msg));
        }
    }

    fn send_others(&mut self, ctx: &mut StepContext<'_>, msg: Message) {
        for q in (0..self.n).map(ProcessId).filter(|&q| q != self.id) {
            ctx.outbox.push((q, msg.clone()));
        }
    }

    fn majority_acks(&self) -> usize {
        self.n / 2
    }

    fn am_leader(&self, ctx: &mut StepContext<'_>, t: Time) -> bool {
        let now = ctx.now;
        ctx.leadership
            .am_leader(self.id, t, now, now)
            .expect("leadership intervals start no later than the current clock")
    }

    // ---- shared state mutation ----

    fn set_batch(&mut self, ctx: &mut StepContext<'_>, j: BatchIndex, batch: Batch) {
        if self.batches.get(&j) != Some(&batch) {
            if j >= 0 {
                ctx.events.push(Event::BatchSet {
                    j,
                    batch: batch.clone(),
                });
            }
            self.batches.insert(j, batch);
        }
    }

    fn set_lease(&mut self, ctx: &mut StepContext<'_>, lease: Lease) {
        self.lease = lease;
        ctx.events.push(Event::LeaseSet { lease });
    }

    fn accept(&mut self, ctx: &mut StepContext<'_>, ops: OpSet, ts: Time, k: BatchIndex) {
        ctx.events.push(Event::Accept {
            ops: ops.clone(),
            ts,
            k,
        });
        self.estimate = Estimate { ops, ts, k };
    }

    fn execute_batch(&mut self, ctx: &mut StepContext<'_>, j: BatchIndex) {
        let batch = self.batch(j).clone();
        let mut sigma = self.states[&(j - 1)];
        for op in &batch.ops {
            let (next, reply) = self
                .object
                .apply(sigma, op.kind)
                .expect("operations are validated against the object type");
            sigma = next;
            self.replies.insert(op.id, reply);
            self.takes_effect.insert(op.id, batch.promise);
        }
        self.states.insert(j, sigma);
        ctx.events.push(Event::Execute { j, state: sigma });
    }

    fn execute_up_to(&mut self, ctx: &mut StepContext<'_>, upto: BatchIndex) {
        for j in self.max_batch_done + 1..=upto {
            if self.batch(j).is_initial() {
                ctx.events.push(Event::Anomaly {
                    what: format!("execute of unknown batch {j}"),
                });
                return;
            }
            self.execute_batch(ctx, j);
            let ops = self.batch(j).ops.clone();
            self.ops_done.extend(ops);
            self.max_batch_done = j;
        }
    }

    fn gaps(&self, upto: BatchIndex) -> BTreeSet<BatchIndex> {
        (1..=upto).filter(|&j| self.batch(j).is_initial()).collect()
    }

    fn note_wait(
        &mut self,
        ctx: &mut StepContext<'_>,
        thread: Thread,
        wait: Option<(WaitCause, Option<OpId>)>,
    ) {
        let slot = match thread {
            Thread::Client => &mut self.client_wait,
            Thread::Control => &mut self.control_wait,
        };
        if *slot == wait {
            return;
        }
        if let Some((cause, op)) = slot.take() {
            ctx.events.push(Event::WaitEnd { thread, cause, op });
        }
        if let Some((cause, op)) = wait {
            ctx.events.push(Event::WaitStart { thread, cause, op });
        }
        *slot = wait;
    }

    // ---- message absorption ----

    fn absorb_messages(&mut self, ctx: &mut StepContext<'_>) -> bool {
        let mut progress = false;
        while let Some((from, msg)) = self.inbox.pop_front() {
            progress = true;
            match msg {
                Message::OpRequest { op } => {
                    self.ops_requested.insert(op);
                }
                Message::EstReply {
                    t,
                    ops,
                    ts,
                    k,
                    prev,
                } => {
                    self.set_batch(ctx, k - 1, prev);
                    self.replied.entry(t).or_default().insert(from);
                    self.estimates_received
                        .entry(t)
                        .or_default()
                        .insert(Estimate { ops, ts, k });
                }
                Message::PAck { t, j } => {
                    self.packed.entry((t, j)).or_default().insert(from);
                }
                Message::MyGaps { gaps } => {
                    for j in gaps {
                        let batch = self.batch(j);
                        if !batch.is_initial() {
                            let batch = batch.clone();
                            self.send(ctx, from, Message::MyBatch { j, batch });
                        }
                    }
                }
                Message::MyBatch { j, batch } => self.set_batch(ctx, j, batch),
                Message::RequestLease => {
                    self.lease_requests.insert(from);
                }
                pcm @ (Message::EstRequest { .. }
                | Message::Prepare { .. }
                | Message::Status { .. }
                | Message::CommitLease { .. }) => self.pcm_queue.push_back((from, pcm)),
            }
        }
        progress
    }

    // ---- control thread ----

    fn run_control(&mut self, ctx: &mut StepContext<'_>) -> bool {
        let mut progress = false;
        loop {
            let outcome = match mem::replace(&mut self.control, Control::Idle) {
                Control::Idle => {
                    if self.last_leader_check < ctx.now {
                        self.last_leader_check = ctx.now;
                        if self.am_leader(ctx, ctx.now) {
                            let t = ctx.now;
                            ctx.events.push(Event::LeaderWorkStart { t });
                            self.control = Control::Leader(Box::new(LeaderWork {
                                t,
                                phase: LeaderPhase::InitWait,
                            }));
                            progress = true;
                            continue;
                        }
                    }
                    match self.pcm_queue.pop_front() {
                        Some((from, msg)) => {
                            self.handle_pcm(ctx, from, msg);
                            Outcome::Progress
                        }
                        None => Outcome::Blocked(None),
                    }
                }
                Control::CommitGaps {
                    from,
                    j,
                    lease,
                    holders,
                    next_send,
                } => {
                    let gaps = self.gaps(j - 1);
                    if gaps.is_empty() {
                        self.finish_commit_lease(ctx, from, j, lease, holders);
                        Outcome::Progress
                    } else if ctx.now >= next_send {
                        self.send_others(ctx, Message::MyGaps { gaps });
                        let next_send = ctx.now + self.params.retx();
                        self.control = Control::CommitGaps {
                            from,
                            j,
                            lease,
                            holders,
                            next_send,
                        };
                        Outcome::Blocked(Some(WaitCause::FillGaps))
                    } else {
                        self.control = Control::CommitGaps {
                            from,
                            j,
                            lease,
                            holders,
                            next_send,
                        };
                        Outcome::Blocked(Some(WaitCause::FillGaps))
                    }
                }
                Control::Leader(mut lw) => match self.leader_step(ctx, &mut lw) {
                    LeaderStep::Outcome(o) => {
                        self.control = Control::Leader(lw);
                        o
                    }
                    LeaderStep::Return(reason) => {
                        ctx.events.push(Event::LeaderWorkEnd { t: lw.t, reason });
                        Outcome::Progress
                    }
                },
            };
            match outcome {
                Outcome::Progress => progress = true,
                Outcome::Blocked(cause) => {
                    self.note_wait(ctx, Thread::Control, cause.map(|c| (c, None)));
                    return progress;
                }
            }
        }
    }

    fn handle_pcm(&mut self, ctx: &mut StepContext<'_>, from: ProcessId, msg: Message) {
        match msg {
            Message::EstRequest { t } => {
                if t > self.max_t {
                    self.max_t = t;
                    ctx.events.push(Event::MaxT { value: t });
                }
                let reply = Message::EstReply {
                    t,
                    ops: self.estimate.ops.clone(),
                    ts: self.estimate.ts,
                    k: self.estimate.k,
                    prev: self.batch(self.estimate.k - 1).clone(),
                };
                self.send(ctx, from, reply);
            }
            Message::Prepare {
                ops,
                promise,
                t,
                j,
                prev,
            } => self.on_proposal(ctx, from, ops, promise, t, j, prev, false),
            Message::Status {
                ops,
                promise,
                t,
                j,
                prev,
            } => self.on_proposal(ctx, from, ops, promise, t, j, prev, true),
            Message::CommitLease {
                batch,
                j,
                lease,
                holders,
            } => {
                self.set_batch(ctx, j, batch);
                if self.gaps(j - 1).is_empty() {
                    self.finish_commit_lease(ctx, from, j, lease, holders);
                } else {
                    self.control = Control::CommitGaps {
                        from,
                        j,
                        lease,
                        holders,
                        next_send: ctx.now,
                    };
                }
            }
            other => unreachable!("{:?} is not a PCM message", other.kind()),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn on_proposal(
        &mut self,
        ctx: &mut StepContext<'_>,
        from: ProcessId,
        ops: OpSet,
        promise: Time,
        t: Time,
        j: BatchIndex,
        prev: Batch,
        status: bool,
    ) {
        self.set_batch(ctx, j - 1, prev);
        if t >= self.max_t && (t, j) > self.estimate.key() {
            self.accept(ctx, ops.clone(), t, j);
            self.pending.insert(
                j,
                Batch {
                    ops: ops.clone(),
                    promise,
                },
            );
            self.max_pending_index = self.max_pending_index.max(j);
        }
        if status && self.params.algorithm == Algorithm::Alg2 {
            if let Some(p) = self.pending.get_mut(&j) {
                p.promise = p.promise.max(promise);
            }
        }
        if self.estimate.ops == ops && self.estimate.ts == t && self.estimate.k == j {
            self.send(ctx, from, Message::PAck { t, j });
        }
    }

    fn finish_commit_lease(
        &mut self,
        ctx: &mut StepContext<'_>,
        from: ProcessId,
        j: BatchIndex,
        lease: Lease,
        holders: BTreeSet<ProcessId>,
    ) {
        self.execute_up_to(ctx, j);
        if holders.contains(&self.id) && lease > self.lease {
            self.set_lease(ctx, lease);
        } else {
            self.send(ctx, from, Message::RequestLease);
        }
    }

    fn leader_step(&mut self, ctx: &mut StepContext<'_>, lw: &mut LeaderWork) -> LeaderStep {
        let t = lw.t;
        let now = ctx.now;
        let eps = self.params.wait_epsilon();
        match &mut lw.phase {
            LeaderPhase::InitWait => {
                let alpha = if self.params.uses_promises() {
                    self.params.alpha
                } else {
                    0
                };
                if now < t + (alpha + self.params.lambda + eps) {
                    return LeaderStep::Outcome(Outcome::Blocked(Some(WaitCause::LeaderInit)));
                }
                self.lease_holders.clear();
                self.send_others(ctx, Message::EstRequest { t });
                lw.phase = LeaderPhase::Estimates {
                    next_send: now + self.params.retx(),
                };
                LeaderStep::Outcome(Outcome::Progress)
            }
            LeaderPhase::Estimates { next_send } => {
                let replies = self.replied.get(&t).map_or(0, BTreeSet::len);
                if replies < self.majority_acks() {
                    if !self.am_leader(ctx, t) {
                        return LeaderStep::Return(EndReason::LostLeadership);
                    }
                    if now >= *next_send {
                        *next_send = now + self.params.retx();
                        self.send_others(ctx, Message::EstRequest { t });
                    }
                    return LeaderStep::Outcome(Outcome::Blocked(Some(WaitCause::Estimates)));
                }
                let chosen = self
                    .estimates_received
                    .get(&t)
                    .into_iter()
                    .flatten()
                    .chain(std::iter::once(&self.estimate))
                    .max_by_key(|e| e.key())
                    .expect("own estimate is a candidate")
                    .clone();
                if chosen.ts >= t {
                    return LeaderStep::Return(EndReason::Superseded);
                }
                lw.phase = LeaderPhase::FillGaps {
                    chosen,
                    next_send: now,
                };
                LeaderStep::Outcome(Outcome::Progress)
            }
            LeaderPhase::FillGaps { chosen, next_send } => {
                let gaps = self.gaps(chosen.k - 2);
                if !gaps.is_empty() {
                    if now >= *next_send {
                        *next_send = now + self.params.retx();
                        self.send_others(ctx, Message::MyGaps { gaps });
                    }
                    return LeaderStep::Outcome(Outcome::Blocked(Some(WaitCause::FillGaps)));
                }
                let chosen = mem::replace(chosen, Estimate::initial());
                match self.start_commit(ctx, t, chosen.ops, Time::ZERO, chosen.k, false, true) {
                    Some(c) => {
                        lw.phase = LeaderPhase::Commit(Box::new(c));
                        LeaderStep::Outcome(Outcome::Progress)
                    }
                    None => LeaderStep::Return(EndReason::Preempted),
                }
            }
            LeaderPhase::Commit(c) => match self.commit_step(ctx, t, c) {
                Ok(true) => {
                    if c.recommit {
                        self.invocations.push_back((OpKind::NoOp, Origin::Leader));
                    }
                    lw.phase = LeaderPhase::Main;
                    LeaderStep::Outcome(Outcome::Progress)
                }
                Ok(false) => LeaderStep::Outcome(Outcome::Blocked(Some(match c.stage {
                    CommitStage::Acks => WaitCause::Acks,
                    CommitStage::LeaseHolders => WaitCause::LeaseHolderAcks,
                    CommitStage::LeaseExpiry { .. } => WaitCause::LeaseExpiry,
                }))),
                Err(()) => LeaderStep::Return(EndReason::LostLeadership),
            },
            LeaderPhase::Main => {
                if !self.am_leader(ctx, t) {
                    return LeaderStep::Return(EndReason::LostLeadership);
                }
                let mut acted = false;
                if now >= self.next_send_time {
                    let k = self.estimate.k;
                    let lease = Lease {
                        batch: k,
                        start: now,
                    };
                    self.set_lease(ctx, lease);
                    let msg = Message::CommitLease {
                        batch: self.batch(k).clone(),
                        j: k,
                        lease,
                        holders: self.lease_holders.clone(),
                    };
                    self.send_others(ctx, msg);
                    self.next_send_time = now + self.params.renew;
                    acted = true;
                }
                if !self.lease_requests.is_empty() {
                    let requests = mem::take(&mut self.lease_requests);
                    self.lease_holders.extend(requests);
                    acted = true;
                }
                let next_ops: OpSet = self
                    .ops_requested
                    .difference(&self.ops_done)
                    .copied()
                    .collect();
                if !next_ops.is_empty() {
                    let j = self.estimate.k + 1;
                    let status = self.params.uses_status();
                    let promise = if self.params.uses_promises() {
                        now + self.params.alpha
                    } else {
                        now
                    };
                    return match self.start_commit(ctx, t, next_ops, promise, j, status, false) {
                        Some(c) => {
                            lw.phase = LeaderPhase::Commit(Box::new(c));
                            LeaderStep::Outcome(Outcome::Progress)
                        }
                        None => LeaderStep::Return(EndReason::Preempted),
                    };
                }
                LeaderStep::Outcome(if acted {
                    Outcome::Progress
                } else {
                    Outcome::Blocked(None)
                })
            }
        }
    }

    /// DoOps / DoOps′ entry. `None` when the commit fails before sending.
    #[allow(clippy::too_many_arguments)]
    fn start_commit(
        &mut self,
        ctx: &mut StepContext<'_>,
        t: Time,
        ops: OpSet,
        promise: Time,
        j: BatchIndex,
        status: bool,
        recommit: bool,
    ) -> Option<Commit> {
        if t < self.max_t {
            return None;
        }
        if status && !self.am_leader(ctx, t) {
            return None;
        }
        self.accept(ctx, ops.clone(), t, j);
        let now = ctx.now;
        let mut c = Commit {
            ops,
            promise,
            j,
            status,
            recommit,
            first_send: now,
            next_send: now,
            rounds: 0,
            stage: CommitStage::Acks,
        };
        ctx.events.push(Event::DoOpsStart {
            t,
            j,
            ops: c.ops.clone(),
            promise,
            status,
        });
        if status {
            self.status_round(ctx, t, &mut c);
        } else {
            self.send_proposal(ctx, t, &mut c);
        }
        Some(c)
    }

    fn send_proposal(&mut self, ctx: &mut StepContext<'_>, t: Time, c: &mut Commit) {
        let msg = Message::Prepare {
            ops: c.ops.clone(),
            promise: c.promise,
            t,
            j: c.j,
            prev: self.batch(c.j - 1).clone(),
        };
        self.send_others(ctx, msg);
        c.next_send = ctx.now + self.params.retx();
    }

    fn status_round(&mut self, ctx: &mut StepContext<'_>, t: Time, c: &mut Commit) {
        c.promise = ctx.now + self.params.alpha;
        c.rounds += 1;
        ctx.events.push(Event::StatusRound {
            t,
            j: c.j,
            promise: c.promise,
            round: c.rounds,
        });
        let msg = Message::Status {
            ops: c.ops.clone(),
            promise: c.promise,
            t,
            j: c.j,
            prev: self.batch(c.j - 1).clone(),
        };
        self.send_others(ctx, msg);
        c.next_send = ctx.now + self.params.beta.finite();
    }

    /// Status rounds go on until the batch is locked, so that a reader
    /// blocked on the batch hears a later promise or the commit within β + δ.
    fn continue_status(
        &mut self,
        ctx: &mut StepContext<'_>,
        t: Time,
        c: &mut Commit,
    ) -> Result<(), ()> {
        if c.status && ctx.now >= c.next_send {
            if !self.am_leader(ctx, t) {
                return Err(());
            }
            self.status_round(ctx, t, c);
        }
        Ok(())
    }

    /// Advances a commit. `Ok(true)` when done, `Ok(false)` when blocked,
    /// `Err` when leadership is lost.
    fn commit_step(
        &mut self,
        ctx: &mut StepContext<'_>,
        t: Time,
        c: &mut Commit,
    ) -> Result<bool, ()> {
        let now = ctx.now;
        let eps = self.params.wait_epsilon();
        loop {
            match c.stage {
                CommitStage::Acks => {
                    let acks = self.packed.get(&(t, c.j)).map_or(0, BTreeSet::len);
                    if acks >= self.majority_acks() {
                        c.stage = CommitStage::LeaseHolders;
                        continue;
                    }
                    if c.status {
                        if now >= c.next_send {
                            if !self.am_leader(ctx, t) {
                                return Err(());
                            }
                            self.status_round(ctx, t, c);
                        }
                    } else {
                        if !self.am_leader(ctx, t) {
                            return Err(());
                        }
                        if now >= c.next_send {
                            self.send_proposal(ctx, t, c);
                        }
                    }
                    return Ok(false);
                }
                CommitStage::LeaseHolders => {
                    let empty = BTreeSet::new();
                    let acked = self.packed.get(&(t, c.j)).unwrap_or(&empty);
                    let covered = self.lease_holders.is_subset(acked);
                    if !covered && now < c.first_send + 2 * self.params.delta {
                        self.continue_status(ctx, t, c)?;
                        return Ok(false);
                    }
                    let must_wait = if self.params.uses_promises() {
                        c.promise < self.lease.start + self.params.lambda
                    } else {
                        true
                    };
                    if !covered && must_wait {
                        c.stage = CommitStage::LeaseExpiry {
                            until: self.lease.start + (self.params.lambda + eps),
                        };
                        continue;
                    }
                    break;
                }
                CommitStage::LeaseExpiry { until } => {
                    if now < until {
                        self.continue_status(ctx, t, c)?;
                        return Ok(false);
                    }
                    break;
                }
            }
        }
        self.lease_holders = self.packed.get(&(t, c.j)).cloned().unwrap_or_default();
        let batch = Batch {
            ops: c.ops.clone(),
            promise: c.promise,
        };
        ctx.events.push(Event::Lock {
            t,
            j: c.j,
            ops: c.ops.clone(),
            promise: c.promise,
            recommit: c.recommit,
        });
        self.set_batch(ctx, c.j, batch.clone());
        let lease = Lease {
            batch: c.j,
            start: c.promise,
        };
        self.set_lease(ctx, lease);
        self.execute_up_to(ctx, c.j);
        let msg = Message::CommitLease {
            batch,
            j: c.j,
            lease,
            holders: self.lease_holders.clone(),
        };
        self.send_others(ctx, msg);
        self.next_send_time = c.promise + self.params.renew;
        Ok(true)
    }

    // ---- client thread ----

    fn run_client(&mut self, ctx: &mut StepContext<'_>) -> bool {
        let mut progress = false;
        loop {
            let state = mem::replace(&mut self.client, Client::Idle);
            let op_id = match &state {
                Client::Idle => None,
                Client::Rmw { op, .. } | Client::Read { op, .. } | Client::Finishing { op, .. } => {
                    Some(op.id)
                }
            };
            match self.client_step(ctx, state) {
                Outcome::Progress => progress = true,
                Outcome::Blocked(cause) => {
                    self.note_wait(ctx, Thread::Client, cause.map(|c| (c, op_id)));
                    return progress;
                }
            }
        }
    }

    fn client_step(&mut self, ctx: &mut StepContext<'_>, state: Client) -> Outcome {
        let now = ctx.now;
        let eps = self.params.wait_epsilon();
        match state {
            Client::Idle => {
                let Some((kind, origin)) = self.invocations.pop_front() else {
                    return Outcome::Blocked(None);
                };
                self.counter += 1;
                let op = Operation {
                    id: OpId {
                        issuer: self.id,
                        counter: self.counter,
                    },
                    kind,
                };
                ctx.events.push(Event::Invoke { op, origin });
                self.client = if kind.is_read() {
                    Client::Read {
                        op,
                        origin,
                        stage: ReadStage::Lease,
                    }
                } else {
                    let leader = ctx.leadership.leader(self.id, now);
                    self.send(ctx, leader, Message::OpRequest { op });
                    Client::Rmw {
                        op,
                        origin,
                        next_send: now + self.params.retx(),
                        replied: false,
                    }
                };
                Outcome::Progress
            }
            Client::Rmw {
                op,
                origin,
                mut next_send,
                replied,
            } => {
                if !replied {
                    if self.replies.contains_key(&op.id) {
                        self.client = Client::Rmw {
                            op,
                            origin,
                            next_send,
                            replied: true,
                        };
                        return Outcome::Progress;
                    }
                    let mut outcome = Outcome::Blocked(Some(WaitCause::AwaitingCommit));
                    if now >= next_send {
                        let leader = ctx.leadership.leader(self.id, now);
                        self.send(ctx, leader, Message::OpRequest { op });
                        next_send = now + self.params.retx();
                        if leader == self.id {
                            outcome = Outcome::Progress;
                        }
                    }
                    self.client = Client::Rmw {
                        op,
                        origin,
                        next_send,
                        replied,
                    };
                    return outcome;
                }
                let takes_effect = self.takes_effect(op.id);
                if self.params.uses_promises() && now < takes_effect + eps {
                    self.client = Client::Rmw {
                        op,
                        origin,
                        next_send,
                        replied,
                    };
                    return Outcome::Blocked(Some(WaitCause::Promise));
                }
                let value = self.replies[&op.id];
                self.finish(ctx, op, origin, value, ResponseDetail::Rmw { takes_effect })
            }
            Client::Read { op, origin, stage } => self.read_step(ctx, op, origin, stage),
            Client::Finishing {
                op,
                origin,
                value,
                detail,
                until,
            } => {
                if now < until {
                    self.client = Client::Finishing {
                        op,
                        origin,
                        value,
                        detail,
                        until,
                    };
                    return Outcome::Blocked(Some(WaitCause::Processing));
                }
                ctx.events.push(Event::Respond {
                    op: op.id,
                    op_kind: op.kind,
                    origin,
                    value,
                    detail,
                });
                Outcome::Progress
            }
        }
    }

    fn read_step(
        &mut self,
        ctx: &mut StepContext<'_>,
        op: Operation,
        origin: Origin,
        stage: ReadStage,
    ) -> Outcome {
        let now = ctx.now;
        match stage {
            ReadStage::Lease => {
                let lease = self.lease;
                if !lease.valid_at(now, self.params.lambda) {
                    self.client = Client::Read {
                        op,
                        origin,
                        stage: ReadStage::Lease,
                    };
                    return Outcome::Blocked(Some(WaitCause::NoValidLease));
                }
                let before_lease_start = self.params.uses_promises() && now < lease.start;
                let mut view = ReadView {
                    t_prime: now,
                    real_prime: ctx.real,
                    lease,
                    k_hat: lease.batch,
                    before_lease_start,
                };
                self.client = if before_lease_start {
                    view.k_hat = self.k_hat_within_lease(op.kind, now, lease.batch);
                    Client::Read {
                        op,
                        origin,
                        stage: ReadStage::Promise { view },
                    }
                } else {
                    let upper = self.max_pending_index;
                    view.k_hat = self.k_hat_beyond_lease(op.kind, now, lease.batch, upper);
                    Client::Read {
                        op,
                        origin,
                        stage: ReadStage::Batches { view, upper },
                    }
                };
                Outcome::Progress
            }
            ReadStage::Batches { mut view, upper } => {
                if self.params.uses_status() {
                    view.k_hat =
                        self.k_hat_beyond_lease(op.kind, view.t_prime, view.lease.batch, upper);
                }
                let present =
                    (view.lease.batch + 1..=view.k_hat).all(|j| !self.batch(j).is_initial());
                self.client = if present {
                    Client::Read {
                        op,
                        origin,
                        stage: ReadStage::Promise { view },
                    }
                } else {
                    Client::Read {
                        op,
                        origin,
                        stage: ReadStage::Batches { view, upper },
                    }
                };
                if present {
                    Outcome::Progress
                } else {
                    Outcome::Blocked(Some(WaitCause::ConflictingPendingBatch))
                }
            }
            ReadStage::Promise { view } => {
                let waits = self.params.uses_promises() && !self.params.skip_read_promise_wait;
                if waits && now < self.batch(view.k_hat).promise + self.params.wait_epsilon() {
                    self.client = Client::Read {
                        op,
                        origin,
                        stage: ReadStage::Promise { view },
                    };
                    return Outcome::Blocked(Some(WaitCause::Promise));
                }
                self.execute_up_to(ctx, view.k_hat);
                let sigma = self.states[&view.k_hat];
                let (_, value) = self.object.apply(sigma, op.kind).expect("validated read");
                let detail = ResponseDetail::Read {
                    t_prime: view.t_prime,
                    real_prime: view.real_prime,
                    lease: view.lease,
                    k_hat: view.k_hat,
                    before_lease_start: view.before_lease_start,
                };
                self.finish(ctx, op, origin, value, detail)
            }
        }
    }

    /// Case `t' < lease.start`: the latest batch up to `k*` whose promise has
    /// passed, restricted to conflicting batches unless in strict mode.
    fn k_hat_within_lease(&self, read: OpKind, t_prime: Time, k_star: BatchIndex) -> BatchIndex {
        (1..=k_star)
            .rev()
            .find(|&j| {
                let b = self.batch(j);
                b.promise <= t_prime
                    && (self.params.read_all_batches
                        || self
                            .object
                            .conflicts_with_any(read, b.ops.iter().map(|o| &o.kind)))
            })
            .unwrap_or(0)
    }

    /// Case `t' ≥ lease.start`: `k*` or the latest conflicting pending batch in
    /// `(k*, upper]` whose promise has passed.
    fn k_hat_beyond_lease(
        &self,
        read: OpKind,
        t_prime: Time,
        k_star: BatchIndex,
        upper: BatchIndex,
    ) -> BatchIndex {
        (k_star + 1..=upper)
            .rev()
            .find(|&j| {
                let p = self.pending(j);
                (!self.params.uses_promises() || p.promise <= t_prime)
                    && self
                        .object
                        .conflicts_with_any(read, p.ops.iter().map(|o| &o.kind))
            })
            .unwrap_or(k_star)
    }

    fn finish(
        &mut self,
        ctx: &mut StepContext<'_>,
        op: Operation,
        origin: Origin,
        value: Value,
        detail: ResponseDetail,
    ) -> Outcome {
        if self.params.step_cost > 0 {
            let until = ctx.now + self.params.step_cost;
            self.client = Client::Finishing {
                op,
                origin,
                value,
                detail,
                until,
            };
        } else {
            ctx.events.push(Event::Respond {
                op: op.id,
                op_kind: op.kind,
                origin,
                value,
                detail,
            });
        }
        Outcome::Progress
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leader::LeaderError;

    /// Never grants leadership; everyone trusts p0.
    struct Follower;

    impl Leadership for Follower {
        fn leader(&mut self, _caller: ProcessId, _now: Time) -> ProcessId {
            ProcessId(0)
        }
        fn am_leader(
            &mut self,
            _: ProcessId,
            _: Time,
            _: Time,
            _: Time,
        ) -> Result<bool, LeaderError> {
            Ok(false)
        }
    }

    fn op(issuer: usize, counter: u64, kind: OpKind) -> Operation {
        Operation {
            id: OpId {
                issuer: ProcessId(issuer),
                counter,
            },
            kind,
        }
    }

    fn batch(ops: &[Operation], promise: i64) -> Batch {
        Batch {
            ops: ops.iter().copied().collect(),
            promise: Time::new(promise),
        }
    }

    fn process(algorithm: Algorithm, object: ObjectType) -> Process {
        let mut params = ProtocolParams::new(algorithm, 10, 20);
        if algorithm == Algorithm::Alg2 {
            params.beta = Time::new(5);
        }
        Process::new(ProcessId(1), 3, params, object)
    }

    /// Delivers `msgs` from p0 and runs one step at local time `now`.
    fn step(
        p: &mut Process,
        now: i64,
        msgs: Vec<Message>,
    ) -> (Vec<(ProcessId, Message)>, Vec<Event>) {
        let mut leadership = Follower;
        let mut ctx = StepContext::new(Time::new(now), now, &mut leadership);
        for m in msgs {
            p.deliver(ProcessId(0), m);
        }
        p.tick(&mut ctx);
        (ctx.outbox, ctx.events)
    }

    fn write(v: i64) -> OpKind {
        OpKind::Write { value: v }
    }

    #[test]
    fn k_hat_before_lease_start_takes_latest_expired_promise() {
        let mut p = process(Algorithm::Alg1, ObjectType::Register);
        for (j, promise) in [(1, 0), (2, 5), (3, 9)] {
            p.batches
                .insert(j, batch(&[op(0, j as u64, write(j))], promise));
        }
        assert_eq!(p.k_hat_within_lease(OpKind::Read, Time::new(4), 3), 1);
        assert_eq!(p.k_hat_within_lease(OpKind::Read, Time::new(9), 3), 3);
    }

    #[test]
    fn k_hat_after_lease_start() {
        let mut p = process(Algorithm::Alg1, ObjectType::KeyPair);
        assert_eq!(p.k_hat_beyond_lease(OpKind::Read, Time::new(50), 3, 3), 3);
        p.pending.insert(
            4,
            batch(&[op(0, 1, OpKind::WriteKey { key: 0, value: 1 })], 40),
        );
        assert_eq!(
            p.k_hat_beyond_lease(OpKind::ReadKey { key: 0 }, Time::new(50), 3, 4),
            4
        );
        assert_eq!(
            p.k_hat_beyond_lease(OpKind::ReadKey { key: 1 }, Time::new(50), 3, 4),
            3
        );
        assert_eq!(
            p.k_hat_beyond_lease(OpKind::ReadKey { key: 0 }, Time::new(39), 3, 4),
            3
        );
    }

    #[test]
    fn batch_applies_ops_in_id_order() {
        let mut p = process(Algorithm::Alg1, ObjectType::Counter);
        let (a, b) = (op(2, 1, OpKind::FetchInc), op(1, 1, OpKind::FetchInc));
        p.states.insert(4, Value::Int(2));
        p.max_batch_done = 4;
        p.batches.insert(5, batch(&[a, b], 7));
        let mut leadership = Follower;
        let mut ctx = StepContext::new(Time::new(10), 10, &mut leadership);
        p.execute_up_to(&mut ctx, 5);
        assert_eq!(p.reply(b.id), Some(Value::Int(2)));
        assert_eq!(p.reply(a.id), Some(Value::Int(3)));
        assert_eq!(p.state_after(5), Some(Value::Int(4)));
        assert_eq!(p.max_batch_done(), 5);
    }

    #[test]
    fn noop_batch_keeps_state() {
        let mut p = process(Algorithm::Alg1, ObjectType::Counter);
        p.batches.insert(1, batch(&[op(0, 1, OpKind::NoOp)], 0));
        let mut leadership = Follower;
        let mut ctx = StepContext::new(Time::new(1), 1, &mut leadership);
        p.execute_up_to(&mut ctx, 1);
        assert_eq!(p.state_after(1), p.state_after(0));
    }

    #[test]
    fn stale_prepare_is_neither_accepted_nor_acked() {
        let mut p = process(Algorithm::Alg1, ObjectType::Register);
        let ops: OpSet = [op(0, 1, write(1))].into_iter().collect();
        let prepare = |ops: OpSet, t, j| Message::Prepare {
            ops,
            promise: Time::new(30),
            t: Time::new(t),
            j,
            prev: Batch::zero(),
        };
        let (out, _) = step(&mut p, 1, vec![prepare(ops.clone(), 5, 1)]);
        assert_eq!(
            out,
            vec![(
                ProcessId(0),
                Message::PAck {
                    t: Time::new(5),
                    j: 1
                }
            )]
        );
        let other: OpSet = [op(0, 2, write(2))].into_iter().collect();
        let (out, events) = step(&mut p, 2, vec![prepare(other, 5, 1)]);
        assert!(out.is_empty());
        assert!(!events.iter().any(|e| matches!(e, Event::Accept { .. })));
        assert_eq!(p.estimate().ops, ops);
    }

    #[test]
    fn newer_lease_for_same_batch_replaces_the_held_one() {
        let mut p = process(Algorithm::Alg1, ObjectType::Register);
        for j in 1..=5 {
            p.batches.insert(j, batch(&[op(0, j as u64, write(j))], 0));
        }
        p.lease = Lease {
            batch: 5,
            start: Time::new(30),
        };
        let commit = Message::CommitLease {
            batch: p.batch(5).clone(),
            j: 5,
            lease: Lease {
                batch: 5,
                start: Time::new(40),
            },
            holders: [ProcessId(1)].into(),
        };
        step(&mut p, 40, vec![commit]);
        assert_eq!(
            p.lease(),
            Lease {
                batch: 5,
                start: Time::new(40)
            }
        );
    }

    #[test]
    fn status_rounds_raise_the_pending_promise() {
        let mut p = process(Algorithm::Alg2, ObjectType::Register);
        let ops: OpSet = [op(0, 1, write(1))].into_iter().collect();
        let status = |s| Message::Status {
            ops: ops.clone(),
            promise: Time::new(s),
            t: Time::new(5),
            j: 1,
            prev: Batch::zero(),
        };
        step(&mut p, 1, vec![status(10)]);
        step(&mut p, 2, vec![status(15)]);
        assert_eq!(p.pending(1).promise, Time::new(15));
        step(&mut p, 3, vec![status(12)]);
        assert_eq!(p.pending(1).promise, Time::new(15));
    }
}

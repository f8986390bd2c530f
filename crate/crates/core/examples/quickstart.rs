//! Builds a three-process register in code, runs it, and prints what happened.

use promise_lease::analysis::{check_safety, History};
use promise_lease::sim::{Timing, WorkItem};
use promise_lease::{run, Algorithm, ObjectType, OpKind, ProcessId, ProtocolParams, Scenario};

fn main() {
    let timing = Timing::new(10);
    let protocol = ProtocolParams::new(Algorithm::Alg1, timing.delta, 2 * timing.delta);
    let mut scenario = Scenario::new(3, ObjectType::Register, timing, protocol);
    scenario.name = "quickstart".into();
    scenario.workload = vec![
        WorkItem {
            process: ProcessId(0),
            at: 200,
            op: OpKind::Write { value: 42 },
        },
        WorkItem {
            process: ProcessId(1),
            at: 205,
            op: OpKind::Read,
        },
        WorkItem {
            process: ProcessId(2),
            at: 260,
            op: OpKind::Read,
        },
    ];

    let trace = run(&scenario).expect("valid scenario");
    let history = History::from_trace(&trace).expect("well-formed trace");
    for op in history.completed().filter(|o| o.kind != OpKind::NoOp) {
        let resp = op.response.as_ref().unwrap();
        println!(
            "{} {:<9} invoked at {:>4}, returned {:?} after blocking {} ticks",
            op.process,
            op.kind.to_string(),
            op.invoke.real,
            resp.value,
            op.blocking().unwrap()
        );
    }
    let summary = trace.summary();
    println!(
        "{} messages, {} batches locked",
        summary.messages_sent, summary.batches_locked
    );
    let safety = check_safety(&trace);
    println!(
        "safety: {}",
        if safety.passed() {
            "all invariants hold"
        } else {
            "VIOLATED"
        }
    );
    assert!(safety.passed());
}

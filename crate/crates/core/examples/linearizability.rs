//! Cross-checks the two linearizability checkers on a run, and shows the
//! exhaustive checker rejecting a stale read.

use promise_lease::analysis::{check_brute_force, check_witness, BruteVerdict, History, HistoryOp};
use promise_lease::sim::{Timing, WorkItem};
use promise_lease::{
    run, Algorithm, ObjectType, OpKind, ProcessId, ProtocolParams, Scenario, Value,
};

fn main() {
    let timing = Timing::new(8);
    let mut protocol = ProtocolParams::new(Algorithm::Alg2, timing.delta, 4);
    protocol.beta = 4.into();
    let mut scenario = Scenario::new(3, ObjectType::Counter, timing, protocol);
    scenario.workload = (0..8)
        .map(|i| WorkItem {
            process: ProcessId(i % 3),
            at: 150 + 7 * i as i64,
            op: if i % 2 == 0 {
                OpKind::FetchInc
            } else {
                OpKind::Read
            },
        })
        .collect();
    let trace = run(&scenario).expect("valid scenario");
    let history = History::from_trace(&trace).expect("well-formed trace");
    let witness =
        check_witness(&trace, &history).expect("the protocol's own order explains the run");
    println!("witness order:");
    for e in &witness.order {
        println!(
            "  {:?} {} (takes effect at {})",
            e.op, e.kind, e.takes_effect
        );
    }
    match check_brute_force(&history, scenario.object, 12) {
        BruteVerdict::Linearizable { order } => {
            println!("exhaustive search agrees: {} ops ordered", order.len())
        }
        other => panic!("exhaustive search disagrees: {other:?}"),
    }

    // A write completes, then a later read returns the old value.
    let stale = History::new(vec![
        HistoryOp::completed(0, 1, OpKind::Write { value: 1 }, 0, 1, Value::Ack),
        HistoryOp::completed(1, 1, OpKind::Read, 2, 3, Value::Int(0)),
    ])
    .expect("well-formed history");
    let verdict = check_brute_force(&stale, ObjectType::Register, 12);
    println!("stale read history: {verdict:?}");
    assert_eq!(verdict.is_linearizable(), Some(false));
}

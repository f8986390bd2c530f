//! Runs with heartbeat-based leader election instead of a scripted arbiter
//! and prints who held leadership when.

use promise_lease::analysis::{check_safety, History};
use promise_lease::leader::LeadershipConfig;
use promise_lease::sim::{Crash, Generator, Timing};
use promise_lease::{run, Algorithm, ObjectType, OpKind, ProcessId, ProtocolParams, Scenario};

fn main() {
    let mut timing = Timing::new(10);
    timing.gst = 300;
    let protocol = ProtocolParams::new(Algorithm::Alg1, timing.delta, 20);
    let mut scenario = Scenario::new(5, ObjectType::Counter, timing, protocol);
    scenario.leadership = LeadershipConfig::Heartbeat {
        period: None,
        timeout: None,
    };
    // The process every other one would elect first crashes before GST.
    scenario.crashes = vec![Crash {
        process: ProcessId(0),
        at: 250,
    }];
    scenario.generators = (1..5)
        .map(|p| Generator {
            process: ProcessId(p),
            start: 10,
            stop: 900,
            count: None,
            think: 15,
            ops: vec![OpKind::FetchInc, OpKind::Read],
        })
        .collect();
    scenario.horizon = 2500;

    let trace = run(&scenario).expect("valid scenario");
    for g in &trace.footer.grants {
        println!("{} led over local times [{}, {}]", g.process, g.from, g.to);
    }
    let history = History::from_trace(&trace).expect("well-formed trace");
    println!(
        "{} operations completed, {} heartbeats",
        history.completed().count(),
        trace.footer.heartbeats_sent
    );
    assert!(check_safety(&trace).passed());
}

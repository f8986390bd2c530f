//! Replays the skewed-clock scenario with and without the extra ε waits.

use std::path::Path;

use promise_lease::analysis::{check_brute_force, check_witness, History};
use promise_lease::{run, Scenario};

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    for name in ["epsilon-counterexample", "epsilon-counterexample-no-waits"] {
        let scenario = Scenario::load(&dir.join(format!("{name}.toml"))).expect("curated scenario");
        let trace = run(&scenario).expect("valid scenario");
        let history = History::from_trace(&trace).expect("well-formed trace");
        let witness = check_witness(&trace, &history);
        let brute = check_brute_force(&history, scenario.object, 12);
        println!("{name}: offsets {:?}", trace.header.clock_offsets);
        for op in history.completed().filter(|o| o.kind.is_read()) {
            let r = op.response.as_ref().unwrap();
            println!(
                "  {} read at real {} returned {:?} at real {}",
                op.process, op.invoke.real, r.value, r.at.real
            );
        }
        match &witness {
            Ok(_) => println!("  linearizable"),
            Err(e) => println!("  not linearizable: {e}"),
        }
        assert_eq!(witness.is_ok(), scenario.protocol.epsilon_waits);
        assert_eq!(
            brute.is_linearizable(),
            Some(scenario.protocol.epsilon_waits)
        );
    }
}

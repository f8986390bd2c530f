//! Audits randomized chaotic runs for safety, linearizability and liveness.
//!
//! Usage: `safety_audit [runs]` (default 50).

use promise_lease::analysis::{
    check_linearizable, check_liveness, check_safety, History, BRUTE_FORCE_CAP,
};
use promise_lease::run;
use promise_lease::sim::{random_scenario, RandomConfig};

fn main() {
    let runs: u64 = std::env::args()
        .nth(1)
        .map_or(50, |s| s.parse().expect("run count"));
    let config = RandomConfig::default();
    let mut failures = 0;
    for seed in 0..runs {
        let scenario = random_scenario(seed, &config);
        let trace = run(&scenario).expect("generated scenarios are valid");
        let safety = check_safety(&trace);
        let history = History::from_trace(&trace).expect("well-formed trace");
        let lin = check_linearizable(&trace, &history, BRUTE_FORCE_CAP);
        let live = check_liveness(&trace);
        if !(safety.passed() && lin.passed() && live.passed()) {
            failures += 1;
            println!(
                "seed {seed}: safety {} linearizable {} live {}",
                safety.passed(),
                lin.passed(),
                live.passed()
            );
            print!("{safety}");
        }
    }
    println!("{runs} randomized runs, {failures} failures");
    assert_eq!(failures, 0);
}

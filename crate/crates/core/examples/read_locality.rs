//! Shows that reads are served locally: adding 1000 reads to a run does not
//! change how many messages it sends.

use std::path::Path;

use promise_lease::{run, Scenario};

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let mut counts = Vec::new();
    for name in ["read-locality-0", "read-locality-1000"] {
        let scenario = Scenario::load(&dir.join(format!("{name}.toml"))).expect("curated scenario");
        let summary = run(&scenario).expect("valid scenario").summary();
        println!(
            "{name}: {} reads completed, {} messages sent",
            summary.reads_completed, summary.messages_sent
        );
        counts.push(summary.messages_sent);
    }
    assert_eq!(counts[0], counts[1]);
}

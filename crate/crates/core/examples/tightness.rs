//! Scripted worst cases: each drives a read's blocking time to its bound.

use std::path::Path;

use promise_lease::analysis::{check_bounds, BoundsConfig, OpClass, Period};
use promise_lease::{run, Scenario};

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    for name in [
        "tightness-cht",
        "tightness-alg1-alpha2d",
        "tightness-alg2-alpha-beta-2dstar",
    ] {
        let scenario = Scenario::load(&dir.join(format!("{name}.toml"))).expect("curated scenario");
        let report = check_bounds(
            &run(&scenario).expect("valid scenario"),
            &BoundsConfig::default(),
        );
        let row = report
            .row(Period::Stable, OpClass::Read)
            .expect("stable read row");
        let (measured, bound) = (
            row.measured.expect("one read"),
            row.bound.expect("in range"),
        );
        println!("{name}: read blocked {measured} ticks, bound {bound}");
        assert!(measured <= bound && measured + 1 >= bound);
    }
}

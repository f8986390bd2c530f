//! Sweeps the table columns over a few seeds and renders both tables.

use std::path::Path;

use promise_lease::analysis::sweep::{
    nonblocking_read_columns, read_speedup_columns, render_table, run_sweep, table_cells,
};
use promise_lease::analysis::BoundsConfig;
use promise_lease::Scenario;

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/alg1-alpha2d.toml");
    let template = Scenario::load(&path).expect("curated scenario");
    let (d, ds) = (template.timing.delta, template.timing.delta_star());
    let seeds: Vec<u64> = (0..4).collect();
    let results = run_sweep(
        &template,
        &table_cells(d, ds),
        &seeds,
        &BoundsConfig::default(),
    );
    for (title, columns) in [
        ("Read speedup", read_speedup_columns(d, ds)),
        ("Non-blocking reads", nonblocking_read_columns(d, ds)),
    ] {
        println!("{title}");
        render_table(&results, &columns, std::io::stdout()).expect("stdout");
    }
    assert!(
        results.iter().all(|r| r.clean()),
        "a cell exceeded its bound or failed a check"
    );
}

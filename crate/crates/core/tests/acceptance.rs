//! The ten acceptance criteria, one test each. Every test prints a single
//! `[PASS]` or `[FAIL]` line; tolerances are the constants below.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rayon::prelude::*;

use promise_lease::analysis::{
    blocking_times, check_bounds, check_brute_force, check_linearizable, check_liveness,
    check_safety, BoundsConfig, BucketVerdict, History, HistoryOp, OpClass, Period,
};
use promise_lease::protocol::BatchIndex;
use promise_lease::sim::{random_scenario, RandomConfig};
use promise_lease::trace::Event;
use promise_lease::{run, Algorithm, ObjectType, OpKind, Scenario, Time, Trace, Value};

/// Randomized runs for the safety, linearizability and liveness suites.
const RANDOM_RUNS: u64 = 500;
/// Randomized runs with δ underestimated by half.
const UNDERESTIMATED_RUNS: u64 = 200;
/// Seeds per table column.
const TABLE_SEEDS: u64 = 20;
/// Ticks a measured maximum may exceed its table cell.
const TABLE_TOLERANCE: i64 = 0;
/// Ticks a tightness witness may fall short of its bound.
const TIGHTNESS_TOLERANCE: i64 = 1;
/// Exhaustive checking is applied to histories up to this many completed ops.
const BRUTE_FORCE_CAP: usize = 12;
/// Start of the drained part of a nice period, in multiples of δ.
const NICE_MARGIN_DELTAS: i64 = 4;
/// Shared seeds for the reduction comparisons.
const REDUCTION_SEEDS: u64 = 50;

fn report(n: u32, what: &str, outcome: Result<String, String>) {
    match outcome {
        Ok(detail) => println!("[PASS] criterion {n}: {what}: {detail}"),
        Err(detail) => {
            println!("[FAIL] criterion {n}: {what}: {detail}");
            panic!("criterion {n} failed: {detail}");
        }
    }
}

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.toml"))
}

fn load(name: &str) -> Scenario {
    Scenario::load(&scenario_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn run_seeded(template: &Scenario, seed: u64) -> Trace {
    let mut s = template.clone();
    s.seed = seed;
    run(&s).unwrap_or_else(|e| panic!("{} seed {seed}: {e}", s.name))
}

struct RandomOutcome {
    seed: u64,
    n: usize,
    crashes: usize,
    safety_violations: Vec<String>,
    witness: Result<(), String>,
    /// `None` when the history exceeded the cap.
    brute_force: Option<bool>,
    live: bool,
    horizon_ok: bool,
}

fn audit(seed: u64, config: &RandomConfig) -> RandomOutcome {
    let scenario = random_scenario(seed, config);
    let trace = run(&scenario).expect("generated scenarios are valid");
    let safety = check_safety(&trace);
    let history = History::from_trace(&trace).expect("well-formed trace");
    let lin = check_linearizable(&trace, &history, BRUTE_FORCE_CAP);
    let lambda = scenario.protocol.lambda;
    RandomOutcome {
        seed,
        n: scenario.n,
        crashes: scenario.crashes.len(),
        safety_violations: safety.violations().map(|v| v.name.to_string()).collect(),
        witness: lin.witness.map(|_| ()).map_err(|e| e.to_string()),
        brute_force: lin.brute_force.is_linearizable(),
        live: check_liveness(&trace).passed(),
        horizon_ok: scenario.horizon >= scenario.timing.gst + 20 * (scenario.timing.delta + lambda),
    }
}

fn random_suite() -> &'static [RandomOutcome] {
    static SUITE: OnceLock<Vec<RandomOutcome>> = OnceLock::new();
    SUITE.get_or_init(|| {
        let config = RandomConfig::default();
        (0..RANDOM_RUNS)
            .into_par_iter()
            .map(|seed| audit(seed, &config))
            .collect()
    })
}

fn first_seeds(seeds: impl Iterator<Item = u64>) -> String {
    let v: Vec<String> = seeds.take(5).map(|s| s.to_string()).collect();
    v.join(", ")
}

#[test]
fn criterion_1_safety_suite() {
    let suite = random_suite();
    let outcome = (|| {
        for n in [3, 5, 7] {
            if !suite.iter().any(|o| o.n == n) {
                return Err(format!("no run with n = {n}"));
            }
        }
        if let Some(o) = suite.iter().find(|o| o.crashes > (o.n - 1) / 2) {
            return Err(format!("seed {} crashes a majority", o.seed));
        }
        let bad: Vec<&RandomOutcome> = suite
            .iter()
            .filter(|o| !o.safety_violations.is_empty())
            .collect();
        if let Some(o) = bad.first() {
            return Err(format!(
                "{} runs violate safety, first seed {}: {:?}",
                bad.len(),
                o.seed,
                o.safety_violations
            ));
        }
        let crashed = suite.iter().filter(|o| o.crashes > 0).count();
        Ok(format!(
            "{} randomized runs ({crashed} with crashes), zero violations",
            suite.len()
        ))
    })();
    report(1, "safety over randomized adversarial runs", outcome);
}

fn non_linearizable_histories() -> Vec<(&'static str, ObjectType, History)> {
    let write = |v| OpKind::Write { value: v };
    vec![
        (
            "stale read after a completed write",
            ObjectType::Register,
            History::new(vec![
                HistoryOp::completed(0, 1, write(1), 0, 1, Value::Ack),
                HistoryOp::completed(1, 1, OpKind::Read, 2, 3, Value::Int(0)),
            ])
            .unwrap(),
        ),
        (
            "two increments return the same value",
            ObjectType::Counter,
            History::new(vec![
                HistoryOp::completed(0, 1, OpKind::FetchInc, 0, 3, Value::Int(0)),
                HistoryOp::completed(1, 1, OpKind::FetchInc, 1, 2, Value::Int(0)),
            ])
            .unwrap(),
        ),
        (
            "reads observe concurrent writes in opposite orders",
            ObjectType::Register,
            History::new(vec![
                HistoryOp::completed(0, 1, write(1), 0, 9, Value::Ack),
                HistoryOp::completed(1, 1, write(2), 0, 9, Value::Ack),
                HistoryOp::completed(2, 1, OpKind::Read, 1, 2, Value::Int(1)),
                HistoryOp::completed(2, 2, OpKind::Read, 3, 4, Value::Int(2)),
                HistoryOp::completed(3, 1, OpKind::Read, 5, 6, Value::Int(1)),
            ])
            .unwrap(),
        ),
    ]
}

#[test]
fn criterion_2_linearizability() {
    let suite = random_suite();
    let outcome = (|| {
        if let Some(o) = suite.iter().find(|o| o.witness.is_err()) {
            return Err(format!(
                "seed {} fails the witness checker: {:?}",
                o.seed, o.witness
            ));
        }
        if let Some(o) = suite.iter().find(|o| o.brute_force == Some(false)) {
            return Err(format!("seed {} fails the exhaustive checker", o.seed));
        }
        let exhaustive = suite.iter().filter(|o| o.brute_force.is_some()).count();
        for (name, object, history) in non_linearizable_histories() {
            if check_brute_force(&history, object, BRUTE_FORCE_CAP).is_linearizable() != Some(false)
            {
                return Err(format!("exhaustive checker accepted: {name}"));
            }
        }
        Ok(format!(
            "{} runs pass the witness checker, {exhaustive} also checked exhaustively, 3 bad histories rejected",
            suite.len()
        ))
    })();
    report(2, "linearizability", outcome);
}

const CURATED: &[&str] = &[
    "cht",
    "alg1-alpha2d",
    "alg2-alpha-beta-2dstar",
    "alg1-alpha3d",
    "alg2-alpha-beta-3dstar",
    "alg2-alpha-d-plus-3dstar",
    "pre-gst-chaos",
    "crash-leaseholder",
    "delta-underestimated",
    "delta-star-misconfigured",
    "read-locality-0",
    "read-locality-1000",
    "reduction-cht",
    "reduction-alg1",
    "reduction-alg2",
    "epsilon-alg1-alpha3d",
    "epsilon-alg2-alpha-d-plus-beta",
    "epsilon-counterexample",
];

#[test]
fn criterion_3_liveness() {
    let suite = random_suite();
    let outcome = (|| {
        if let Some(o) = suite.iter().find(|o| !o.horizon_ok) {
            return Err(format!(
                "seed {} has a horizon below gst + 20(δ + λ)",
                o.seed
            ));
        }
        let stuck: Vec<u64> = suite.iter().filter(|o| !o.live).map(|o| o.seed).collect();
        if !stuck.is_empty() {
            return Err(format!(
                "{} runs left operations pending, seeds {}",
                stuck.len(),
                first_seeds(stuck.into_iter())
            ));
        }
        for name in CURATED {
            let scenario = load(name);
            let trace = run(&scenario).unwrap();
            let live = check_liveness(&trace);
            if !live.passed() {
                return Err(format!("{name}: stuck {:?}", live.stuck));
            }
        }
        Ok(format!(
            "{} randomized and {} curated runs complete every request",
            suite.len(),
            CURATED.len()
        ))
    })();
    report(3, "liveness", outcome);
}

/// Expected cell, measured maximum over all seeds.
struct Cell {
    period: Period,
    op: OpClass,
    bound: i64,
}

fn column_maxima(name: &str, cells: &[Cell]) -> Result<String, String> {
    let template = load(name);
    let traces: Vec<Trace> = (0..TABLE_SEEDS)
        .into_par_iter()
        .map(|seed| run_seeded(&template, seed))
        .collect();
    let mut parts = Vec::new();
    for cell in cells {
        let mut max = None;
        for (seed, trace) in traces.iter().enumerate() {
            if !check_safety(trace).passed() {
                return Err(format!("{name} seed {seed} violates safety"));
            }
            max = max.max(blocking_times(trace).max(cell.period, cell.op));
        }
        let max = max
            .ok_or_else(|| format!("{name}: no {} {} operations measured", cell.period, cell.op))?;
        if max > cell.bound + TABLE_TOLERANCE {
            return Err(format!(
                "{name}: {} {} blocked {max} > {}",
                cell.period, cell.op, cell.bound
            ));
        }
        parts.push(format!("{} {} {max}<={}", cell.period, cell.op, cell.bound));
    }
    Ok(format!("{name} [{}]", parts.join(", ")))
}

fn cell(period: Period, op: OpClass, bound: i64) -> Cell {
    Cell { period, op, bound }
}

fn tightness(name: &str) -> Result<String, String> {
    let scenario = load(name);
    let trace = run(&scenario).unwrap();
    let report = check_bounds(&trace, &BoundsConfig::default());
    let row = report
        .row(Period::Stable, OpClass::Read)
        .ok_or("no stable read row")?;
    let (Some(measured), Some(bound)) = (row.measured, row.bound) else {
        return Err(format!("{name}: no measurement"));
    };
    if row.verdict != BucketVerdict::Pass || measured + TIGHTNESS_TOLERANCE < bound {
        return Err(format!("{name}: read blocked {measured}, bound {bound}"));
    }
    Ok(format!("{name} {measured}/{bound}"))
}

fn collect(results: Vec<Result<String, String>>) -> Result<String, String> {
    let mut ok = Vec::new();
    for r in results {
        ok.push(r?);
    }
    Ok(ok.join("; "))
}

#[test]
fn criterion_4_table_1() {
    use OpClass::{Read, Rmw};
    use Period::{Nice, Stable};
    let (d, ds) = (12, 2);
    let outcome = collect(vec![
        column_maxima(
            "cht",
            &[
                cell(Stable, Rmw, 2 * d),
                cell(Stable, Read, 3 * d),
                cell(Nice, Rmw, 2 * ds),
                cell(Nice, Read, 3 * ds),
            ],
        ),
        column_maxima(
            "alg1-alpha2d",
            &[cell(Stable, Read, d), cell(Nice, Read, 0)],
        ),
        column_maxima(
            "alg2-alpha-beta-2dstar",
            &[
                cell(Stable, Rmw, 2 * d),
                cell(Nice, Rmw, 2 * ds),
                cell(Stable, Read, d),
                cell(Nice, Read, ds),
            ],
        ),
        tightness("tightness-cht"),
        tightness("tightness-alg1-alpha2d"),
        tightness("tightness-alg2-alpha-beta-2dstar"),
    ]);
    report(4, "first blocking-time table", outcome);
}

#[test]
fn criterion_5_table_2() {
    use OpClass::{Read, Rmw};
    use Period::{Nice, Stable};
    let (d, ds) = (12, 2);
    let outcome = collect(vec![
        column_maxima(
            "alg1-alpha3d",
            &[cell(Stable, Read, 0), cell(Nice, Read, 0)],
        ),
        column_maxima(
            "alg2-alpha-beta-3dstar",
            &[
                cell(Stable, Read, d),
                cell(Nice, Read, 0),
                cell(Nice, Rmw, 3 * ds),
            ],
        ),
        column_maxima(
            "alg2-alpha-d-plus-3dstar",
            &[
                cell(Stable, Read, 0),
                cell(Nice, Read, 0),
                cell(Nice, Rmw, d + 3 * ds),
            ],
        ),
    ]);
    report(5, "second blocking-time table", outcome);
}

#[test]
fn criterion_6_epsilon_mode() {
    let outcome = (|| {
        let mut parts = Vec::new();
        for name in ["epsilon-alg1-alpha3d", "epsilon-alg2-alpha-d-plus-beta"] {
            let template = load(name);
            let eps = template.timing.epsilon;
            let offsets = template.normalized_offsets();
            if eps == 0 || offsets.iter().max().copied() != Some(eps) {
                return Err(format!("{name} does not use extreme offsets"));
            }
            let mut max = 0;
            for seed in 0..TABLE_SEEDS {
                let trace = run_seeded(&template, seed);
                if !check_safety(&trace).passed() {
                    return Err(format!("{name} seed {seed} violates safety"));
                }
                let history = History::from_trace(&trace).unwrap();
                if !check_linearizable(&trace, &history, BRUTE_FORCE_CAP).passed() {
                    return Err(format!("{name} seed {seed} is not linearizable"));
                }
                let report = blocking_times(&trace);
                for period in [Period::Stable, Period::Nice] {
                    max = max.max(report.max(period, OpClass::Read).unwrap_or(0));
                }
            }
            if max > eps + TABLE_TOLERANCE {
                return Err(format!("{name}: reads blocked {max} > ε = {eps}"));
            }
            parts.push(format!("{name} read max {max}<={eps}"));
        }
        let trace = run(&load("epsilon-counterexample")).unwrap();
        let history = History::from_trace(&trace).unwrap();
        if !check_linearizable(&trace, &history, BRUTE_FORCE_CAP).passed() {
            return Err("the skewed-clock construction is not linearizable".into());
        }
        // Without the extra ε waits the same construction must break, or the
        // scenario is not exercising the skew.
        let trace = run(&load("epsilon-counterexample-no-waits")).unwrap();
        let history = History::from_trace(&trace).unwrap();
        if check_brute_force(&history, trace.header.scenario.object, BRUTE_FORCE_CAP)
            .is_linearizable()
            != Some(false)
        {
            return Err("the construction stays linearizable without ε waits".into());
        }
        parts.push("skewed-clock construction linearizable, and broken without waits".into());
        Ok(parts.join("; "))
    })();
    report(6, "skewed clocks", outcome);
}

#[test]
fn criterion_7_read_locality() {
    let outcome = (|| {
        let without = run(&load("read-locality-0")).unwrap().summary();
        let with = run(&load("read-locality-1000")).unwrap().summary();
        if without.reads_completed != 0 || with.reads_completed != 1000 {
            return Err(format!(
                "reads completed {} and {}",
                without.reads_completed, with.reads_completed
            ));
        }
        if without.messages_sent != with.messages_sent {
            return Err(format!(
                "{} vs {} messages",
                without.messages_sent, with.messages_sent
            ));
        }
        Ok(format!(
            "{} messages with 0 reads and with 1000 reads",
            with.messages_sent
        ))
    })();
    report(7, "read locality", outcome);
}

fn same_records(a: &Scenario, b: &Scenario, seed: u64) -> Result<(), String> {
    let (ta, tb) = (run_seeded(a, seed), run_seeded(b, seed));
    let (la, lb) = (ta.record_lines(), tb.record_lines());
    if la == lb {
        return Ok(());
    }
    let at = la
        .iter()
        .zip(&lb)
        .position(|(x, y)| x != y)
        .unwrap_or(la.len().min(lb.len()));
    Err(format!(
        "{} vs {} seed {seed} diverge at record {at}",
        a.name, b.name
    ))
}

#[test]
fn criterion_8_reductions() {
    let outcome = (|| {
        let cht = load("reduction-cht");
        let alg1 = load("reduction-alg1");
        let alg2 = load("reduction-alg2");
        if alg1.protocol.alpha != 0 || alg2.protocol.beta != Time::INFINITY {
            return Err("reduction scenarios are misconfigured".into());
        }
        for seed in 0..REDUCTION_SEEDS {
            same_records(&cht, &alg1, seed)?;
            same_records(&alg1, &alg2, seed)?;
        }
        // The same on randomized adversarial scenarios.
        for seed in 0..REDUCTION_SEEDS {
            let mut base = random_scenario(
                seed,
                &RandomConfig {
                    algorithm: Some(Algorithm::Alg1),
                    ..Default::default()
                },
            );
            let mut to_cht = base.clone();
            base.protocol.alpha = 0;
            to_cht.protocol.algorithm = Algorithm::Cht;
            to_cht.protocol.alpha = 0;
            base.name = "random-alg1".into();
            to_cht.name = base.name.clone();
            same_records(&to_cht, &base, seed)?;
            let alg1 = random_scenario(
                seed,
                &RandomConfig {
                    algorithm: Some(Algorithm::Alg1),
                    ..Default::default()
                },
            );
            let mut alg2 = alg1.clone();
            alg2.protocol.algorithm = Algorithm::Alg2;
            alg2.protocol.beta = Time::INFINITY;
            same_records(&alg1, &alg2, seed)?;
        }
        Ok(format!(
            "identical records for {REDUCTION_SEEDS} seeds on the curated triple and on {REDUCTION_SEEDS} random pairs each"
        ))
    })();
    report(8, "reductions", outcome);
}

/// Batches whose whole commit, from start to lock, lies inside one nice
/// period, with the number of status rounds each used. As for blocking
/// times, a batch counts only once messages sent before the period have
/// drained, i.e. from `NICE_MARGIN_DELTAS`·δ after the period starts.
fn status_rounds_in_nice_batches(trace: &Trace) -> Vec<(BatchIndex, u32)> {
    let scenario = &trace.header.scenario;
    let margin = NICE_MARGIN_DELTAS * scenario.timing.delta;
    let mut started = std::collections::BTreeMap::new();
    let mut rounds = std::collections::BTreeMap::<BatchIndex, u32>::new();
    let mut out = Vec::new();
    for r in &trace.records {
        match &r.event {
            Event::DoOpsStart {
                j, status: true, ..
            } => {
                started.insert(*j, r.real);
                rounds.insert(*j, 0);
            }
            Event::StatusRound { j, .. } => *rounds.entry(*j).or_default() += 1,
            Event::Lock {
                j, recommit: false, ..
            } => {
                if let Some(start) = started.remove(j) {
                    let inside = scenario.nice_periods.iter().any(|p| {
                        p.contains(start) && start >= p.start + margin && p.contains(r.real)
                    });
                    if inside {
                        out.push((*j, rounds[j]));
                    }
                }
            }
            _ => {}
        }
    }
    out
}

#[test]
fn criterion_9_status_economy() {
    let outcome = (|| {
        let mut total = 0;
        for name in [
            "alg2-alpha-beta-2dstar",
            "alg2-alpha-beta-3dstar",
            "alg2-alpha-d-plus-3dstar",
        ] {
            let template = load(name);
            let beta = template.protocol.beta.ticks().ok_or("finite β")?;
            if beta < 2 * template.timing.delta_star() {
                return Err(format!("{name}: β below 2δ*"));
            }
            for seed in 0..TABLE_SEEDS {
                let batches = status_rounds_in_nice_batches(&run_seeded(&template, seed));
                if let Some((j, n)) = batches.iter().find(|(_, n)| *n != 1) {
                    return Err(format!(
                        "{name} seed {seed}: batch {j} used {n} status rounds"
                    ));
                }
                total += batches.len();
            }
        }
        if total == 0 {
            return Err("no batch committed within a nice period".into());
        }
        Ok(format!(
            "{total} batches committed inside nice periods, one status round each"
        ))
    })();
    report(9, "status economy", outcome);
}

#[test]
fn criterion_10_robustness() {
    let outcome = (|| {
        let config = RandomConfig {
            delta_underestimate: 2,
            ..Default::default()
        };
        let bad: Vec<u64> = (0..UNDERESTIMATED_RUNS)
            .into_par_iter()
            .filter(|&seed| {
                let o = audit(seed, &config);
                !o.safety_violations.is_empty()
                    || o.witness.is_err()
                    || o.brute_force == Some(false)
            })
            .collect();
        if !bad.is_empty() {
            return Err(format!(
                "δ underestimated: seeds {} unsafe",
                first_seeds(bad.into_iter())
            ));
        }
        let under = run(&load("delta-underestimated")).unwrap();
        if under.header.scenario.protocol.delta * 2 != under.header.scenario.timing.delta {
            return Err("delta-underestimated does not halve δ".into());
        }
        if !check_safety(&under).passed() {
            return Err("delta-underestimated violates safety".into());
        }
        let template = load("delta-star-misconfigured");
        for seed in 0..TABLE_SEEDS {
            let trace = run_seeded(&template, seed);
            let history = History::from_trace(&trace).unwrap();
            if !check_safety(&trace).passed()
                || !check_linearizable(&trace, &history, BRUTE_FORCE_CAP).passed()
            {
                return Err(format!("δ* misconfigured: seed {seed} unsafe"));
            }
            if !check_liveness(&trace).passed() {
                return Err(format!("δ* misconfigured: seed {seed} not live"));
            }
        }
        Ok(format!(
            "{UNDERESTIMATED_RUNS} randomized runs with δ halved are safe; δ* misconfigured is safe and live over {TABLE_SEEDS} seeds"
        ))
    })();
    report(10, "robustness to misestimated timing", outcome);
}

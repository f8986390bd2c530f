//! Property tests of the object model, orders, bounds, checkers and
//! simulator invariants, against oracles written independently here.

use std::collections::BTreeSet;

use proptest::prelude::*;

use promise_lease::analysis::{
    check_brute_force, check_linearizable, check_safety, theoretical_bound, BoundQuery, History,
    HistoryOp, OpClass, Period,
};
use promise_lease::protocol::{lease_compare, op_order, Lease, OpId, Operation};
use promise_lease::sim::{random_scenario, RandomConfig};
use promise_lease::trace::Event;
use promise_lease::{run, Algorithm, ObjectType, OpKind, ProcessId, Scenario, Time, Trace, Value};

fn object() -> impl Strategy<Value = ObjectType> {
    prop::sample::select(ObjectType::ALL.to_vec())
}

/// States `0..=3` for integer objects and all pairs over `0..=3` otherwise.
fn small_states(object: ObjectType) -> Vec<Value> {
    match object {
        ObjectType::KeyPair => (0..=3)
            .flat_map(|a| (0..=3).map(move |b| Value::Pair(a, b)))
            .collect(),
        _ => (0..=3).map(Value::Int).collect(),
    }
}

/// Conflict by definition: some state distinguishes the read's response
/// before and after the RMW.
fn conflict_oracle(object: ObjectType, read: OpKind, rmw: OpKind) -> bool {
    small_states(object).into_iter().any(|s| {
        let (_, before) = object.apply(s, read).unwrap();
        let (after_state, _) = object.apply(s, rmw).unwrap();
        let (_, after) = object.apply(after_state, read).unwrap();
        before != after
    })
}

#[test]
fn declared_conflicts_match_the_definition() {
    for object in ObjectType::ALL {
        let alphabet = object.op_alphabet();
        for &read in alphabet.iter().filter(|o| o.is_read()) {
            for &rmw in alphabet.iter().filter(|o| !o.is_read()) {
                assert_eq!(
                    object.conflicts(read, rmw).unwrap(),
                    conflict_oracle(object, read, rmw),
                    "{object}: {read} vs {rmw}"
                );
            }
        }
    }
}

#[test]
fn frozen_conflict_values() {
    // Values computed by `conflict_oracle` and frozen.
    let r = ObjectType::Register;
    assert!(r
        .conflicts(OpKind::Read, OpKind::Write { value: 1 })
        .unwrap());
    assert!(!r.conflicts(OpKind::Read, OpKind::NoOp).unwrap());
    assert!(ObjectType::Counter
        .conflicts(OpKind::Read, OpKind::FetchInc)
        .unwrap());
    assert!(!ObjectType::CasCell
        .conflicts(OpKind::Read, OpKind::Cas { expect: 1, new: 1 })
        .unwrap());
    let kp = ObjectType::KeyPair;
    assert!(!kp
        .conflicts(
            OpKind::ReadKey { key: 0 },
            OpKind::WriteKey { key: 1, value: 2 }
        )
        .unwrap());
}

proptest! {
    #[test]
    fn reads_never_change_state(object in object(), pick in any::<prop::sample::Index>(), s in any::<prop::sample::Index>()) {
        let reads: Vec<OpKind> = object.op_alphabet().into_iter().filter(|o| o.is_read()).collect();
        let states = small_states(object);
        let state = *s.get(&states);
        let (next, _) = object.apply(state, *pick.get(&reads)).unwrap();
        prop_assert_eq!(next, state);
    }

    #[test]
    fn noop_is_identity(object in object(), s in any::<prop::sample::Index>()) {
        let states = small_states(object);
        let state = *s.get(&states);
        prop_assert_eq!(object.apply(state, OpKind::NoOp).unwrap().0, state);
    }

    #[test]
    fn op_order_is_lexicographic_on_ids(a in (0usize..4, 0u64..6), b in (0usize..4, 0u64..6)) {
        let op = |(p, c): (usize, u64)| Operation { id: OpId { issuer: ProcessId(p), counter: c }, kind: OpKind::Read };
        prop_assert_eq!(op_order(&op(a), &op(b)), a.cmp(&b));
    }

    #[test]
    fn lease_order_is_lexicographic(a in (0i64..5, -3i64..50), b in (0i64..5, -3i64..50)) {
        let lease = |(j, s): (i64, i64)| Lease { batch: j, start: Time::new(s) };
        prop_assert_eq!(lease_compare(&lease(a), &lease(b)), a.cmp(&b));
        prop_assert_eq!(lease_compare(&Lease::initial(), &lease(a)), std::cmp::Ordering::Less);
    }

    #[test]
    fn time_roundtrips_through_json(t in prop_oneof![Just(Time::INFINITY), Just(Time::NEG_INFINITY), (-1_000_000i64..1_000_000).prop_map(Time::new)]) {
        let text = serde_json::to_string(&t).unwrap();
        prop_assert_eq!(serde_json::from_str::<Time>(&text).unwrap(), t);
    }
}

fn query(algorithm: Algorithm, period: Period, op: OpClass, alpha: i64, beta: Time) -> BoundQuery {
    BoundQuery {
        algorithm,
        period,
        op,
        alpha,
        beta,
        delta: 12,
        delta_star: 2,
        epsilon: 0,
        strict: false,
    }
}

#[test]
fn published_cells() {
    let d = 12;
    let inf = Time::INFINITY;
    let cell = |q: BoundQuery| theoretical_bound(&q).unwrap();
    assert_eq!(
        cell(query(
            Algorithm::Alg1,
            Period::Stable,
            OpClass::Read,
            2 * d,
            inf
        )),
        d
    );
    assert_eq!(
        cell(query(
            Algorithm::Alg1,
            Period::Nice,
            OpClass::Read,
            3 * d,
            inf
        )),
        0
    );
    assert_eq!(
        cell(query(
            Algorithm::Alg2,
            Period::Stable,
            OpClass::Rmw,
            8,
            Time::new(8)
        )),
        2 * d
    );
    assert_eq!(
        cell(query(
            Algorithm::Alg1,
            Period::Stable,
            OpClass::Read,
            0,
            inf
        )),
        3 * d
    );
    assert_eq!(
        cell(query(Algorithm::Cht, Period::Stable, OpClass::Read, 0, inf)),
        3 * d
    );
    assert_eq!(
        cell(query(Algorithm::Cht, Period::Nice, OpClass::Rmw, 0, inf)),
        4
    );
    assert_eq!(
        cell(query(
            Algorithm::Alg2,
            Period::Nice,
            OpClass::Rmw,
            d + 6,
            Time::new(6)
        )),
        d + 6
    );
    assert_eq!(
        cell(query(
            Algorithm::Alg2,
            Period::Nice,
            OpClass::Read,
            4,
            Time::new(4)
        )),
        2
    );
}

#[test]
fn out_of_range_parameters_are_rejected() {
    assert!(theoretical_bound(&query(
        Algorithm::Alg1,
        Period::Stable,
        OpClass::Read,
        37,
        Time::INFINITY
    ))
    .is_err());
    assert!(theoretical_bound(&query(
        Algorithm::Alg2,
        Period::Stable,
        OpClass::Read,
        4,
        Time::new(3)
    ))
    .is_err());
    assert!(theoretical_bound(&query(
        Algorithm::Alg2,
        Period::Stable,
        OpClass::Read,
        4,
        Time::new(25)
    ))
    .is_err());
    assert!(theoretical_bound(&query(
        Algorithm::Alg2,
        Period::Stable,
        OpClass::Read,
        30,
        Time::new(12)
    ))
    .is_err());
    let mut strict = query(
        Algorithm::Alg2,
        Period::Stable,
        OpClass::Rmw,
        5,
        Time::new(5),
    );
    strict.strict = true;
    assert!(theoretical_bound(&strict).is_err());
    assert!(theoretical_bound(&query(
        Algorithm::Alg1,
        Period::PreGst,
        OpClass::Read,
        0,
        Time::INFINITY
    ))
    .is_err());
}

proptest! {
    #[test]
    fn alg1_bounds_trade_reads_for_rmws(a in 0i64..=36, b in 0i64..=36, nice in any::<bool>()) {
        let (lo, hi) = (a.min(b), a.max(b));
        let period = if nice { Period::Nice } else { Period::Stable };
        let bound = |op, alpha| theoretical_bound(&query(Algorithm::Alg1, period, op, alpha, Time::INFINITY)).unwrap();
        prop_assert!(bound(OpClass::Read, hi) <= bound(OpClass::Read, lo));
        prop_assert!(bound(OpClass::Rmw, hi) >= bound(OpClass::Rmw, lo));
    }

    #[test]
    fn infinite_status_period_is_algorithm_1(alpha in 0i64..=36, nice in any::<bool>(), read in any::<bool>(), eps in 0i64..4) {
        let period = if nice { Period::Nice } else { Period::Stable };
        let op = if read { OpClass::Read } else { OpClass::Rmw };
        let mut q1 = query(Algorithm::Alg1, period, op, alpha, Time::INFINITY);
        q1.epsilon = eps;
        let q2 = BoundQuery { algorithm: Algorithm::Alg2, ..q1 };
        prop_assert_eq!(theoretical_bound(&q1), theoretical_bound(&q2));
    }

    #[test]
    fn alg2_rmw_with_alpha_equal_beta_stays_within_two_delta(beta in prop::sample::select(vec![4i64, 6, 8, 12, 24])) {
        let q = query(Algorithm::Alg2, Period::Stable, OpClass::Rmw, beta, Time::new(beta));
        prop_assert_eq!(theoretical_bound(&q).unwrap(), 24);
    }

    #[test]
    fn bounds_never_drop_below_epsilon(alpha in 0i64..=36, eps in 0i64..=6, nice in any::<bool>()) {
        let period = if nice { Period::Nice } else { Period::Stable };
        let mut q = query(Algorithm::Alg1, period, OpClass::Read, alpha, Time::INFINITY);
        q.epsilon = eps;
        prop_assert!(theoretical_bound(&q).unwrap() >= eps);
    }
}

/// Exhaustive permutation search: some order of all completed ops, plus any
/// subset of pending ones, respects real time and replays every response.
fn linearizable_oracle(object: ObjectType, ops: &[HistoryOp]) -> bool {
    let ops: Vec<&HistoryOp> = ops.iter().filter(|o| o.kind != OpKind::NoOp).collect();
    fn search(object: ObjectType, ops: &[&HistoryOp], used: &mut Vec<bool>, state: Value) -> bool {
        if ops
            .iter()
            .zip(used.iter())
            .all(|(o, &u)| u || !o.is_complete())
        {
            return true;
        }
        for i in 0..ops.len() {
            if used[i] {
                continue;
            }
            // Every unplaced op that responded before `ops[i]` was invoked must go first.
            let blocked = ops.iter().enumerate().any(|(k, o)| {
                !used[k]
                    && k != i
                    && o.response
                        .as_ref()
                        .is_some_and(|r| r.at.seq < ops[i].invoke.seq)
            });
            if blocked {
                continue;
            }
            let (next, value) = object.apply(state, ops[i].kind).unwrap();
            if ops[i].response.as_ref().is_some_and(|r| r.value != value) {
                continue;
            }
            used[i] = true;
            if search(object, ops, used, next) {
                return true;
            }
            used[i] = false;
        }
        false
    }
    search(object, &ops, &mut vec![false; ops.len()], object.initial())
}

fn small_history() -> impl Strategy<Value = Vec<HistoryOp>> {
    let op = (
        0usize..3,
        0u64..12,
        0u64..12,
        prop::option::weighted(0.85, 0i64..3),
        0i64..3,
        0u8..3,
    );
    prop::collection::vec(op, 0..6).prop_map(|raw| {
        let mut counters = [0u64; 3];
        raw.into_iter()
            .map(|(p, a, len, value, write_value, kind)| {
                counters[p] += 1;
                let (kind, response) = match kind {
                    0 => (OpKind::Write { value: write_value }, Value::Ack),
                    _ => (OpKind::Read, Value::Int(value.unwrap_or(0))),
                };
                match value {
                    Some(_) => HistoryOp::completed(
                        p,
                        counters[p],
                        kind,
                        2 * a,
                        2 * (a + len) + 1,
                        response,
                    ),
                    None => HistoryOp::pending(p, counters[p], kind, 2 * a),
                }
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn exhaustive_checker_agrees_with_permutation_oracle(ops in small_history()) {
        let expected = linearizable_oracle(ObjectType::Register, &ops);
        let history = History::new(ops).unwrap();
        prop_assert_eq!(check_brute_force(&history, ObjectType::Register, 12).is_linearizable(), Some(expected));
    }
}

#[test]
fn hand_built_histories() {
    let w = |v| OpKind::Write { value: v };
    assert_eq!(
        check_brute_force(&History::default(), ObjectType::Register, 12).is_linearizable(),
        Some(true)
    );
    let sequential = History::new(vec![
        HistoryOp::completed(0, 1, w(1), 0, 1, Value::Ack),
        HistoryOp::completed(0, 2, w(2), 2, 3, Value::Ack),
        HistoryOp::completed(1, 1, OpKind::Read, 4, 5, Value::Int(2)),
    ])
    .unwrap();
    assert!(linearizable_oracle(ObjectType::Register, &sequential.ops));
    assert_eq!(
        check_brute_force(&sequential, ObjectType::Register, 12).is_linearizable(),
        Some(true)
    );
}

#[test]
fn response_before_invocation_is_rejected() {
    let op = HistoryOp::completed(0, 1, OpKind::Read, 5, 3, Value::Int(0));
    assert!(History::new(vec![op]).is_err());
}

fn small_config() -> RandomConfig {
    RandomConfig {
        max_ops: 10,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn runs_are_deterministic(seed in 10_000u64..20_000) {
        let s = random_scenario(seed, &small_config());
        let (a, b) = (run(&s).unwrap(), run(&s).unwrap());
        prop_assert_eq!(a.record_lines(), b.record_lines());
    }

    #[test]
    fn random_runs_are_safe_and_linearizable(seed in 20_000u64..30_000) {
        let trace = run(&random_scenario(seed, &small_config())).unwrap();
        let safety = check_safety(&trace);
        prop_assert!(safety.passed(), "{}", safety);
        let history = History::from_trace(&trace).unwrap();
        let lin = check_linearizable(&trace, &history, 12);
        prop_assert!(lin.passed() && lin.checkers_agree());
    }

    #[test]
    fn scenarios_roundtrip_through_toml(seed in 0..=i64::MAX as u64) {
        let s = random_scenario(seed, &small_config());
        prop_assert_eq!(Scenario::from_toml(&s.to_toml()).unwrap(), s);
    }

    #[test]
    fn traces_roundtrip_through_jsonl(seed in 30_000u64..40_000) {
        let trace = run(&random_scenario(seed, &small_config())).unwrap();
        let mut buf = Vec::new();
        trace.write_jsonl(&mut buf).unwrap();
        prop_assert_eq!(Trace::read_jsonl(buf.as_slice()).unwrap(), trace);
    }

    #[test]
    fn crashed_processes_fall_silent(seed in 40_000u64..50_000) {
        let s = random_scenario(seed, &small_config());
        let trace = run(&s).unwrap();
        for c in &s.crashes {
            // Requests aimed at a crashed process are still recorded, as never invoked.
            let late = trace.records.iter().filter(|r| {
                r.process == Some(c.process) && r.real > c.at && !matches!(r.event, Event::NeverInvoked { .. })
            });
            prop_assert_eq!(late.count(), 0);
        }
    }
}

#[test]
fn post_gst_deliveries_respect_delay_bounds() {
    for seed in 0..20 {
        let s = random_scenario(seed, &small_config());
        let trace = run(&s).unwrap();
        let crashed: BTreeSet<ProcessId> = s.crashed();
        for r in &trace.records {
            if let Event::Send {
                to,
                deliver_at: Some(at),
                ..
            } = &r.event
            {
                let from = r.process.unwrap();
                if r.real >= s.timing.gst && !crashed.contains(&from) && !crashed.contains(to) {
                    let bound = if s.in_nice_period(r.real) {
                        s.timing.delta_star()
                    } else {
                        s.timing.delta
                    };
                    // FIFO may hold a message behind one sent up to δ earlier.
                    let fifo = if s.in_nice_period(r.real) {
                        s.timing.delta
                    } else {
                        0
                    };
                    assert!(at - r.real <= bound.max(fifo), "seed {seed}: {r:?}");
                }
            }
        }
    }
}

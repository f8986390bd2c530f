//! Seeded generator of adversarial scenarios: crashes, churned pre-GST
//! leadership, lossy pre-GST links, skewed clocks and mixed workloads.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scenario::{Crash, NicePeriod, PreGst, Scenario, Timing, WorkItem, SCENARIO_SCHEMA};
use crate::leader::{LeadershipConfig, Segment};
use crate::object::{ObjectType, OpKind};
use crate::protocol::{Algorithm, ProcessId, ProtocolParams};
use crate::time::Time;

/// Knobs for [`random_scenario`].
#[derive(Clone, Debug)]
pub struct RandomConfig {
    /// Permit clock skew up to δ/4.
    pub skew: bool,
    /// Factor by which the protocol underestimates δ (1 = exact).
    pub delta_underestimate: i64,
    /// Restrict to one algorithm.
    pub algorithm: Option<Algorithm>,
    /// Maximum number of workload operations.
    pub max_ops: usize,
}

impl Default for RandomConfig {
    fn default() -> Self {
        RandomConfig {
            skew: true,
            delta_underestimate: 1,
            algorithm: None,
            max_ops: 30,
        }
    }
}

/// Operations drawn by random workloads, reads included.
pub fn workload_ops(object: ObjectType) -> Vec<OpKind> {
    object
        .op_alphabet()
        .into_iter()
        .filter(|&op| op != OpKind::NoOp)
        .collect()
}

/// A valid randomized scenario determined by `seed`.
pub fn random_scenario(seed: u64, config: &RandomConfig) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = *[3usize, 5, 7].choose(&mut rng).expect("non-empty");
    let delta = *[6i64, 8, 10].choose(&mut rng).expect("non-empty");
    let delta_star = 2;
    let epsilon = if config.skew && rng.gen_bool(0.5) {
        rng.gen_range(0..=delta / 4)
    } else {
        0
    };
    let gst = rng.gen_range(0..=400);

    let algorithm = config.algorithm.unwrap_or_else(|| {
        *[Algorithm::Cht, Algorithm::Alg1, Algorithm::Alg2]
            .choose(&mut rng)
            .expect("non-empty")
    });
    let believed = (delta / config.delta_underestimate.max(1)).max(1);
    let alpha = match algorithm {
        Algorithm::Cht => 0,
        _ => *[
            0,
            delta_star,
            2 * delta_star,
            believed,
            2 * believed,
            3 * believed,
        ]
        .choose(&mut rng)
        .expect("non-empty"),
    };
    let mut protocol = ProtocolParams::new(algorithm, believed, alpha);
    protocol.epsilon = epsilon;
    if algorithm == Algorithm::Alg2 {
        let choices = [
            Time::INFINITY,
            Time::new(1),
            Time::new(2 * delta_star),
            Time::new(believed),
            Time::new(2 * believed),
        ];
        protocol.beta = *choices.choose(&mut rng).expect("non-empty");
    }

    let object = *ObjectType::ALL.choose(&mut rng).expect("non-empty");
    let mut timing = Timing::new(delta);
    timing.delta_star = Some(delta_star);
    timing.epsilon = epsilon;
    timing.gst = gst;
    let mut s = Scenario::new(n, object, timing, protocol);
    s.schema = SCENARIO_SCHEMA.to_string();
    s.name = format!("random-{seed}");
    s.seed = seed;

    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng);
    let crash_count = rng.gen_range(0..=(n - 1) / 2);
    s.crashes = ids[..crash_count]
        .iter()
        .map(|&p| Crash {
            process: ProcessId(p),
            at: rng.gen_range(0..=gst),
        })
        .collect();
    if epsilon > 0 {
        s.clock_offsets = (0..n).map(|_| rng.gen_range(0..=epsilon)).collect();
    }
    s.pre_gst = PreGst {
        max_delay: Some(rng.gen_range(1..=10 * delta)),
        loss: rng.gen_range(0.0..0.4),
    };

    let stable_leader = ProcessId(
        ids[crash_count..]
            .iter()
            .copied()
            .min()
            .expect("a majority is correct"),
    );
    let mut segments = Vec::new();
    let mut t = rng.gen_range(0..=delta);
    while t + 2 < gst {
        let end = (t + rng.gen_range(1..=3 * delta)).min(gst - 1);
        segments.push(Segment {
            holder: ProcessId(rng.gen_range(0..n)),
            start: Time::new(t),
            end: Time::new(end),
        });
        t = end + 1 + rng.gen_range(0..=delta);
    }
    s.leadership = LeadershipConfig::Arbiter {
        stable_leader: Some(stable_leader),
        stable_from: None,
        segments,
    };

    let lambda = s.protocol.lambda;
    let mut t = gst + rng.gen_range(2 * lambda..6 * lambda);
    while t < s.horizon / 2 && s.nice_periods.len() < 3 {
        let len = rng.gen_range(4 * (delta + lambda)..8 * (delta + lambda));
        s.nice_periods.push(NicePeriod {
            start: t,
            end: t + len,
        });
        t += len + rng.gen_range(lambda..3 * lambda);
    }

    let ops = workload_ops(object);
    let last_invocation = gst + 5 * (delta + lambda);
    let count = rng.gen_range(3..=config.max_ops.max(3));
    s.workload = (0..count)
        .map(|_| WorkItem {
            process: ProcessId(rng.gen_range(0..n)),
            at: rng.gen_range(0..=last_invocation),
            op: *ops.choose(&mut rng).expect("non-empty"),
        })
        .collect();
    s.workload.sort_by_key(|w| (w.at, w.process));
    s.horizon = gst + 20 * (delta + lambda) + 10 * delta;
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_scenarios_validate() {
        for seed in 0..200 {
            let s = random_scenario(seed, &RandomConfig::default());
            s.validate().unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let c = RandomConfig::default();
        assert_eq!(random_scenario(7, &c), random_scenario(7, &c));
    }
}

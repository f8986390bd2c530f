//! Post-run checkers: safety invariants, linearizability, blocking times and
//! their closed-form bounds.

pub mod blocking;
pub mod bounds;
pub mod history;
pub mod linearizability;
pub mod safety;
pub mod sweep;

pub use blocking::{
    blocking_times, blocking_times_with, BlockingConfig, BlockingReport, Bucket, BucketStats,
    OpBlocking, Period,
};
pub use bounds::{
    check_bounds, theoretical_bound, BoundError, BoundQuery, BoundRow, BoundsConfig, BoundsReport,
    BucketVerdict, OpClass,
};
pub use history::{History, HistoryOp};
pub use linearizability::{
    check_brute_force, check_linearizable, check_witness, BruteVerdict, BRUTE_FORCE_CAP,
};
pub use safety::{check_liveness, check_safety, LivenessReport, SafetyReport};

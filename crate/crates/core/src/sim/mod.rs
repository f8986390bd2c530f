//! Deterministic discrete-event simulation over integer ticks.

mod clock;
mod network;
pub mod random;
mod runner;
mod scenario;

pub use clock::Clocks;
pub use network::{InFlight, Network, Payload};
pub use random::{random_scenario, RandomConfig};
pub use runner::run;
pub use scenario::{
    Crash, Generator, LinkRule, NicePeriod, PreGst, Scenario, ScenarioError, Timing, WorkItem,
    SCENARIO_SCHEMA,
};

//! Simulated adversary and the statistics behind it.

pub mod abba;
pub mod attack;
pub mod latency;
pub mod stats;
pub mod view;

pub use latency::{LatencyModel, LatencyParams, SampleContext};
pub use stats::{welch_from, welch_t, Running, StatsError, TTestResult, CHECKPOINTS, T_THRESHOLD};
pub use view::{AttackerView, ObservedAccess, ObservedBlock, ViewParseError};
pub use abba::{abba_benchmark, classify, classify_default, default_isa_table, Classification};
pub use attack::{AttackError, AttackReport, Distinguisher, Target};

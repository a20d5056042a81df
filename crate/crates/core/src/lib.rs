//! Uniform code blocks over a small virtual ISA, executed through
//! ORAM-backed controllers and attacked by a simulated single-stepping
//! adversary.

pub mod engine;
pub mod experiment;
pub mod oram;
pub mod patterngen;
pub mod pipeline;
pub mod profiler;
pub mod rewriter;
pub mod samples;
pub mod sidechannel;
pub mod visa;

pub use engine::{Engine, EngineConfig, ExecutionTrace, RunStats};
pub use oram::DataOramKind;
pub use patterngen::{BlockPattern, CostReport, SlotKind};
pub use pipeline::{compile, CompileOptions, Compiled, PipelineError};
pub use rewriter::{TranslatedUnit, Variant};
pub use sidechannel::{AttackReport, AttackerView, LatencyModel};
pub use visa::{Input, MachineState, Program};

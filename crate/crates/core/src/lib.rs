//! Swept and classic domain decompositions for explicit one-dimensional
//! stencil solvers, run over simulated ranks with exact communication
//! accounting.
//!
//! The usual entry points are [`LaunchConfig`] to describe a run,
//! [`solve`] to execute it and [`verify`] to check the swept result against
//! the classic decomposition and a serial reference.

pub mod classic;
pub mod engine;
pub mod kernels;
pub mod partition;
pub mod perf;
mod rank;
pub mod serial;
pub mod swept;
pub mod transport;

pub use engine::{
    expected_messages, expected_rounds, field_diff, gather_global, run, solve, verify,
    write_coverage, Decomposition, EngineError, Perturbed, RunOptions, RunOutput, Summary,
    VerifyReport,
};
pub use kernels::{Equation, EquationSpec, Method, PhysParams, Stencil};
pub use partition::{ConfigError, GlobalField, InitialCondition, LaunchConfig, Partition};
pub use perf::{best_config, measure, power_law_fit, speedup, FitResult, TimingRecord};
pub use rank::{CoveragePhase, CoverageRecord, RankPart};
pub use transport::{ClockMode, CommStats, CostModel, LogRecord};

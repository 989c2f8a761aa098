//! Experiment layer: scenario configs, wiring, runners, and artifacts.
//!
//! A scenario config is flat sectioned key-value text (see `configs/` in the
//! repository root for the shipped scenarios and the README for the
//! grammar). Parsing produces a [`ScenarioSpec`]; building materializes the
//! network schedule, per-agent costs, constraint, and oracle solution into a
//! [`ScenarioInstance`]; the runners execute every `[protocol]` block and
//! emit CSV artifacts with provenance headers.

mod config;
mod runner;
mod spec;

pub use config::{parse_raw, RawConfig};
pub use runner::{
    assemble_outcome, emit_plot_data, pre_flight, run_block, run_cpu_scenario,
    run_dispatch_scenario, run_scenario, PlotData, RunArtifact, ScenarioCheck, ScenarioOutcome,
};
pub use spec::{
    dispatch_type_params, initialize, parse_scenario, BoxMode, BoxSpec, ConstraintSpec, CostSpec,
    InitRule, NetworkBase, NetworkSpec, OutputSpec, PhaseSpec, ProtocolBlock, ReserveSpec,
    ScenarioInstance, ScenarioKind, ScenarioSpec,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("config [{section}] line {line}: {message}")]
    Validation {
        section: String,
        line: usize,
        message: String,
    },
    #[error("boxes are infeasible: Σ lower = {sum_lower}, Σ upper = {sum_upper}, K = {k}")]
    BoxInfeasible {
        sum_lower: f64,
        sum_upper: f64,
        k: f64,
    },
    #[error("explicit initialization does not meet the constraint: gap {gap}")]
    InitSumMismatch { gap: f64 },
    #[error("scenario is kind `{found}` but this runner needs `{expected}`")]
    WrongKind {
        expected: &'static str,
        found: &'static str,
    },
    #[error("scenario check `{name}` failed: {detail}")]
    CheckFailed { name: String, detail: String },
    #[error(transparent)]
    Network(#[from] crate::network::NetworkError),
    #[error(transparent)]
    Cost(#[from] crate::cost::CostError),
    #[error(transparent)]
    Map(#[from] crate::nonlinearity::MapError),
    #[error(transparent)]
    Oracle(#[from] crate::oracle::OracleError),
    #[error(transparent)]
    Protocol(#[from] crate::protocol::ProtocolError),
}

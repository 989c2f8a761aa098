//! Distributed sum-preserving resource allocation over multi-agent networks.
//!
//! This crate simulates first-order Laplacian-gradient protocols that
//! allocate a fixed total resource `K` across `n` agents, each with a local
//! convex cost, while every update conserves the sum `Σ x_i = K`. The
//! protocols tolerate nonlinear maps on the agents' actuation or
//! communication channels (saturation, quantizers, sign-power dynamics), and
//! run over static or switching network topologies.
//!
//! Module map:
//! - [`network`]: weighted graphs, switching schedules, Laplacian spectra.
//! - [`cost`]: per-agent convex costs, box-constraint penalties, rescaling.
//! - [`nonlinearity`]: the map library `h(·)` with analytical classification.
//! - [`protocol`]: discrete- and continuous-time steppers plus rate bounds.
//! - [`oracle`]: centralized KKT solvers providing ground truth `x*`, `ψ*`, `F*`.
//! - [`scenario`]: config parsing, experiment wiring, artifact emission.

pub mod cost;
pub mod network;
pub mod nonlinearity;
pub mod oracle;
pub mod protocol;
pub mod scenario;

pub use cost::{BaseCost, BoxPenalty, CostModel, CpuCost, CurvatureBounds, QuadraticCost};
pub use network::{SpectralSummary, Topology, TopologySchedule};
pub use nonlinearity::{MapClassification, NonlinearMap, OperatingRange, Sector};
pub use oracle::{OracleSolution, StackedProblem};
pub use protocol::{
    AgentState, Integrator, ProtocolConfig, ProtocolVariant, RateBound, Stepping, TrajectoryRecord,
};
pub use scenario::{parse_scenario, RunArtifact, ScenarioError, ScenarioSpec};

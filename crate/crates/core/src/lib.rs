//! Distributed automatic generation control under ramp-rate limits.
//!
//! A deterministic simulator and verification harness for saturated
//! gradient-Laplacian dispatch protocols over static, switching, and delayed
//! communication networks, with a centralized bisection oracle for checking
//! convergence to the true optimum.
//!
//! The crate splits along the problem's natural seams:
//!
//! * [`cost`] — generator cost curves, box penalties, derivatives;
//! * [`network`] — weighted graphs, schedules, uniform-connectivity checks;
//! * [`protocol`] — the per-iteration update rules and the run loop;
//! * [`oracle`] — the centralized ground-truth solver;
//! * [`metrics`] — trace verification: feasibility, rate bounds, descent;
//! * [`scenario`] — the TOML experiment schema and execution glue;
//! * [`trace`] — the CSV trace format (byte-stable, 17-digit floats).

pub mod cost;
pub mod metrics;
pub mod network;
pub mod oracle;
pub mod protocol;
pub mod scenario;
pub mod trace;

pub use cost::{GeneratorParams, PenaltyConfig, TypeTag};
pub use metrics::{chatter_amplitude, iterations_to_residual, verify, VerificationReport};
pub use network::{Segment, Topology, TopologySchedule};
pub use oracle::{invert_gradient, residual_cost, solve_centralized, OracleSolution};
pub use protocol::{
    run, sat, sgn_mu, soft_sign, step_delayed, step_linear, step_sat, step_sat_sgn, DelayBuffer,
    PowerState, ProtocolConfig, ProtocolKind, RunInputs,
};
pub use scenario::{Scenario, ScenarioRun};
pub use trace::{SimTrace, TraceMeta, TraceRecord};

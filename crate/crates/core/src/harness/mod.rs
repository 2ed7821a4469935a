//! Scenario runner: embedded CoAP clients and servers, NAPs and the fabric
//! on one virtual clock.
//!
//! [`run_scenario`] runs the gateway deployment; [`run_baseline`] runs the
//! same endpoints talking to each other directly over IP unicast along the
//! same topology. [`report`] compares the two.

mod endpoints;
mod metrics;
mod scenario;
mod sim;

use thiserror::Error;

use crate::fabric::FabricError;
use crate::nap::NapError;

pub use endpoints::{payload_digest, ClientCounters, Emission, Received, ServerCounters};
pub use metrics::{report, ClientReport, LinkSaving, Report, RunMetrics};
pub use scenario::{
    ClientSpec, Diagnostic, Fanout, LinkSpec, NapRole, NapSpec, NotificationType, Scenario,
    ServerSpec, Timing,
};
pub use sim::{run, run_baseline, run_scenario, Mode, Run, Trace};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("{0}")]
    Io(String),
    #[error("invalid scenario:\n{}", .0.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    InvalidScenario(Vec<Diagnostic>),
    #[error("metrics come from different scenarios ({gateway} vs {baseline})")]
    ScenarioMismatch { gateway: String, baseline: String },
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Nap(#[from] NapError),
}

//! Scenario loading, the deterministic per-window engine, metric reports and
//! multi-run drivers (replication, policy comparison, threshold sweeps).

mod batch;
mod engine;
mod metrics;
mod scenario;

use std::path::PathBuf;

use thiserror::Error;

pub use batch::{
    compare, parse_policy, parse_seeds, replicate, sweep_thresholds, CompareReport, PolicyOverride, Replication,
    SignTest, Stats, SweepReport,
};
pub use engine::run;
pub use metrics::{
    nearest_rank, LedgerRow, MetricsReport, OccupancyRow, Percentiles, SignalingRow, SliceRow, SliceSummary, Summary,
};
pub use scenario::{
    load_scenario, Blueprint, BlueprintSpec, Exclusion, Issue, Lattice, McSpec, ObjectiveKind, RequestSpec, Scenario,
    ScenarioError, ScenarioSpec, SdmxSpec, SliceKnobs, SliceSpec, UcaSpec, UeSpec, UeTemplate,
};

use crate::broker::BrokerError;
use crate::scheduling::SchedError;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("window {window}: invariant violated: {what}")]
    Invariant { window: u64, what: String },
    #[error("window {window}: {source}")]
    Sched { window: u64, source: SchedError },
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("seed {seed}: {source}")]
    Seed { seed: u64, source: Box<RunError> },
    #[error("{0}")]
    Usage(String),
}

impl RunError {
    /// Process exit code: 2 for invalid input, 3 for a failed run, 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Scenario(ScenarioError::Io { .. }) | RunError::Io { .. } => 4,
            RunError::Scenario(_) | RunError::Usage(_) => 2,
            RunError::Invariant { .. } | RunError::Sched { .. } | RunError::Broker(_) => 3,
            RunError::Seed { source, .. } => source.exit_code(),
        }
    }
}

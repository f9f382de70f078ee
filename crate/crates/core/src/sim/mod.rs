//! Green-datacenter simulator: a power-modulated resource pool, Poisson job arrivals,
//! ready/wait pools and the reward signal an RL scheduler trains against.
//!
//! One [`DatacenterState`] is a single-threaded object; independent instances share nothing
//! and can run on separate threads.

mod config;
mod env;
mod job;
mod observation;
mod power;
mod workload;

use std::path::PathBuf;

pub use config::{JobDistribution, PowerModel, SimConfig, SCHEMA_VERSION};
pub use env::{Action, DatacenterState, Ledger, StepInfo, StepResult};
pub use job::{qos_violation_time, Job, Lifecycle};
pub use observation::{encode_observation, Observation, ObservationShape, JOB_FEATURES, OCCUPIED_FLOOR};
pub use power::{PowerTrace, TraceSource};
pub use workload::Workload;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulator configuration: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("power trace: {0}")]
    Trace(String),
    #[error("action index {0} outside 0..{1}")]
    ActionOutOfRange(usize, usize),
    #[error("episode already finished")]
    EpisodeOver,
    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
}

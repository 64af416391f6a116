//! Scheduling and sustainability policies.

mod battery;
mod failure;
mod fifo;
mod shifting;
mod sla;

use thiserror::Error;

pub use battery::{battery_decide, rolling_mean, BatteryDecision, BatteryPolicy};
pub use failure::{
    checkpoint_restore, downtime_union, hosts_for_fraction, inject_failures, CheckpointConfig, HostFailure, Restore,
};
pub use fifo::{fifo_schedule, HostSlot, Placement, Resources, SchedulerConfig, SchedulerState, Weigher, WeigherSpec};
pub use shifting::{
    forecast_window, nearest_rank, shift_decide, shifting_threshold, task_stopper, ShiftDecision, ShiftPolicy,
    StopperAction,
};
pub use sla::{sla_check, SlaRule, TaskOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("empty forecast window")]
    EmptyWindow,
    #[error("invalid policy configuration: {0}")]
    InvalidConfig(String),
}

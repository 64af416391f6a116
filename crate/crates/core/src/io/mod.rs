//! Parsers and writers for workload, topology, experiment, carbon and failure files.

mod error;
mod experiment;
mod topology;
mod traces;
mod workload;

pub use error::InputError;
pub use experiment::{
    parse_experiment, write_experiment, BatteryTechniqueSpec, ExperimentSpec, ExportSpec, FailureSpec,
    HorizontalScalingSpec, TechniquesSpec, ThresholdPolicySpec, TABLES,
};
pub use topology::{
    parse_topology, write_topology, BatterySpec, CpuSpec, GpuSpec, HostGroupSpec, PowerSourceSpec, TopologySpec,
};
pub use traces::{parse_carbon_trace, parse_failure_trace, write_carbon_trace, FailureRecord, FailureScope, FailureTrace};
pub use workload::{compare_ids, parse_workload, parse_workload_dir, write_workload, Fragment, Task, Workload};

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use dcsim::io::{BatterySpec, CpuSpec, HostGroupSpec, PowerSourceSpec, Task, TopologySpec, Workload};
use dcsim::policy::HostFailure;
use dcsim::power::{CarbonTrace, PowerModel, PowerShape};
use dcsim::sim::{PolicyConfig, RunConfig, RunReport, Simulation, TraceSet};
use dcsim::time::MS_PER_HOUR;
use dcsim::SimTime;

pub const H: i64 = MS_PER_HOUR;

pub fn hours(h: f64) -> SimTime {
    SimTime::from_hours(h)
}

pub fn linear(idle: f64, max: f64) -> PowerModel {
    PowerModel { shape: PowerShape::Linear, idle_w: idle, max_w: max }
}

pub fn topology(hosts: u32, cores: u32, model: PowerModel) -> TopologySpec {
    TopologySpec {
        name: "test".into(),
        power_sources: vec![PowerSourceSpec { id: "grid".into(), carbon_trace: None, max_power_w: None }],
        host_groups: vec![HostGroupSpec {
            name: "node".into(),
            count: hosts,
            power_source: None,
            cpu: CpuSpec { core_count: cores, core_speed_mhz: 1000.0, power_model: model },
            gpu: None,
            memory_mib: 1024,
            embodied_kg: 100.0,
            lifespan_h: 43_830.0,
        }],
        batteries: vec![],
    }
}

pub fn with_battery(mut topo: TopologySpec, battery: BatterySpec) -> TopologySpec {
    topo.batteries.push(battery);
    topo
}

pub fn hourly(values: &[f64]) -> Arc<CarbonTrace> {
    CarbonTrace::regular("synthetic", SimTime::ZERO, H, values).unwrap().into_shared()
}

pub fn traces(trace: Arc<CarbonTrace>, failures: Option<Vec<HostFailure>>) -> TraceSet {
    TraceSet { carbon: BTreeMap::from([("grid".to_string(), trace)]), failures }
}

/// Unit task: one core at full speed.
pub fn task(id: &str, submit_h: f64, dur_ms: i64) -> Task {
    Task::simple(id, hours(submit_h), dur_ms, 1, 1000.0)
}

pub fn run(
    topo: &TopologySpec,
    policies: &PolicyConfig,
    traces: &TraceSet,
    tasks: Vec<Task>,
    config: RunConfig,
) -> RunReport {
    let workload = Arc::new(Workload::new("w", tasks));
    Simulation::new(topo, policies, traces, workload, config).unwrap().run().unwrap()
}

pub fn from_zero() -> RunConfig {
    RunConfig { start: Some(SimTime::ZERO), ..RunConfig::default() }
}

/// Start and finish of a task by id, in hours.
pub fn window(report: &RunReport, id: &str) -> (f64, f64) {
    let row = report.tables.task.iter().find(|t| t.task_id == id).unwrap();
    (
        SimTime(row.start.unwrap()).as_hours(),
        SimTime(row.finish.unwrap()).as_hours(),
    )
}

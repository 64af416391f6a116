mod common;

use std::sync::Arc;

use common::*;
use dcsim::io::{BatterySpec, Workload};
use dcsim::policy::{CheckpointConfig, HostFailure};
use dcsim::sim::{Event, Payload, PolicyConfig, RunConfig, SimError, Simulation};
use dcsim::time::MS_PER_MINUTE;
use dcsim::SimTime;

#[test]
fn constant_kilowatt_hour_gives_twelve_rows() {
    let topo = topology(1, 1, linear(1000.0, 1000.0));
    let tr = traces(hourly(&[100.0; 4]), None);
    let report = run(&topo, &PolicyConfig::default(), &tr, vec![task("a", 0.0, H)], from_zero());
    assert_eq!(report.stop, hours(1.0));
    let rows = &report.tables.power_source;
    assert_eq!(rows.len(), 12);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.timestamp, (i as i64 + 1) * 5 * MS_PER_MINUTE);
        assert_eq!(r.power_draw_w, 1000.0);
        assert!((r.energy_usage_j - 300_000.0).abs() < 1e-6);
    }
    assert!((report.ledger.operational_g() - 100.0).abs() < 1e-9);
    assert_eq!(report.peak_power_w, 1000.0);
    assert_eq!(report.tables.service.len(), 12);
    assert!(report.tables.battery.is_empty());
    assert!(report.tables.host.is_empty());
}

#[test]
fn host_rows_only_when_enabled() {
    let topo = topology(2, 1, linear(100.0, 200.0));
    let tr = traces(hourly(&[100.0]), None);
    let config = RunConfig { host_rows: true, ..from_zero() };
    let report = run(&topo, &PolicyConfig::default(), &tr, vec![task("a", 0.0, H)], config);
    assert_eq!(report.tables.host.len(), 24);
    let first = &report.tables.host[0];
    assert_eq!((first.host_id, first.cpu_utilization, first.power_draw_w), (0, 1.0, 200.0));
    assert_eq!(report.tables.host[1].power_draw_w, 100.0);
}

#[test]
fn failure_restarts_without_checkpoint() {
    let topo = topology(1, 1, linear(100.0, 200.0));
    let failure = HostFailure { host: 0, start: hours(1.0), duration_ms: H };
    let tr = traces(hourly(&[100.0]), Some(vec![failure]));
    let report = run(&topo, &PolicyConfig::default(), &tr, vec![task("a", 0.0, 3 * H)], from_zero());
    assert_eq!(window(&report, "a"), (0.0, 5.0));
    // Down host draws nothing for an hour.
    let expected_j = (200.0 * 4.0) * 3600.0;
    assert!((report.energy.grid_j - expected_j).abs() < 1e-6);
}

#[test]
fn failure_resumes_from_checkpoint() {
    let topo = topology(1, 1, linear(100.0, 200.0));
    let failure = HostFailure { host: 0, start: hours(1.5), duration_ms: H / 2 };
    let tr = traces(hourly(&[100.0]), Some(vec![failure]));
    let policies = PolicyConfig { checkpoint: Some(CheckpointConfig::default()), ..PolicyConfig::default() };
    let report = run(&topo, &policies, &tr, vec![task("a", 0.0, 3 * H)], from_zero());
    assert_eq!(window(&report, "a"), (0.0, 4.0));
}

#[test]
fn overlapping_failures_keep_host_down() {
    let topo = topology(1, 1, linear(100.0, 200.0));
    let f = vec![
        HostFailure { host: 0, start: hours(1.0), duration_ms: 2 * H },
        HostFailure { host: 0, start: hours(2.0), duration_ms: 2 * H },
    ];
    let tr = traces(hourly(&[100.0]), Some(f));
    let report = run(&topo, &PolicyConfig::default(), &tr, vec![task("a", 0.0, 2 * H)], from_zero());
    assert_eq!(window(&report, "a"), (0.0, 6.0));
}

#[test]
fn empty_workload_stops_at_start() {
    let topo = topology(1, 1, linear(100.0, 200.0));
    let tr = traces(hourly(&[100.0]), None);
    let report = run(&topo, &PolicyConfig::default(), &tr, vec![], from_zero());
    assert_eq!(report.stop, SimTime::ZERO);
    assert!(report.tables.power_source.is_empty());
    assert_eq!(report.ledger.total_g(), 0.0);
}

#[test]
fn end_time_terminates_unfinished_tasks() {
    let topo = topology(1, 1, linear(100.0, 200.0));
    let tr = traces(hourly(&[100.0]), None);
    let config = RunConfig { end: Some(hours(2.0)), ..from_zero() };
    let report = run(&topo, &PolicyConfig::default(), &tr, vec![task("a", 0.0, 5 * H)], config);
    assert_eq!(report.stop, hours(2.0));
    assert_eq!(report.sla_violations, 1);
    assert_eq!(report.tables.service.last().unwrap().tasks_terminated, 1);
    assert!(report.tables.task[0].finish.is_none());
}

#[test]
fn input_errors() {
    let topo = topology(1, 1, linear(100.0, 200.0));
    let tr = traces(hourly(&[100.0]), None);
    let big = dcsim::io::Task::simple("big", SimTime::ZERO, H, 4, 1000.0);
    let w = Arc::new(Workload::new("w", vec![big]));
    let err = Simulation::new(&topo, &PolicyConfig::default(), &tr, w, from_zero()).err().unwrap();
    assert!(matches!(err, SimError::Unschedulable { .. }), "{err}");

    let w = Arc::new(Workload::new("w", vec![task("early", 0.0, H)]));
    let config = RunConfig { start: Some(hours(1.0)), ..RunConfig::default() };
    let err = Simulation::new(&topo, &PolicyConfig::default(), &tr, w, config).err().unwrap();
    assert!(matches!(err, SimError::EarlyTask { .. }), "{err}");
}

#[test]
fn unchanged_carbon_sample_has_no_follow_ups() {
    let topo = topology(1, 1, linear(100.0, 200.0));
    let tr = traces(hourly(&[100.0, 100.0, 300.0]), None);
    let w = Arc::new(Workload::new("w", vec![]));
    let mut sim = Simulation::new(&topo, &PolicyConfig::default(), &tr, w, from_zero()).unwrap();
    let model = sim.graph().by_name("carbon:synthetic#0").unwrap();
    let source = sim.graph().by_name("source:grid").unwrap();
    let out = sim.propagate(Event::new(SimTime::ZERO, model, None, Payload::Init)).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].target, source);
    let out = sim.propagate(Event::new(hours(1.0), model, None, Payload::CarbonSample)).unwrap();
    assert!(out.is_empty());
    let out = sim.propagate(Event::new(hours(2.0), model, None, Payload::CarbonSample)).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].payload, Payload::CarbonIntensity(300.0));

    let err = sim.propagate(Event::new(hours(1.0), model, None, Payload::CarbonSample)).unwrap_err();
    assert!(matches!(err, SimError::Past { .. }));
}

#[test]
fn placement_cascades_to_power_source() {
    let topo = topology(1, 1, linear(100.0, 200.0));
    let tr = traces(hourly(&[100.0]), None);
    let w = Arc::new(Workload::new("w", vec![task("a", 0.0, H)]));
    let mut sim = Simulation::new(&topo, &PolicyConfig::default(), &tr, w, from_zero()).unwrap();
    let host = sim.graph().by_name("host[0]").unwrap();
    let mut pending = vec![Event::new(SimTime::ZERO, host, None, Payload::Place(vec![(0, 0)]))];
    let mut targets = Vec::new();
    while let Some(e) = pending.pop() {
        if e.time != SimTime::ZERO {
            continue;
        }
        targets.push(sim.graph().get(e.target).name.clone());
        pending.extend(sim.propagate(e).unwrap());
    }
    for name in ["host[0]", "host[0].cpu", "host[0].psu", "source:grid"] {
        assert!(targets.iter().any(|t| t == name), "{name} not reached: {targets:?}");
    }
    let source = sim.graph().by_name("source:grid").unwrap();
    let cpu = sim.graph().by_name("host[0].cpu").unwrap();
    assert_eq!(sim.source_power_w(source), Some(200.0));
    assert_eq!(sim.device_power_w(cpu), Some(200.0));
}

#[test]
fn runs_are_deterministic() {
    let topo = with_battery(topology(3, 2, linear(80.0, 240.0)), BatterySpec::new("b", "grid", 0.5));
    let values: Vec<f64> = (0..400).map(|i| 100.0 + 200.0 * ((i / 12) % 2) as f64).collect();
    let failures = vec![HostFailure { host: 1, start: hours(3.0), duration_ms: 2 * H }];
    let tr = traces(hourly(&values), Some(failures));
    let tasks: Vec<_> = (0..20).map(|i| task(&format!("t{i}"), (i / 4) as f64, (1 + i % 3) as i64 * H)).collect();
    let policies = PolicyConfig { checkpoint: Some(CheckpointConfig::default()), ..PolicyConfig::default() };
    let a = run(&topo, &policies, &tr, tasks.clone(), from_zero());
    let b = run(&topo, &policies, &tr, tasks, from_zero());
    assert_eq!(a.tables, b.tables);
    assert_eq!(a.segments, b.segments);
    assert_eq!(a.events, b.events);
    assert!(a.energy.relative_error() < 1e-9, "{:?}", a.energy);
}

//! Output tables, per-run summaries and cross-run aggregation.

mod tables;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::RunReport;
use crate::time::{MS_PER_HOUR, MS_PER_SECOND};

pub use tables::{
    write_rows, BatteryRow, HostRow, PowerSourceRow, ServiceRow, Tables, TaskRow, BATTERY_HEADER, HOST_HEADER,
    POWER_SOURCE_HEADER, SERVICE_HEADER, TASK_HEADER,
};

/// Label of the run with every technique off.
pub const BASELINE: &str = "baseline";

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("run '{run}' has no baseline run (same topology, workload, region and seed)")]
    MissingBaseline { run: String },
    #[error("baseline of run '{run}' has zero total carbon")]
    ZeroBaseline { run: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Identity of a run within an experiment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub topology: String,
    pub workload: String,
    pub region: String,
    pub techniques: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub topology: String,
    pub workload: String,
    pub region: String,
    pub techniques: String,
    pub seed: u64,
    pub operational_g: f64,
    pub embodied_g: f64,
    pub total_g: f64,
    #[serde(rename = "energy_kWh")]
    pub energy_kwh: f64,
    #[serde(rename = "peak_power_W")]
    pub peak_power_w: f64,
    pub mean_task_delay_h: f64,
    pub sla_violation_fraction: f64,
    pub makespan_h: f64,
}

pub const SUMMARY_HEADER: &[&str] = &[
    "run_id",
    "topology",
    "workload",
    "region",
    "techniques",
    "seed",
    "operational_g",
    "embodied_g",
    "total_g",
    "energy_kWh",
    "peak_power_W",
    "mean_task_delay_h",
    "sla_violation_fraction",
    "makespan_h",
];

pub fn summarize(report: &RunReport, meta: &RunMeta) -> RunSummary {
    let tasks = &report.tables.task;
    let hours = |ms: i64| ms as f64 / MS_PER_HOUR as f64;
    let delays: Vec<i64> = tasks.iter().filter_map(|t| t.delay_ms).collect();
    let mean_task_delay_h = if delays.is_empty() {
        0.0
    } else {
        hours(delays.iter().sum::<i64>()) / delays.len() as f64
    };
    let sla_violation_fraction = if tasks.is_empty() {
        0.0
    } else {
        tasks.iter().filter(|t| t.sla_violated).count() as f64 / tasks.len() as f64
    };
    let first = tasks.iter().map(|t| t.submission).min();
    let last = if tasks.iter().all(|t| t.finish.is_some()) {
        tasks.iter().filter_map(|t| t.finish).max()
    } else {
        Some(report.stop.0)
    };
    let makespan_h = match (first, last) {
        (Some(a), Some(b)) => hours(b - a),
        _ => 0.0,
    };
    let operational_g = report.ledger.operational_g();
    let embodied_g = report.ledger.embodied_g();
    RunSummary {
        run_id: meta.run_id.clone(),
        topology: meta.topology.clone(),
        workload: meta.workload.clone(),
        region: meta.region.clone(),
        techniques: meta.techniques.clone(),
        seed: meta.seed,
        operational_g,
        embodied_g,
        total_g: operational_g + embodied_g,
        energy_kwh: report.energy.grid_j / (3600.0 * MS_PER_SECOND as f64),
        peak_power_w: report.peak_power_w,
        mean_task_delay_h,
        sla_violation_fraction,
        makespan_h,
    }
}

/// One line of the aggregated output. `seed` is the seed number, or `mean`
/// for the average over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub topology: String,
    pub workload: String,
    pub region: String,
    pub techniques: String,
    pub seed: String,
    pub total_g: f64,
    pub baseline_total_g: f64,
    #[serde(rename = "carbon_reduction_pct")]
    pub carbon_reduction_pct: f64,
    #[serde(rename = "peak_power_W")]
    pub peak_power_w: f64,
    pub mean_task_delay_h: f64,
    pub sla_violation_fraction: f64,
}

pub const AGGREGATE_HEADER: &[&str] = &[
    "topology",
    "workload",
    "region",
    "techniques",
    "seed",
    "total_g",
    "baseline_total_g",
    "carbon_reduction_pct",
    "peak_power_W",
    "mean_task_delay_h",
    "sla_violation_fraction",
];

/// Percentage reduction of `total` relative to `baseline`. Negative values
/// mean the technique increased emissions.
pub fn carbon_reduction_pct(baseline: f64, total: f64) -> f64 {
    100.0 * (baseline - total) / baseline
}

/// Compares every run against the baseline run with the same topology,
/// workload, region and seed. Emits per-seed rows followed by one mean row per
/// (topology, workload, region, techniques) group, sorted by that key.
pub fn aggregate(runs: &[RunSummary]) -> Result<Vec<AggregateRow>, MetricsError> {
    let mut baselines = BTreeMap::new();
    for r in runs.iter().filter(|r| r.techniques == BASELINE) {
        baselines.insert((&r.topology, &r.workload, &r.region, r.seed), r.total_g);
    }
    let mut groups: BTreeMap<(&str, &str, &str, &str), Vec<AggregateRow>> = BTreeMap::new();
    for r in runs {
        let base = *baselines
            .get(&(&r.topology, &r.workload, &r.region, r.seed))
            .ok_or_else(|| MetricsError::MissingBaseline { run: r.run_id.clone() })?;
        if base == 0.0 {
            return Err(MetricsError::ZeroBaseline { run: r.run_id.clone() });
        }
        groups.entry((&r.topology, &r.workload, &r.region, &r.techniques)).or_default().push(AggregateRow {
            topology: r.topology.clone(),
            workload: r.workload.clone(),
            region: r.region.clone(),
            techniques: r.techniques.clone(),
            seed: r.seed.to_string(),
            total_g: r.total_g,
            baseline_total_g: base,
            carbon_reduction_pct: carbon_reduction_pct(base, r.total_g),
            peak_power_w: r.peak_power_w,
            mean_task_delay_h: r.mean_task_delay_h,
            sla_violation_fraction: r.sla_violation_fraction,
        });
    }
    let mut out = Vec::new();
    for (_, mut rows) in groups {
        rows.sort_by_key(|r| r.seed.parse::<u64>().unwrap_or(u64::MAX));
        let n = rows.len() as f64;
        let mean = |f: fn(&AggregateRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let mean_row = AggregateRow {
            seed: "mean".into(),
            total_g: mean(|r| r.total_g),
            baseline_total_g: mean(|r| r.baseline_total_g),
            carbon_reduction_pct: mean(|r| r.carbon_reduction_pct),
            peak_power_w: mean(|r| r.peak_power_w),
            mean_task_delay_h: mean(|r| r.mean_task_delay_h),
            sla_violation_fraction: mean(|r| r.sla_violation_fraction),
            ..rows[0].clone()
        };
        out.extend(rows);
        out.push(mean_row);
    }
    Ok(out)
}

pub fn write_summaries(rows: &[RunSummary], path: &Path) -> Result<(), MetricsError> {
    Ok(write_rows(rows, path, SUMMARY_HEADER)?)
}

pub fn write_aggregate(rows: &[AggregateRow], path: &Path) -> Result<(), MetricsError> {
    Ok(write_rows(rows, path, AGGREGATE_HEADER)?)
}

pub fn read_summaries(path: &Path) -> Result<Vec<RunSummary>, MetricsError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

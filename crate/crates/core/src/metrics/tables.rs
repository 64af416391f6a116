use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceRow {
    pub timestamp: i64,
    pub tasks_pending: usize,
    pub tasks_active: usize,
    pub tasks_completed: usize,
    pub tasks_terminated: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerSourceRow {
    pub timestamp: i64,
    pub source_id: String,
    /// Instantaneous draw at the sample time.
    #[serde(rename = "power_draw_W")]
    pub power_draw_w: f64,
    /// Energy drawn since the previous sample.
    #[serde(rename = "energy_usage_J")]
    pub energy_usage_j: f64,
    pub carbon_intensity: f64,
    /// Emissions since the previous sample.
    pub carbon_emission_g: f64,
    /// Highest draw held since the previous sample, from the continuous timeline.
    #[serde(rename = "peak_power_W")]
    pub peak_power_w: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatteryRow {
    pub timestamp: i64,
    pub battery_id: String,
    #[serde(rename = "soc_kWh")]
    pub soc_kwh: f64,
    pub mode: String,
    /// Positive while charging, negative while discharging.
    #[serde(rename = "power_W")]
    pub power_w: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HostRow {
    pub timestamp: i64,
    pub host_id: usize,
    pub cpu_utilization: f64,
    #[serde(rename = "power_draw_W")]
    pub power_draw_w: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task_id: String,
    pub submission: i64,
    pub start: Option<i64>,
    pub finish: Option<i64>,
    pub delay_ms: Option<i64>,
    pub sla_violated: bool,
}

/// Sampled output tables of one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Tables {
    pub service: Vec<ServiceRow>,
    pub power_source: Vec<PowerSourceRow>,
    pub battery: Vec<BatteryRow>,
    pub host: Vec<HostRow>,
    pub task: Vec<TaskRow>,
}

pub fn write_rows<T: Serialize>(rows: &[T], path: &Path, header: &[&str]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()
}

pub const SERVICE_HEADER: &[&str] = &["timestamp", "tasks_pending", "tasks_active", "tasks_completed", "tasks_terminated"];
pub const POWER_SOURCE_HEADER: &[&str] = &[
    "timestamp",
    "source_id",
    "power_draw_W",
    "energy_usage_J",
    "carbon_intensity",
    "carbon_emission_g",
    "peak_power_W",
];
pub const BATTERY_HEADER: &[&str] = &["timestamp", "battery_id", "soc_kWh", "mode", "power_W"];
pub const HOST_HEADER: &[&str] = &["timestamp", "host_id", "cpu_utilization", "power_draw_W"];
pub const TASK_HEADER: &[&str] = &["task_id", "submission", "start", "finish", "delay_ms", "sla_violated"];

impl Tables {
    /// Writes the selected tables as `<name>.csv` into `dir`.
    pub fn write(&self, dir: &Path, selected: &[String]) -> std::io::Result<()> {
        let on = |t: &str| selected.iter().any(|s| s == t);
        if on("service") {
            write_rows(&self.service, &dir.join("service.csv"), SERVICE_HEADER)?;
        }
        if on("powerSource") {
            write_rows(&self.power_source, &dir.join("powerSource.csv"), POWER_SOURCE_HEADER)?;
        }
        if on("battery") {
            write_rows(&self.battery, &dir.join("battery.csv"), BATTERY_HEADER)?;
        }
        if on("host") {
            write_rows(&self.host, &dir.join("host.csv"), HOST_HEADER)?;
        }
        if on("task") {
            write_rows(&self.task, &dir.join("task.csv"), TASK_HEADER)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn headers_match_serialized_rows() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tables {
            service: vec![ServiceRow { timestamp: 1, tasks_pending: 0, tasks_active: 1, tasks_completed: 0, tasks_terminated: 0 }],
            power_source: vec![PowerSourceRow {
                timestamp: 1,
                source_id: "g".into(),
                power_draw_w: 1.0,
                energy_usage_j: 2.0,
                carbon_intensity: 3.0,
                carbon_emission_g: 4.0,
                peak_power_w: 5.0,
            }],
            battery: vec![BatteryRow { timestamp: 1, battery_id: "b".into(), soc_kwh: 0.0, mode: "idle".into(), power_w: 0.0 }],
            host: vec![HostRow { timestamp: 1, host_id: 0, cpu_utilization: 0.5, power_draw_w: 10.0 }],
            task: vec![TaskRow { task_id: "a".into(), submission: 0, start: None, finish: None, delay_ms: None, sla_violated: true }],
        };
        let all: Vec<String> = crate::io::TABLES.iter().map(|s| s.to_string()).collect();
        t.write(dir.path(), &all).unwrap();
        for (name, header) in [
            ("service", SERVICE_HEADER),
            ("powerSource", POWER_SOURCE_HEADER),
            ("battery", BATTERY_HEADER),
            ("host", HOST_HEADER),
            ("task", TASK_HEADER),
        ] {
            let text = std::fs::read_to_string(dir.path().join(format!("{name}.csv"))).unwrap();
            assert_eq!(text.lines().next().unwrap(), header.join(","), "{name}");
        }
        Tables::default().write(dir.path(), &all).unwrap();
        let text = std::fs::read_to_string(dir.path().join("battery.csv")).unwrap();
        assert_eq!(text.trim(), BATTERY_HEADER.join(","));
    }
}

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::error::{parse_json, InputError};
use super::topology::{battery_policy, week};
use crate::policy::{CheckpointConfig, SchedulerConfig, ShiftPolicy, SlaRule};
use crate::power::{BATTERY_EMBODIED_KG_PER_KWH, DEFAULT_C_RATE};
use crate::time::MS_PER_MINUTE;

pub const TABLES: [&str; 5] = ["service", "powerSource", "battery", "host", "task"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizontalScalingSpec {
    pub host_counts: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryTechniqueSpec {
    pub capacities_kwh: Vec<f64>,
    #[serde(default = "default_c_rates")]
    pub c_rates: Vec<f64>,
    #[serde(default = "default_embodied")]
    pub embodied_kg_per_kwh: Vec<f64>,
    #[serde(default = "one")]
    pub efficiency: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discharge_cap_kw: Option<f64>,
    #[serde(default = "battery_policy")]
    pub policy: String,
    #[serde(default = "week")]
    pub window_ms: i64,
}

fn default_c_rates() -> Vec<f64> {
    vec![DEFAULT_C_RATE]
}

fn default_embodied() -> Vec<f64> {
    vec![BATTERY_EMBODIED_KG_PER_KWH]
}

fn one() -> f64 {
    1.0
}

/// Parameters of a carbon-threshold policy (temporal shifting or task stopper).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdPolicySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
    #[serde(default = "percentile")]
    pub percentile: f64,
    #[serde(default = "forecast_window")]
    pub forecast_window_ms: i64,
    #[serde(default = "max_delay")]
    pub max_delay_ms: i64,
}

fn percentile() -> f64 {
    ShiftPolicy::default().percentile
}

fn forecast_window() -> i64 {
    ShiftPolicy::default().forecast_window_ms
}

fn max_delay() -> i64 {
    ShiftPolicy::default().max_delay_ms
}

impl Default for ThresholdPolicySpec {
    fn default() -> Self {
        ThresholdPolicySpec {
            policy: None,
            percentile: percentile(),
            forecast_window_ms: forecast_window(),
            max_delay_ms: max_delay(),
        }
    }
}

impl ThresholdPolicySpec {
    pub fn params(&self) -> ShiftPolicy {
        ShiftPolicy {
            percentile: self.percentile,
            forecast_window_ms: self.forecast_window_ms,
            max_delay_ms: self.max_delay_ms,
        }
    }

    fn check(&self, path: &Path, field: &str, id: &str) -> Result<(), InputError> {
        if let Some(p) = self.policy.as_deref().filter(|p| *p != id) {
            return Err(InputError::invalid(path, format!("{field}.policy"), format!("unknown policy '{p}'")));
        }
        self.params().validate().map_err(|e| InputError::invalid(path, field, e.to_string()))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TechniquesSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizontal_scaling: Option<HorizontalScalingSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub battery: Option<BatteryTechniqueSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temporal_shifting: Option<ThresholdPolicySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_stopper: Option<ThresholdPolicySpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureSpec {
    pub trace: PathBuf,
    /// Omit to restart interrupted tasks from zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<CheckpointConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportSpec {
    #[serde(default = "five_minutes")]
    pub interval_ms: i64,
    #[serde(default = "default_tables")]
    pub tables: Vec<String>,
}

fn five_minutes() -> i64 {
    5 * MS_PER_MINUTE
}

fn default_tables() -> Vec<String> {
    vec!["service".into(), "powerSource".into(), "battery".into()]
}

impl Default for ExportSpec {
    fn default() -> Self {
        ExportSpec { interval_ms: five_minutes(), tables: default_tables() }
    }
}

impl ExportSpec {
    pub fn enabled(&self, table: &str) -> bool {
        self.tables.iter().any(|t| t == table)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub topologies: Vec<PathBuf>,
    /// Directories holding `tasks.csv` and `fragments.csv`.
    pub workloads: Vec<PathBuf>,
    /// One file per region; overrides the traces named by the topology.
    #[serde(default)]
    pub carbon_traces: Vec<PathBuf>,
    #[serde(default)]
    pub techniques: TechniquesSpec,
    #[serde(default)]
    pub scheduler: SchedulerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failures: Option<FailureSpec>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub export: ExportSpec,
    #[serde(default)]
    pub sla: SlaRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_time_ms: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_time_ms: Option<i64>,
    /// Global rescaling of fragment CPU usage, e.g. for normalized traces.
    #[serde(default = "one")]
    pub cpu_usage_scale: f64,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentSpec {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self, path: &Path) -> Result<(), InputError> {
        let err = |field: &str, msg: String| Err(InputError::invalid(path, field, msg));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return err("name", "must be a non-empty plain name".into());
        }
        if self.topologies.is_empty() {
            return err("topologies", "at least one topology is required".into());
        }
        if self.workloads.is_empty() {
            return err("workloads", "at least one workload is required".into());
        }
        if self.seeds.is_empty() {
            return err("seeds", "at least one seed is required".into());
        }
        if BTreeSet::from_iter(&self.seeds).len() != self.seeds.len() {
            return err("seeds", "seeds must be distinct".into());
        }
        let mut regions = BTreeSet::new();
        for p in &self.carbon_traces {
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            if !regions.insert(stem.clone()) {
                return err("carbon_traces", format!("duplicate region '{stem}'"));
            }
        }
        if self.export.interval_ms <= 0 {
            return err("export.interval_ms", "must be positive".into());
        }
        for t in &self.export.tables {
            if !TABLES.contains(&t.as_str()) {
                return err("export.tables", format!("unknown table '{t}'"));
            }
        }
        if self.scheduler.policy != "fifo" {
            return err("scheduler.policy", format!("unknown scheduler policy '{}'", self.scheduler.policy));
        }
        if let Err(e) = self.sla.validate() {
            return err("sla", e.to_string());
        }
        if let Some(f) = &self.failures {
            if let Some(c) = &f.checkpoint {
                if let Err(e) = c.validate() {
                    return err("failures.checkpoint", e.to_string());
                }
            }
        }
        if !(self.cpu_usage_scale > 0.0 && self.cpu_usage_scale.is_finite()) {
            return err("cpu_usage_scale", "must be positive".into());
        }
        if let (Some(s), Some(e)) = (self.start_time_ms, self.end_time_ms) {
            if e <= s {
                return err("end_time_ms", "must be after start_time_ms".into());
            }
        }
        let t = &self.techniques;
        if let Some(hs) = &t.horizontal_scaling {
            if hs.host_counts.is_empty() || hs.host_counts.contains(&0) {
                return err("techniques.horizontal_scaling.host_counts", "need one or more positive counts".into());
            }
        }
        if let Some(b) = &t.battery {
            if b.capacities_kwh.is_empty() || b.c_rates.is_empty() || b.embodied_kg_per_kwh.is_empty() {
                return err("techniques.battery", "sweep lists must be non-empty".into());
            }
            let positive = |v: &[f64]| v.iter().all(|x| *x > 0.0 && x.is_finite());
            if !positive(&b.capacities_kwh) || !positive(&b.c_rates) || !positive(&b.embodied_kg_per_kwh) {
                return err("techniques.battery", "capacities, c-rates and embodied rates must be positive".into());
            }
            if !(b.efficiency > 0.0 && b.efficiency <= 1.0) {
                return err("techniques.battery.efficiency", "must lie in (0, 1]".into());
            }
            if b.policy != battery_policy() {
                return err("techniques.battery.policy", format!("unknown battery policy '{}'", b.policy));
            }
            if b.window_ms <= 0 {
                return err("techniques.battery.window_ms", "must be positive".into());
            }
        }
        if let Some(s) = &t.temporal_shifting {
            s.check(path, "techniques.temporal_shifting", "shifting")?;
        }
        if let Some(s) = &t.task_stopper {
            s.check(path, "techniques.task_stopper", "task_stopper")?;
        }
        Ok(())
    }
}

pub fn parse_experiment(path: &Path) -> Result<ExperimentSpec, InputError> {
    let text = std::fs::read_to_string(path).map_err(|e| InputError::io(path, e))?;
    let mut spec: ExperimentSpec = parse_json(path, &text)?;
    spec.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    spec.validate(path)?;
    Ok(spec)
}

pub fn write_experiment(spec: &ExperimentSpec, path: &Path) -> Result<(), InputError> {
    let text = serde_json::to_string_pretty(spec).expect("experiment serializes");
    std::fs::write(path, text).map_err(|e| InputError::io(path, e))
}

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::error::{parse_json, InputError};
use crate::power::{Battery, PowerModel, PowerShape, BATTERY_EMBODIED_KG_PER_KWH, BATTERY_LIFESPAN_H, DEFAULT_C_RATE, HOST_LIFESPAN_H};
use crate::time::MS_PER_DAY;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSourceSpec {
    pub id: String,
    /// Carbon trace file, relative to the topology file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub carbon_trace: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_power_w: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpuSpec {
    pub core_count: u32,
    pub core_speed_mhz: f64,
    pub power_model: PowerModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpuSpec {
    pub count: u32,
    /// Per-GPU power model.
    pub power_model: PowerModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostGroupSpec {
    pub name: String,
    pub count: u32,
    /// Defaults to the first power source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_source: Option<String>,
    pub cpu: CpuSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gpu: Option<GpuSpec>,
    pub memory_mib: u64,
    pub embodied_kg: f64,
    #[serde(default = "host_lifespan")]
    pub lifespan_h: f64,
}

fn host_lifespan() -> f64 {
    HOST_LIFESPAN_H
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatterySpec {
    pub id: String,
    pub power_source: String,
    pub capacity_kwh: f64,
    #[serde(default = "c_rate")]
    pub c_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discharge_cap_kw: Option<f64>,
    #[serde(default = "embodied_rate")]
    pub embodied_kg_per_kwh: f64,
    #[serde(default = "battery_lifespan")]
    pub lifespan_h: f64,
    #[serde(default = "unit")]
    pub efficiency: f64,
    #[serde(default)]
    pub initial_soc_kwh: f64,
    #[serde(default = "battery_policy")]
    pub policy: String,
    #[serde(default = "week")]
    pub window_ms: i64,
}

fn c_rate() -> f64 {
    DEFAULT_C_RATE
}

fn embodied_rate() -> f64 {
    BATTERY_EMBODIED_KG_PER_KWH
}

fn battery_lifespan() -> f64 {
    BATTERY_LIFESPAN_H
}

fn unit() -> f64 {
    1.0
}

pub(crate) fn battery_policy() -> String {
    "battery_rolling_mean".into()
}

pub(crate) fn week() -> i64 {
    7 * MS_PER_DAY
}

impl BatterySpec {
    pub fn new(id: impl Into<String>, power_source: impl Into<String>, capacity_kwh: f64) -> Self {
        BatterySpec {
            id: id.into(),
            power_source: power_source.into(),
            capacity_kwh,
            c_rate: c_rate(),
            discharge_cap_kw: None,
            embodied_kg_per_kwh: embodied_rate(),
            lifespan_h: battery_lifespan(),
            efficiency: 1.0,
            initial_soc_kwh: 0.0,
            policy: battery_policy(),
            window_ms: week(),
        }
    }

    pub fn device(&self) -> Battery {
        Battery {
            capacity_kwh: self.capacity_kwh,
            soc_kwh: self.initial_soc_kwh,
            c_rate: self.c_rate,
            discharge_cap_kw: self.discharge_cap_kw,
            embodied_kg_per_kwh: self.embodied_kg_per_kwh,
            lifespan_h: self.lifespan_h,
            efficiency: self.efficiency,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub name: String,
    pub power_sources: Vec<PowerSourceSpec>,
    pub host_groups: Vec<HostGroupSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub batteries: Vec<BatterySpec>,
}

impl TopologySpec {
    pub fn host_count(&self) -> usize {
        self.host_groups.iter().map(|g| g.count as usize).sum()
    }

    /// Power source id of a host group.
    pub fn source_of<'a>(&'a self, group: &'a HostGroupSpec) -> &'a str {
        group.power_source.as_deref().unwrap_or(&self.power_sources[0].id)
    }

    /// Checks structural invariants; `path` only labels diagnostics.
    pub fn validate(&self, path: &Path) -> Result<(), InputError> {
        let err = |field: String, msg: String| Err(InputError::invalid(path, field, msg));
        if self.power_sources.is_empty() {
            return err("power_sources".into(), "at least one power source is required".into());
        }
        if self.host_groups.is_empty() {
            return err("host_groups".into(), "at least one host group is required".into());
        }
        let mut ids = BTreeSet::new();
        for (i, s) in self.power_sources.iter().enumerate() {
            if !ids.insert(s.id.as_str()) {
                return err(format!("power_sources[{i}].id"), format!("duplicate id '{}'", s.id));
            }
            if matches!(s.max_power_w, Some(p) if !(p > 0.0)) {
                return err(format!("power_sources[{i}].max_power_w"), "must be positive".into());
            }
        }
        let mut names = BTreeSet::new();
        for (i, g) in self.host_groups.iter().enumerate() {
            let f = |name: &str| format!("host_groups[{i}].{name}");
            if !names.insert(g.name.as_str()) {
                return err(f("name"), format!("duplicate host group '{}'", g.name));
            }
            if g.count == 0 {
                return err(f("count"), "must be positive".into());
            }
            if g.cpu.core_count == 0 || !(g.cpu.core_speed_mhz > 0.0) {
                return err(f("cpu"), "core count and speed must be positive".into());
            }
            if let Err(e) = g.cpu.power_model.validate() {
                return err(f("cpu.power_model"), e.to_string());
            }
            if let Some(gpu) = &g.gpu {
                if gpu.count == 0 {
                    return err(f("gpu.count"), "must be positive".into());
                }
                if let Err(e) = gpu.power_model.validate() {
                    return err(f("gpu.power_model"), e.to_string());
                }
            }
            if !(g.embodied_kg > 0.0 && g.lifespan_h > 0.0) {
                return err(f("embodied_kg"), "embodied carbon and lifespan must be positive".into());
            }
            if let Some(src) = &g.power_source {
                if !ids.contains(src.as_str()) {
                    return err(f("power_source"), format!("unknown power source '{src}'"));
                }
            }
        }
        let mut battery_ids = BTreeSet::new();
        for (i, b) in self.batteries.iter().enumerate() {
            let f = |name: &str| format!("batteries[{i}].{name}");
            if !battery_ids.insert(b.id.as_str()) {
                return err(f("id"), format!("duplicate battery id '{}'", b.id));
            }
            if !ids.contains(b.power_source.as_str()) {
                return err(f("power_source"), format!("unknown power source '{}'", b.power_source));
            }
            if b.policy != battery_policy() {
                return err(f("policy"), format!("unknown battery policy '{}'", b.policy));
            }
            if b.window_ms <= 0 {
                return err(f("window_ms"), "must be positive".into());
            }
            if let Err(e) = b.device().validate() {
                return err(f("capacity_kwh"), e.to_string());
            }
        }
        Ok(())
    }

    /// The Surf datacenter: 277 hosts with 16 cores at 2.1 GHz and 128 GiB.
    pub fn surf() -> Self {
        TopologySpec {
            name: "surf".into(),
            power_sources: vec![PowerSourceSpec { id: "grid".into(), carbon_trace: None, max_power_w: None }],
            host_groups: vec![HostGroupSpec {
                name: "surf".into(),
                count: 277,
                power_source: None,
                cpu: CpuSpec {
                    core_count: 16,
                    core_speed_mhz: 2100.0,
                    power_model: PowerModel { shape: PowerShape::Sqrt, idle_w: 32.0, max_w: 180.0 },
                },
                gpu: None,
                memory_mib: 128 * 1024,
                embodied_kg: 1022.0,
                lifespan_h: HOST_LIFESPAN_H,
            }],
            batteries: Vec::new(),
        }
    }
}

pub fn parse_topology(path: &Path) -> Result<TopologySpec, InputError> {
    let text = std::fs::read_to_string(path).map_err(|e| InputError::io(path, e))?;
    let spec: TopologySpec = parse_json(path, &text)?;
    spec.validate(path)?;
    Ok(spec)
}

pub fn write_topology(spec: &TopologySpec, path: &Path) -> Result<(), InputError> {
    let text = serde_json::to_string_pretty(spec).expect("topology serializes");
    std::fs::write(path, text).map_err(|e| InputError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "tiny",
        "power_sources": [{"id": "grid"}],
        "host_groups": [{
            "name": "h", "count": 2, "memory_mib": 1024, "embodied_kg": 100,
            "cpu": {"core_count": 4, "core_speed_mhz": 2000,
                    "power_model": {"shape": "linear", "idle_w": 30, "max_w": 300}}
        }]
    }"#;

    fn write(text: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("topology.json");
        std::fs::write(&p, text).unwrap();
        (dir, p)
    }

    #[test]
    fn minimal_topology_with_defaults() {
        let (_d, p) = write(MINIMAL);
        let t = parse_topology(&p).unwrap();
        assert_eq!(t.host_count(), 2);
        assert_eq!(t.host_groups[0].lifespan_h, 43_830.0);
        assert_eq!(t.source_of(&t.host_groups[0]), "grid");
    }

    #[test]
    fn unknown_field_reports_path() {
        let (_d, p) = write(&MINIMAL.replace("\"count\": 2", "\"count\": 2, \"colour\": 1"));
        let e = parse_topology(&p).unwrap_err();
        assert!(matches!(&e, InputError::Schema { field, .. } if field.starts_with("host_groups[0]")), "{e}");
        assert!(e.to_string().contains("colour"));
    }

    #[test]
    fn battery_must_reference_a_source() {
        let mut t: TopologySpec = serde_json::from_str(MINIMAL).unwrap();
        t.batteries.push(BatterySpec::new("b", "nowhere", 10.0));
        let e = t.validate(Path::new("t.json")).unwrap_err();
        assert!(e.to_string().contains("unknown power source"));
    }

    #[test]
    fn surf_defaults() {
        let s = TopologySpec::surf();
        s.validate(Path::new("surf")).unwrap();
        assert_eq!(s.host_count(), 277);
        assert_eq!(s.host_groups[0].cpu.core_count, 16);
        assert_eq!(s.host_groups[0].cpu.core_speed_mhz, 2100.0);
        assert_eq!(s.host_groups[0].memory_mib, 131_072);
        assert_eq!(s.host_groups[0].embodied_kg, 1022.0);
    }

    #[test]
    fn round_trip() {
        let (dir, p) = write(MINIMAL);
        let mut t = parse_topology(&p).unwrap();
        t.batteries.push(BatterySpec::new("b", "grid", 10.0));
        let out = dir.path().join("out.json");
        write_topology(&t, &out).unwrap();
        assert_eq!(parse_topology(&out).unwrap(), t);
    }
}

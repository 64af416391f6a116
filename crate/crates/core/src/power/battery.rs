use serde::{Deserialize, Serialize};

use super::embodied::{EmbodiedAsset, BATTERY_EMBODIED_KG_PER_KWH, BATTERY_LIFESPAN_H};
use super::PowerError;
use crate::time::MS_PER_HOUR;

/// Default charging speed in kW per kWh of capacity.
pub const DEFAULT_C_RATE: f64 = 3.0;

/// Headroom or charge below this many kWh counts as full or empty.
const SOC_EPSILON_KWH: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatteryMode {
    Charge,
    Discharge,
    #[default]
    Idle,
}

impl BatteryMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BatteryMode::Charge => "charge",
            BatteryMode::Discharge => "discharge",
            BatteryMode::Idle => "idle",
        }
    }
}

/// Power flows of one battery segment, all in watts.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BatteryFlow {
    /// Power drawn from the grid by the battery and the load behind it.
    pub grid_w: f64,
    /// Power flowing into storage.
    pub charge_w: f64,
    /// Power delivered from storage to the load.
    pub discharge_w: f64,
}

/// Stateful energy store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Battery {
    pub capacity_kwh: f64,
    pub soc_kwh: f64,
    /// Charging power per kWh of capacity (kW/kWh).
    pub c_rate: f64,
    /// Maximum discharge power in kW; `None` means `c_rate * capacity`.
    pub discharge_cap_kw: Option<f64>,
    pub embodied_kg_per_kwh: f64,
    pub lifespan_h: f64,
    /// Round-trip efficiency, applied on discharge.
    pub efficiency: f64,
}

impl Battery {
    pub fn new(capacity_kwh: f64) -> Self {
        Battery {
            capacity_kwh,
            soc_kwh: 0.0,
            c_rate: DEFAULT_C_RATE,
            discharge_cap_kw: None,
            embodied_kg_per_kwh: BATTERY_EMBODIED_KG_PER_KWH,
            lifespan_h: BATTERY_LIFESPAN_H,
            efficiency: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), PowerError> {
        let bad = |reason: &str| Err(PowerError::InvalidBattery(reason.to_string()));
        if !(self.capacity_kwh > 0.0 && self.capacity_kwh.is_finite()) {
            return bad("capacity must be positive");
        }
        if !(0.0..=self.capacity_kwh).contains(&self.soc_kwh) {
            return bad("state of charge must lie in [0, capacity]");
        }
        if !(self.c_rate > 0.0 && self.c_rate.is_finite()) {
            return bad("c_rate must be positive");
        }
        if matches!(self.discharge_cap_kw, Some(c) if !(c >= 0.0)) {
            return bad("discharge cap must be non-negative");
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return bad("efficiency must lie in (0, 1]");
        }
        if !(self.embodied_kg_per_kwh > 0.0 && self.lifespan_h > 0.0) {
            return bad("embodied rate and lifespan must be positive");
        }
        Ok(())
    }

    pub fn max_charge_w(&self) -> f64 {
        self.c_rate * self.capacity_kwh * 1_000.0
    }

    pub fn discharge_cap_w(&self) -> f64 {
        self.discharge_cap_kw.unwrap_or(self.c_rate * self.capacity_kwh) * 1_000.0
    }

    pub fn headroom_kwh(&self) -> f64 {
        (self.capacity_kwh - self.soc_kwh).max(0.0)
    }

    pub fn is_full(&self) -> bool {
        self.headroom_kwh() <= SOC_EPSILON_KWH
    }

    pub fn is_empty(&self) -> bool {
        self.soc_kwh <= SOC_EPSILON_KWH
    }

    pub fn embodied(&self) -> Result<EmbodiedAsset, PowerError> {
        EmbodiedAsset::battery(self.capacity_kwh, self.embodied_kg_per_kwh, self.lifespan_h)
    }

    /// Power flows for holding `mode` over the next `dt_ms` with load `demand_w`.
    ///
    /// Charging runs at `min(c_rate * capacity, headroom / dt)` on top of the
    /// load. Discharging supplies `min(cap, demand, soc * efficiency / dt)`.
    pub fn flow(&self, mode: BatteryMode, demand_w: f64, dt_ms: i64) -> BatteryFlow {
        let demand_w = demand_w.max(0.0);
        let dt_h = dt_ms as f64 / MS_PER_HOUR as f64;
        match mode {
            BatteryMode::Charge if !self.is_full() => {
                let charge_w = self.max_charge_w().min(self.headroom_kwh() * 1_000.0 / dt_h);
                BatteryFlow { grid_w: demand_w + charge_w, charge_w, discharge_w: 0.0 }
            }
            BatteryMode::Discharge if !self.is_empty() => {
                let deliverable_w = self.soc_kwh * self.efficiency * 1_000.0 / dt_h;
                let discharge_w = self.discharge_cap_w().min(demand_w).min(deliverable_w);
                BatteryFlow { grid_w: (demand_w - discharge_w).max(0.0), charge_w: 0.0, discharge_w }
            }
            _ => BatteryFlow { grid_w: demand_w, charge_w: 0.0, discharge_w: 0.0 },
        }
    }

    /// Applies `flow` for `dt_ms` to the state of charge.
    pub fn apply(&mut self, flow: &BatteryFlow, dt_ms: i64) {
        let dt_h = dt_ms as f64 / MS_PER_HOUR as f64;
        let delta = flow.charge_w / 1_000.0 * dt_h - flow.discharge_w / 1_000.0 / self.efficiency * dt_h;
        self.soc_kwh = (self.soc_kwh + delta).clamp(0.0, self.capacity_kwh);
    }

    /// Longest segment (ms) over which `mode` can run at its unconstrained rate
    /// without crossing a state-of-charge bound; `None` if no bound will be hit.
    ///
    /// Always at least 1 ms when a bound is pending, in which case the caller
    /// gets a rate that lands exactly on the bound.
    pub fn segment_to_bound(&self, mode: BatteryMode, demand_w: f64) -> Option<i64> {
        let (energy_kwh, rate_kw) = match mode {
            BatteryMode::Charge if !self.is_full() => (self.headroom_kwh(), self.max_charge_w() / 1_000.0),
            BatteryMode::Discharge if !self.is_empty() => {
                let drain_kw = self.discharge_cap_w().min(demand_w.max(0.0)) / 1_000.0 / self.efficiency;
                (self.soc_kwh, drain_kw)
            }
            _ => return None,
        };
        if rate_kw <= 0.0 {
            return None;
        }
        let ms = (energy_kwh / rate_kw * MS_PER_HOUR as f64).floor();
        Some(if ms < 1.0 { 1 } else { ms.min(i64::MAX as f64 / 4.0) as i64 })
    }
}

/// One battery update: returns the grid draw and the new state of charge.
pub fn battery_step(battery: &Battery, mode: BatteryMode, demand_w: f64, dt_ms: i64) -> (f64, f64) {
    assert!(dt_ms > 0, "battery step needs a positive duration");
    let flow = battery.flow(mode, demand_w, dt_ms);
    let mut next = battery.clone();
    next.apply(&flow, dt_ms);
    (flow.grid_w, next.soc_kwh)
}

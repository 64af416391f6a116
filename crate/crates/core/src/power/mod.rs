//! Device power models, battery storage, and carbon attribution.

mod battery;
mod calibrate;
mod carbon;
mod embodied;
mod model;

use thiserror::Error;

pub use battery::{battery_step, Battery, BatteryFlow, BatteryMode, DEFAULT_C_RATE};
pub use calibrate::{calibrate_power_model, mape, Calibration};
pub use carbon::{operational_carbon, CarbonAccumulator, CarbonSample, CarbonTrace, PowerTimeline};
pub use embodied::{
    embodied_carbon, EmbodiedAsset, BATTERY_EMBODIED_KG_PER_KWH, BATTERY_LIFESPAN_H, HOST_LIFESPAN_H,
};
pub use model::{device_power, PowerModel, PowerShape};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerError {
    #[error("invalid power model: idle {idle_w} W, max {max_w} W (need 0 <= idle <= max)")]
    InvalidPowerModel { idle_w: f64, max_w: f64 },
    #[error("carbon trace '{region}' has no samples")]
    EmptyTrace { region: String },
    #[error("carbon trace '{region}' sample {index} has invalid intensity {value}")]
    NegativeIntensity { region: String, index: usize, value: f64 },
    #[error("carbon trace '{region}' sample {index} does not start after the previous one")]
    UnorderedTrace { region: String, index: usize },
    #[error("invalid embodied asset: {total_embodied_kg} kg over {lifespan_h} h")]
    InvalidAsset { total_embodied_kg: f64, lifespan_h: f64 },
    #[error("invalid battery: {0}")]
    InvalidBattery(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
}

/// Ledger of a run's emissions, split by origin.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CarbonLedger {
    /// Grid-drawn emissions per power source, in source order.
    pub operational_by_source: Vec<(String, f64)>,
    pub embodied_hosts_g: f64,
    pub embodied_batteries_g: f64,
}

impl CarbonLedger {
    pub fn operational_g(&self) -> f64 {
        self.operational_by_source.iter().map(|(_, g)| g).sum()
    }

    pub fn embodied_g(&self) -> f64 {
        self.embodied_hosts_g + self.embodied_batteries_g
    }

    pub fn total_g(&self) -> f64 {
        self.operational_g() + self.embodied_g()
    }
}

use serde::{Deserialize, Serialize};

use super::PowerError;
use crate::time::HOURS_PER_YEAR;

/// Default host lifespan: five 365.25-day years.
pub const HOST_LIFESPAN_H: f64 = 5.0 * HOURS_PER_YEAR;
/// Default battery lifespan: ten 365.25-day years.
pub const BATTERY_LIFESPAN_H: f64 = 10.0 * HOURS_PER_YEAR;
/// Default battery manufacturing footprint per kWh of capacity.
pub const BATTERY_EMBODIED_KG_PER_KWH: f64 = 100.0;

/// Hardware whose manufacturing footprint is amortized over its lifespan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbodiedAsset {
    /// kgCO2-eq for the whole device.
    pub total_embodied_kg: f64,
    pub lifespan_h: f64,
}

impl EmbodiedAsset {
    pub fn new(total_embodied_kg: f64, lifespan_h: f64) -> Result<Self, PowerError> {
        if !(total_embodied_kg > 0.0 && total_embodied_kg.is_finite() && lifespan_h > 0.0 && lifespan_h.is_finite()) {
            return Err(PowerError::InvalidAsset { total_embodied_kg, lifespan_h });
        }
        Ok(EmbodiedAsset { total_embodied_kg, lifespan_h })
    }

    pub fn battery(capacity_kwh: f64, kg_per_kwh: f64, lifespan_h: f64) -> Result<Self, PowerError> {
        Self::new(capacity_kwh * kg_per_kwh, lifespan_h)
    }
}

/// Grams of embodied carbon attributed to `used_h` hours of the asset's life.
pub fn embodied_carbon(asset: &EmbodiedAsset, used_h: f64) -> f64 {
    let used_h = used_h.max(0.0);
    if used_h > asset.lifespan_h {
        log::warn!("usage of {used_h} h exceeds asset lifespan of {} h; extrapolating linearly", asset.lifespan_h);
    }
    asset.total_embodied_kg * 1_000.0 * used_h / asset.lifespan_h
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lifespan_constants() {
        assert_eq!(HOST_LIFESPAN_H, 43_830.0);
        assert_eq!(BATTERY_LIFESPAN_H, 87_660.0);
    }

    #[test]
    fn host_share_over_a_long_trace() {
        // 1,022 kg host used for 124 days.
        let host = EmbodiedAsset::new(1022.0, HOST_LIFESPAN_H).unwrap();
        let kg = embodied_carbon(&host, 124.0 * 24.0) / 1000.0;
        assert!((kg - 69.392).abs() < 5e-3, "{kg}");
    }

    #[test]
    fn battery_share_over_a_month() {
        let battery = EmbodiedAsset::battery(100.0, BATTERY_EMBODIED_KG_PER_KWH, BATTERY_LIFESPAN_H).unwrap();
        assert_eq!(battery.total_embodied_kg, 10_000.0);
        let kg = embodied_carbon(&battery, 720.0) / 1000.0;
        assert!((kg - 82.136).abs() < 5e-3, "{kg}");
    }

    #[test]
    fn zero_use_and_extrapolation() {
        let a = EmbodiedAsset::new(10.0, 100.0).unwrap();
        assert_eq!(embodied_carbon(&a, 0.0), 0.0);
        assert_eq!(embodied_carbon(&a, 200.0), 20_000.0);
        assert!(EmbodiedAsset::new(0.0, 1.0).is_err());
        assert!(EmbodiedAsset::new(1.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn linear_in_usage(kg in 0.1f64..1e4, life in 1.0f64..1e5, a in 0.0f64..1e5, b in 0.0f64..1e5) {
            let asset = EmbodiedAsset::new(kg, life).unwrap();
            let sum = embodied_carbon(&asset, a) + embodied_carbon(&asset, b);
            let joint = embodied_carbon(&asset, a + b);
            prop_assert!((sum - joint).abs() <= 1e-9 * joint.max(1.0));
        }
    }
}

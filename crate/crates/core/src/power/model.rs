use serde::{Deserialize, Serialize};

use super::PowerError;

/// Shape of the utilization-to-power curve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PowerShape {
    Sqrt,
    Linear,
    Square,
    Cubic,
}

impl PowerShape {
    pub const ALL: [PowerShape; 4] = [PowerShape::Sqrt, PowerShape::Linear, PowerShape::Square, PowerShape::Cubic];

    /// Normalized curve value for `u` in [0, 1].
    pub fn curve(self, u: f64) -> f64 {
        match self {
            PowerShape::Sqrt => u.sqrt(),
            PowerShape::Linear => u,
            PowerShape::Square => u * u,
            PowerShape::Cubic => u * u * u,
        }
    }
}

/// Statistical device power model: `idle + (max - idle) * f(u)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerModel {
    pub shape: PowerShape,
    pub idle_w: f64,
    pub max_w: f64,
}

impl PowerModel {
    pub fn new(shape: PowerShape, idle_w: f64, max_w: f64) -> Result<Self, PowerError> {
        let model = PowerModel { shape, idle_w, max_w };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), PowerError> {
        if !(self.idle_w.is_finite() && self.max_w.is_finite()) || self.idle_w < 0.0 || self.idle_w > self.max_w {
            return Err(PowerError::InvalidPowerModel { idle_w: self.idle_w, max_w: self.max_w });
        }
        Ok(())
    }

    /// Power above idle at utilization `u` (already clamped).
    pub fn dynamic_power(&self, u: f64) -> f64 {
        (self.max_w - self.idle_w) * self.shape.curve(u)
    }
}

/// Device power draw in watts at utilization `u`.
///
/// Utilization outside [0, 1] is treated as trace noise: it is clamped and
/// reported once through the log.
pub fn device_power(model: &PowerModel, u: f64) -> f64 {
    let clamped = clamp_utilization(u);
    model.idle_w + model.dynamic_power(clamped)
}

pub(crate) fn clamp_utilization(u: f64) -> f64 {
    if u.is_nan() {
        log::warn!("utilization is NaN; treating as 0");
        return 0.0;
    }
    if !(0.0..=1.0).contains(&u) {
        // Tiny overshoots come from summing fragment demands.
        if u > 1.0 + 1e-9 || u < -1e-9 {
            log::warn!("utilization {u} outside [0, 1]; clamping");
        }
        return u.clamp(0.0, 1.0);
    }
    u
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_points() {
        let sqrt = PowerModel::new(PowerShape::Sqrt, 50.0, 150.0).unwrap();
        assert_eq!(device_power(&sqrt, 0.0), 50.0);
        assert_eq!(device_power(&sqrt, 0.25), 100.0);
        assert_eq!(device_power(&sqrt, 1.0), 150.0);

        let linear = PowerModel::new(PowerShape::Linear, 30.0, 300.0).unwrap();
        assert_eq!(device_power(&linear, 0.5), 165.0);

        let square = PowerModel::new(PowerShape::Square, 0.0, 100.0).unwrap();
        assert_eq!(device_power(&square, 0.5), 25.0);
        let cubic = PowerModel::new(PowerShape::Cubic, 0.0, 100.0).unwrap();
        assert_eq!(device_power(&cubic, 0.5), 12.5);
    }

    #[test]
    fn out_of_range_utilization_is_clamped() {
        let m = PowerModel::new(PowerShape::Linear, 10.0, 20.0).unwrap();
        assert_eq!(device_power(&m, 1.7), 20.0);
        assert_eq!(device_power(&m, -0.3), 10.0);
    }

    #[test]
    fn rejects_inverted_bounds() {
        assert!(PowerModel::new(PowerShape::Linear, 200.0, 100.0).is_err());
        assert!(PowerModel::new(PowerShape::Linear, -1.0, 100.0).is_err());
        assert!(PowerModel::new(PowerShape::Linear, 100.0, 100.0).is_ok());
    }

    proptest! {
        #[test]
        fn monotone_in_utilization(
            idle in 0.0f64..500.0,
            span in 0.0f64..500.0,
            a in 0.0f64..=1.0,
            b in 0.0f64..=1.0,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for shape in PowerShape::ALL {
                let m = PowerModel::new(shape, idle, idle + span).unwrap();
                prop_assert!(device_power(&m, lo) <= device_power(&m, hi));
                prop_assert!(device_power(&m, lo) >= idle);
                prop_assert!(device_power(&m, hi) <= idle + span + 1e-9);
            }
        }
    }
}

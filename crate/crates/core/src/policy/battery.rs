use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::power::{BatteryMode, CarbonTrace};
use crate::time::{SimTime, MS_PER_DAY};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatteryDecision {
    Charge,
    Discharge,
    Hold,
}

impl BatteryDecision {
    pub fn mode(self) -> BatteryMode {
        match self {
            BatteryDecision::Charge => BatteryMode::Charge,
            BatteryDecision::Discharge => BatteryMode::Discharge,
            BatteryDecision::Hold => BatteryMode::Idle,
        }
    }
}

/// Discharge above the threshold; charge at or below it once the intensity
/// has stopped falling.
pub fn battery_decide(threshold: f64, current_ci: f64, previous_ci: Option<f64>) -> BatteryDecision {
    if current_ci > threshold {
        return BatteryDecision::Discharge;
    }
    match previous_ci {
        Some(prev) if current_ci >= prev => BatteryDecision::Charge,
        Some(_) => BatteryDecision::Hold,
        // No trend information yet.
        None => BatteryDecision::Hold,
    }
}

/// Mean of the trace samples starting in `(now - window, now]`.
/// `None` before the first sample.
pub fn rolling_mean(trace: &CarbonTrace, now: SimTime, window_ms: i64) -> Option<f64> {
    let samples = trace.samples();
    let hi = samples.partition_point(|s| s.start <= now);
    let lo = samples.partition_point(|s| s.start <= now - window_ms);
    if hi <= lo {
        return None;
    }
    let sum: f64 = samples[lo..hi].iter().map(|s| s.intensity).sum();
    Some(sum / (hi - lo) as f64)
}

/// Rolling-mean battery policy with its running state.
#[derive(Clone, Debug, PartialEq)]
pub struct BatteryPolicy {
    pub window_ms: i64,
    pub threshold: Option<f64>,
    pub last_ci: Option<f64>,
}

impl BatteryPolicy {
    pub fn new(window_ms: i64) -> Result<Self, PolicyError> {
        if window_ms <= 0 {
            return Err(PolicyError::InvalidConfig("battery window must be positive".into()));
        }
        Ok(BatteryPolicy { window_ms, threshold: None, last_ci: None })
    }

    /// Recomputes the threshold at `now` and decides. The trend compares the
    /// sample in effect at `now` with the one before it.
    pub fn observe(&mut self, trace: &CarbonTrace, now: SimTime) -> BatteryDecision {
        let Some(idx) = trace.index_at(now) else {
            self.threshold = None;
            return BatteryDecision::Hold;
        };
        let samples = trace.samples();
        let current = samples[idx].intensity;
        let previous = idx.checked_sub(1).map(|i| samples[i].intensity);
        let threshold = rolling_mean(trace, now, self.window_ms).unwrap_or(current);
        self.threshold = Some(threshold);
        self.last_ci = Some(current);
        battery_decide(threshold, current, previous)
    }
}

impl Default for BatteryPolicy {
    fn default() -> Self {
        BatteryPolicy { window_ms: 7 * MS_PER_DAY, threshold: None, last_ci: None }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::MS_PER_HOUR;
    use proptest::prelude::*;

    #[test]
    fn truth_table() {
        assert_eq!(battery_decide(150.0, 200.0, Some(100.0)), BatteryDecision::Discharge);
        assert_eq!(battery_decide(150.0, 120.0, Some(130.0)), BatteryDecision::Hold);
        assert_eq!(battery_decide(150.0, 120.0, Some(110.0)), BatteryDecision::Charge);
        assert_eq!(battery_decide(150.0, 150.0, Some(150.0)), BatteryDecision::Charge);
        assert_eq!(battery_decide(150.0, 120.0, None), BatteryDecision::Hold);
    }

    #[test]
    fn bootstrap_uses_available_history() {
        let trace = CarbonTrace::regular("r", SimTime(0), MS_PER_HOUR, &[100.0, 200.0, 300.0]).unwrap();
        assert_eq!(rolling_mean(&trace, SimTime(-1), 7 * MS_PER_DAY), None);
        assert_eq!(rolling_mean(&trace, SimTime(0), 7 * MS_PER_DAY), Some(100.0));
        assert_eq!(rolling_mean(&trace, SimTime(2 * MS_PER_HOUR), 7 * MS_PER_DAY), Some(200.0));
        assert_eq!(rolling_mean(&trace, SimTime(2 * MS_PER_HOUR), 2 * MS_PER_HOUR), Some(250.0));

        let mut p = BatteryPolicy::default();
        assert_eq!(p.observe(&trace, SimTime(-5)), BatteryDecision::Hold);
        assert_eq!(p.threshold, None);
    }

    proptest! {
        #[test]
        fn threshold_matches_sliding_window(values in prop::collection::vec(0.0f64..500.0, 1..400), at in 0usize..400) {
            let trace = CarbonTrace::regular("r", SimTime(0), MS_PER_HOUR, &values).unwrap();
            let at = at % values.len();
            let mut p = BatteryPolicy::default();
            p.observe(&trace, SimTime(at as i64 * MS_PER_HOUR));
            let lo = (at + 1).saturating_sub(168);
            let window = &values[lo..=at];
            let expected = window.iter().sum::<f64>() / window.len() as f64;
            prop_assert!((p.threshold.unwrap() - expected).abs() <= 1e-9 * expected.max(1.0));
        }
    }
}

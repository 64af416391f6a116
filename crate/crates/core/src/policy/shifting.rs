use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::power::CarbonTrace;
use crate::time::{SimTime, MS_PER_DAY, MS_PER_HOUR};

/// Carbon-aware delay policy: tasks wait while the current intensity is above
/// a percentile of the upcoming intensity forecast, up to a maximum delay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftPolicy {
    #[serde(default = "default_percentile")]
    pub percentile: f64,
    #[serde(default = "default_forecast_window")]
    pub forecast_window_ms: i64,
    #[serde(default = "default_max_delay")]
    pub max_delay_ms: i64,
}

fn default_percentile() -> f64 {
    35.0
}

fn default_forecast_window() -> i64 {
    7 * MS_PER_DAY
}

fn default_max_delay() -> i64 {
    24 * MS_PER_HOUR
}

impl Default for ShiftPolicy {
    fn default() -> Self {
        ShiftPolicy {
            percentile: default_percentile(),
            forecast_window_ms: default_forecast_window(),
            max_delay_ms: default_max_delay(),
        }
    }
}

impl ShiftPolicy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.percentile > 0.0 && self.percentile < 100.0) {
            return Err(PolicyError::InvalidConfig(format!("percentile {} must lie in (0, 100)", self.percentile)));
        }
        if self.max_delay_ms <= 0 {
            return Err(PolicyError::InvalidConfig("max delay must be positive".into()));
        }
        if self.forecast_window_ms <= 0 {
            return Err(PolicyError::EmptyWindow);
        }
        Ok(())
    }

    /// Whether a task submitted at `submission` has exhausted its delay budget.
    pub fn delay_exhausted(&self, submission: SimTime, now: SimTime) -> bool {
        now.since(submission) >= self.max_delay_ms
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShiftDecision {
    RunNow,
    Delay,
}

/// Intensities the forecast window `[now, now + window)` sees: the sample in
/// effect at `now`, every later sample inside the window, and, past the end
/// of the trace, the last value repeated at the trace's cadence.
pub fn forecast_window(trace: &CarbonTrace, now: SimTime, window_ms: i64) -> Vec<f64> {
    let end = now + window_ms;
    let samples = trace.samples();
    let mut values = vec![trace.value_at(now)];
    let from = samples.partition_point(|s| s.start <= now);
    let upto = samples.partition_point(|s| s.start < end);
    values.extend(samples[from..upto.max(from)].iter().map(|s| s.intensity));

    let step = trace.nominal_step();
    let last = samples[samples.len() - 1];
    let mut t = last.start + step;
    if t <= now {
        // Skip to the first cadence point after `now`.
        let k = (now.since(last.start) / step) + 1;
        t = last.start + k * step;
    }
    while t < end {
        values.push(last.intensity);
        t = t + step;
    }
    values
}

/// Nearest-rank percentile: `ceil(p/100 * n)`-th smallest value.
pub fn nearest_rank(values: &mut [f64], percentile: f64) -> Result<f64, PolicyError> {
    if values.is_empty() {
        return Err(PolicyError::EmptyWindow);
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    let rank = ((percentile / 100.0 * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    Ok(values[rank - 1])
}

/// Threshold for `now`: the configured percentile of the next forecast window.
/// The forecast is perfect lookahead into the historical trace.
pub fn shifting_threshold(trace: &CarbonTrace, now: SimTime, policy: &ShiftPolicy) -> Result<f64, PolicyError> {
    if policy.forecast_window_ms <= 0 {
        return Err(PolicyError::EmptyWindow);
    }
    let mut values = forecast_window(trace, now, policy.forecast_window_ms);
    nearest_rank(&mut values, policy.percentile)
}

/// Run when the grid is at or below the threshold, or once the task has
/// waited for the maximum delay.
pub fn shift_decide(
    submission: SimTime,
    now: SimTime,
    threshold: f64,
    current_ci: f64,
    policy: &ShiftPolicy,
) -> ShiftDecision {
    if current_ci <= threshold || policy.delay_exhausted(submission, now) {
        ShiftDecision::RunNow
    } else {
        ShiftDecision::Delay
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopperAction {
    Stop,
    Resume,
}

/// Stop while the intensity exceeds the threshold, resume once it is at or
/// below it. Returns nothing when already in the requested state.
pub fn task_stopper(current_ci: f64, threshold: f64, currently_stopped: bool) -> Option<StopperAction> {
    let want_stopped = current_ci > threshold;
    match (want_stopped, currently_stopped) {
        (true, false) => Some(StopperAction::Stop),
        (false, true) => Some(StopperAction::Resume),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hourly(values: &[f64]) -> CarbonTrace {
        CarbonTrace::regular("r", SimTime(0), MS_PER_HOUR, values).unwrap()
    }

    #[test]
    fn nearest_rank_of_ten_values() {
        let mut v: Vec<f64> = (1..=10).rev().map(|x| x as f64 * 10.0).collect();
        assert_eq!(nearest_rank(&mut v, 35.0).unwrap(), 40.0);
    }

    #[test]
    fn constant_window() {
        let trace = hourly(&[120.0; 200]);
        assert_eq!(shifting_threshold(&trace, SimTime(0), &ShiftPolicy::default()).unwrap(), 120.0);
    }

    #[test]
    fn week_of_hourly_samples_uses_rank_59() {
        // Distinct values 1..=168 in scrambled order; rank 59 -> value 59.
        let values: Vec<f64> = (0..168).map(|i| ((i * 67) % 168 + 1) as f64).collect();
        let trace = hourly(&values);
        let window = forecast_window(&trace, SimTime(0), 7 * MS_PER_DAY);
        assert_eq!(window.len(), 168);
        assert_eq!(shifting_threshold(&trace, SimTime(0), &ShiftPolicy::default()).unwrap(), 59.0);
    }

    #[test]
    fn window_pads_past_trace_end() {
        let trace = hourly(&[10.0, 20.0, 30.0]);
        let w = forecast_window(&trace, SimTime(0), 6 * MS_PER_HOUR);
        assert_eq!(w, vec![10.0, 20.0, 30.0, 30.0, 30.0, 30.0]);
        // Between samples: the in-effect value counts once.
        let w = forecast_window(&trace, SimTime(MS_PER_HOUR / 2), 2 * MS_PER_HOUR);
        assert_eq!(w, vec![10.0, 20.0, 30.0]);
        // Well past the end.
        let w = forecast_window(&trace, SimTime(10 * MS_PER_HOUR + 1), 3 * MS_PER_HOUR);
        assert_eq!(w.len(), 4);
        assert!(w.iter().all(|&v| v == 30.0));
    }

    #[test]
    fn empty_window_rejected() {
        let trace = hourly(&[1.0]);
        let policy = ShiftPolicy { forecast_window_ms: 0, ..ShiftPolicy::default() };
        assert_eq!(shifting_threshold(&trace, SimTime(0), &policy), Err(PolicyError::EmptyWindow));
        assert_eq!(nearest_rank(&mut [], 35.0), Err(PolicyError::EmptyWindow));
    }

    #[test]
    fn decision_truth_table() {
        let p = ShiftPolicy::default();
        let sub = SimTime(0);
        assert_eq!(shift_decide(sub, SimTime(2 * MS_PER_HOUR), 150.0, 200.0, &p), ShiftDecision::Delay);
        assert_eq!(shift_decide(sub, SimTime(24 * MS_PER_HOUR), 150.0, 200.0, &p), ShiftDecision::RunNow);
        assert_eq!(shift_decide(sub, SimTime(MS_PER_HOUR), 150.0, 150.0, &p), ShiftDecision::RunNow);
        assert_eq!(shift_decide(sub, SimTime(MS_PER_HOUR), 150.0, 149.9, &p), ShiftDecision::RunNow);
        assert_eq!(shift_decide(sub, SimTime(24 * MS_PER_HOUR - 1), 150.0, 150.1, &p), ShiftDecision::Delay);
    }

    #[test]
    fn stopper_is_idempotent() {
        assert_eq!(task_stopper(200.0, 150.0, false), Some(StopperAction::Stop));
        assert_eq!(task_stopper(200.0, 150.0, true), None);
        assert_eq!(task_stopper(150.0, 150.0, true), Some(StopperAction::Resume));
        assert_eq!(task_stopper(100.0, 150.0, false), None);
    }

    #[test]
    fn validation() {
        assert!(ShiftPolicy::default().validate().is_ok());
        assert!(ShiftPolicy { percentile: 100.0, ..Default::default() }.validate().is_err());
        assert!(ShiftPolicy { max_delay_ms: 0, ..Default::default() }.validate().is_err());
    }
}

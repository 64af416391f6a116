use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::PowerError;
use crate::time::{watt_ms_to_joules, watt_ms_to_kwh, SimTime, MS_PER_HOUR};

/// One carbon-intensity sample, valid from `start` until the next sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarbonSample {
    pub start: SimTime,
    /// gCO2-eq per kWh.
    pub intensity: f64,
}

/// Carbon-intensity time series of one grid region.
///
/// Values are piecewise constant. Before the first sample the first value
/// applies and after the last sample the last value is held.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarbonTrace {
    region_id: String,
    samples: Vec<CarbonSample>,
}

impl CarbonTrace {
    pub fn new(region_id: impl Into<String>, samples: Vec<CarbonSample>) -> Result<Self, PowerError> {
        let region_id = region_id.into();
        if samples.is_empty() {
            return Err(PowerError::EmptyTrace { region: region_id });
        }
        for (i, s) in samples.iter().enumerate() {
            if !s.intensity.is_finite() || s.intensity < 0.0 {
                return Err(PowerError::NegativeIntensity { region: region_id, index: i, value: s.intensity });
            }
            if i > 0 && samples[i - 1].start >= s.start {
                return Err(PowerError::UnorderedTrace { region: region_id, index: i });
            }
        }
        Ok(CarbonTrace { region_id, samples })
    }

    /// Convenience constructor for a regularly sampled trace.
    pub fn regular(region_id: impl Into<String>, start: SimTime, step_ms: i64, values: &[f64]) -> Result<Self, PowerError> {
        let samples = values
            .iter()
            .enumerate()
            .map(|(i, &intensity)| CarbonSample { start: start + i as i64 * step_ms, intensity })
            .collect();
        Self::new(region_id, samples)
    }

    pub fn into_shared(self) -> Arc<CarbonTrace> {
        Arc::new(self)
    }

    pub fn region_id(&self) -> &str {
        &self.region_id
    }

    pub fn samples(&self) -> &[CarbonSample] {
        &self.samples
    }

    pub fn first_start(&self) -> SimTime {
        self.samples[0].start
    }

    pub fn last_start(&self) -> SimTime {
        self.samples[self.samples.len() - 1].start
    }

    /// Index of the sample in effect at `t`, or `None` before the first sample.
    pub fn index_at(&self, t: SimTime) -> Option<usize> {
        match self.samples.partition_point(|s| s.start <= t) {
            0 => None,
            n => Some(n - 1),
        }
    }

    pub fn value_at(&self, t: SimTime) -> f64 {
        self.samples[self.index_at(t).unwrap_or(0)].intensity
    }

    /// Typical spacing between samples (median gap); one hour for single-sample traces.
    pub fn nominal_step(&self) -> i64 {
        if self.samples.len() < 2 {
            return MS_PER_HOUR;
        }
        let mut gaps: Vec<i64> = self.samples.windows(2).map(|w| w[1].start.since(w[0].start)).collect();
        gaps.sort_unstable();
        gaps[gaps.len() / 2]
    }

    /// End of the interval the trace actually describes (last start + nominal step).
    pub fn coverage_end(&self) -> SimTime {
        self.last_start() + self.nominal_step()
    }

    /// Whether `[t0, t1]` lies inside recorded data, i.e. no holding is needed.
    pub fn covers(&self, t0: SimTime, t1: SimTime) -> bool {
        t0 >= self.first_start() && t1 <= self.coverage_end()
    }

    /// First sample start strictly after `t`.
    pub fn next_change_after(&self, t: SimTime) -> Option<SimTime> {
        let i = self.samples.partition_point(|s| s.start <= t);
        self.samples.get(i).map(|s| s.start)
    }
}

/// Piecewise-constant power signal: each point holds until the next one.
/// Power before the first point is zero.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PowerTimeline {
    points: Vec<(SimTime, f64)>,
}

impl PowerTimeline {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a step. Steps must be pushed in non-decreasing time order; a
    /// step at the same time as the previous one replaces it.
    pub fn push(&mut self, t: SimTime, watts: f64) {
        if let Some(last) = self.points.last_mut() {
            assert!(t >= last.0, "power timeline steps must be time ordered");
            if last.0 == t {
                last.1 = watts;
                return;
            }
        }
        self.points.push((t, watts));
    }

    /// Builds a timeline from disjoint `(start, end, watts)` segments; gaps are zero power.
    pub fn from_segments(segments: &[(SimTime, SimTime, f64)]) -> Self {
        let mut sorted = segments.to_vec();
        sorted.sort_by_key(|s| s.0);
        let mut timeline = PowerTimeline::new();
        for (start, end, watts) in sorted {
            timeline.push(start, watts);
            timeline.push(end, 0.0);
        }
        timeline
    }

    pub fn points(&self) -> &[(SimTime, f64)] {
        &self.points
    }

    pub fn value_at(&self, t: SimTime) -> f64 {
        match self.points.partition_point(|p| p.0 <= t) {
            0 => 0.0,
            n => self.points[n - 1].1,
        }
    }
}

/// Operational carbon in grams emitted by `timeline` over `[t0, t1]` under `trace`.
///
/// Both signals are piecewise constant, so the result is an exact sum over
/// the merged breakpoints. Trace gaps are filled by holding the last value.
pub fn operational_carbon(timeline: &PowerTimeline, trace: &CarbonTrace, t0: SimTime, t1: SimTime) -> f64 {
    if t1 <= t0 {
        return 0.0;
    }
    if !trace.covers(t0, t1) {
        log::warn!(
            "carbon trace '{}' does not cover [{t0}, {t1}]; holding edge values",
            trace.region_id()
        );
    }
    let points = timeline.points();
    let samples = trace.samples();
    let mut pi = points.partition_point(|p| p.0 <= t0);
    let mut si = samples.partition_point(|s| s.start <= t0);
    let mut power = if pi == 0 { 0.0 } else { points[pi - 1].1 };
    let mut ci = samples[si.saturating_sub(1)].intensity;
    let mut cursor = t0;
    let mut grams = 0.0;
    loop {
        let next_p = points.get(pi).map(|p| p.0).filter(|&t| t < t1);
        let next_s = samples.get(si).map(|s| s.start).filter(|&t| t < t1);
        let next = match (next_p, next_s) {
            (Some(a), Some(b)) => a.min(b),
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => t1,
        };
        grams += watt_ms_to_kwh(power, next.since(cursor)) * ci;
        if next == t1 {
            break;
        }
        cursor = next;
        while pi < points.len() && points[pi].0 <= cursor {
            power = points[pi].1;
            pi += 1;
        }
        while si < samples.len() && samples[si].start <= cursor {
            ci = samples[si].intensity;
            si += 1;
        }
    }
    grams
}

/// Incremental energy and carbon integrator for one power signal.
///
/// Power and intensity changes are applied at event times; the elapsed
/// segment is always settled with the values that were in effect during it.
#[derive(Clone, Debug, PartialEq)]
pub struct CarbonAccumulator {
    last: SimTime,
    power_w: f64,
    intensity: f64,
    energy_j: f64,
    carbon_g: f64,
    peak_w: f64,
    window_peak_w: f64,
}

impl CarbonAccumulator {
    pub fn new(start: SimTime, intensity: f64) -> Self {
        CarbonAccumulator {
            last: start,
            power_w: 0.0,
            intensity,
            energy_j: 0.0,
            carbon_g: 0.0,
            peak_w: 0.0,
            window_peak_w: 0.0,
        }
    }

    /// Integrates the current segment up to `now`.
    pub fn advance(&mut self, now: SimTime) {
        let dt = now.since(self.last);
        if dt <= 0 {
            return;
        }
        self.energy_j += watt_ms_to_joules(self.power_w, dt);
        self.carbon_g += watt_ms_to_kwh(self.power_w, dt) * self.intensity;
        self.peak_w = self.peak_w.max(self.power_w);
        self.window_peak_w = self.window_peak_w.max(self.power_w);
        self.last = now;
    }

    pub fn set_power(&mut self, now: SimTime, watts: f64) {
        self.advance(now);
        self.power_w = watts;
    }

    pub fn set_intensity(&mut self, now: SimTime, intensity: f64) {
        self.advance(now);
        self.intensity = intensity;
    }

    pub fn power_w(&self) -> f64 {
        self.power_w
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    pub fn energy_j(&self) -> f64 {
        self.energy_j
    }

    pub fn carbon_g(&self) -> f64 {
        self.carbon_g
    }

    /// Highest power held over a positive-length segment so far.
    pub fn peak_w(&self) -> f64 {
        self.peak_w
    }

    /// Peak since the previous call; resets the window.
    pub fn take_window_peak(&mut self) -> f64 {
        std::mem::take(&mut self.window_peak_w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::MS_PER_HOUR;

    fn hours(h: f64) -> SimTime {
        SimTime::from_hours(h)
    }

    #[test]
    fn one_kilowatt_hour_at_constant_intensity() {
        let trace = CarbonTrace::regular("flat", SimTime(0), MS_PER_HOUR, &[200.0]).unwrap();
        let tl = PowerTimeline::from_segments(&[(hours(0.0), hours(1.0), 1000.0)]);
        assert!((operational_carbon(&tl, &trace, hours(0.0), hours(1.0)) - 200.0).abs() < 1e-12);
    }

    #[test]
    fn two_segments_under_two_intensities() {
        // 2 kW for 0.5 h at 100, then 1 kW for 0.5 h at 300: 100 + 150.
        let trace = CarbonTrace::new(
            "r",
            vec![
                CarbonSample { start: hours(0.0), intensity: 100.0 },
                CarbonSample { start: hours(0.5), intensity: 300.0 },
            ],
        )
        .unwrap();
        let mut tl = PowerTimeline::new();
        tl.push(hours(0.0), 2000.0);
        tl.push(hours(0.5), 1000.0);
        let g = operational_carbon(&tl, &trace, hours(0.0), hours(1.0));
        assert!((g - 250.0).abs() < 1e-9, "{g}");
    }

    #[test]
    fn zero_power_emits_nothing() {
        let trace = CarbonTrace::regular("r", SimTime(0), MS_PER_HOUR, &[50.0, 900.0, 10.0]).unwrap();
        let tl = PowerTimeline::new();
        assert_eq!(operational_carbon(&tl, &trace, hours(0.0), hours(3.0)), 0.0);
    }

    #[test]
    fn holds_last_value_past_trace_end() {
        let trace = CarbonTrace::regular("r", SimTime(0), MS_PER_HOUR, &[100.0, 300.0]).unwrap();
        let tl = PowerTimeline::from_segments(&[(hours(0.0), hours(4.0), 1000.0)]);
        let g = operational_carbon(&tl, &trace, hours(0.0), hours(4.0));
        assert!((g - (100.0 + 3.0 * 300.0)).abs() < 1e-9);
    }

    #[test]
    fn trace_validation() {
        assert!(CarbonTrace::new("e", vec![]).is_err());
        assert!(CarbonTrace::regular("n", SimTime(0), 1, &[1.0, -1.0]).is_err());
        let dup = vec![
            CarbonSample { start: SimTime(5), intensity: 1.0 },
            CarbonSample { start: SimTime(5), intensity: 2.0 },
        ];
        assert!(CarbonTrace::new("d", dup).is_err());
    }

    #[test]
    fn lookup_and_coverage() {
        let trace = CarbonTrace::regular("r", SimTime(1000), 1000, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(trace.value_at(SimTime(0)), 1.0);
        assert_eq!(trace.value_at(SimTime(1999)), 1.0);
        assert_eq!(trace.value_at(SimTime(2000)), 2.0);
        assert_eq!(trace.value_at(SimTime(99_999)), 3.0);
        assert_eq!(trace.next_change_after(SimTime(2000)), Some(SimTime(3000)));
        assert_eq!(trace.next_change_after(SimTime(3000)), None);
        assert!(trace.covers(SimTime(1000), SimTime(4000)));
        assert!(!trace.covers(SimTime(1000), SimTime(4001)));
    }

    #[test]
    fn accumulator_matches_closed_form() {
        let mut acc = CarbonAccumulator::new(SimTime(0), 100.0);
        acc.set_power(SimTime(0), 2000.0);
        acc.set_intensity(hours(0.5), 300.0);
        acc.set_power(hours(0.5), 1000.0);
        acc.advance(hours(1.0));
        assert!((acc.carbon_g() - 250.0).abs() < 1e-9);
        assert!((acc.energy_j() - 1.5 * 3.6e6).abs() < 1e-6);
        assert_eq!(acc.peak_w(), 2000.0);
        assert_eq!(acc.take_window_peak(), 2000.0);
        assert_eq!(acc.take_window_peak(), 0.0);
    }

    #[test]
    fn additive_over_disjoint_intervals() {
        let trace = CarbonTrace::regular("r", SimTime(0), 600_000, &[10.0, 500.0, 40.0, 80.0, 5.0]).unwrap();
        let mut tl = PowerTimeline::new();
        tl.push(SimTime(0), 120.0);
        tl.push(SimTime(777_000), 900.0);
        tl.push(SimTime(2_000_000), 30.0);
        let (a, b, c) = (SimTime(0), SimTime(1_234_567), SimTime(3_000_000));
        let whole = operational_carbon(&tl, &trace, a, c);
        let parts = operational_carbon(&tl, &trace, a, b) + operational_carbon(&tl, &trace, b, c);
        assert!((whole - parts).abs() <= 1e-9 * whole);
    }
}

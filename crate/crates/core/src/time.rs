//! Integer-millisecond time base shared by every trace and the event engine.

use std::fmt;
use std::ops::{Add, Sub};

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

pub const MS_PER_SECOND: i64 = 1_000;
pub const MS_PER_MINUTE: i64 = 60 * MS_PER_SECOND;
pub const MS_PER_HOUR: i64 = 60 * MS_PER_MINUTE;
pub const MS_PER_DAY: i64 = 24 * MS_PER_HOUR;

/// Hours in a 365.25-day year.
pub const HOURS_PER_YEAR: f64 = 8_766.0;

/// Milliseconds since the Unix epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub i64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_hours(h: f64) -> Self {
        SimTime((h * MS_PER_HOUR as f64).round() as i64)
    }

    pub fn millis(self) -> i64 {
        self.0
    }

    pub fn as_hours(self) -> f64 {
        self.0 as f64 / MS_PER_HOUR as f64
    }

    /// Milliseconds elapsed since `earlier`; negative when `earlier` is later.
    pub fn since(self, earlier: SimTime) -> i64 {
        self.0 - earlier.0
    }
}

impl Add<i64> for SimTime {
    type Output = SimTime;

    fn add(self, ms: i64) -> SimTime {
        SimTime(self.0.saturating_add(ms))
    }
}

impl Sub<i64> for SimTime {
    type Output = SimTime;

    fn sub(self, ms: i64) -> SimTime {
        SimTime(self.0.saturating_sub(ms))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Converts a power held for a number of milliseconds into kWh.
pub fn watt_ms_to_kwh(watts: f64, ms: i64) -> f64 {
    watts * ms as f64 / 3.6e9
}

/// Converts a power held for a number of milliseconds into joules.
pub fn watt_ms_to_joules(watts: f64, ms: i64) -> f64 {
    watts * ms as f64 / 1_000.0
}

/// Parses a timestamp cell: either integer epoch milliseconds or an ISO-8601
/// date-time (with or without offset; naive values are read as UTC).
/// Sub-millisecond precision is truncated.
pub fn parse_timestamp(raw: &str) -> Option<SimTime> {
    let s = raw.trim();
    if s.is_empty() {
        return None;
    }
    if let Ok(ms) = s.parse::<i64>() {
        return Some(SimTime(ms));
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(SimTime(dt.timestamp_millis()));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(SimTime(dt.and_utc().timestamp_millis()));
        }
    }
    // Offsets like "+00:00" without seconds, or "Z" suffix on naive formats.
    if let Some(stripped) = s.strip_suffix('Z') {
        return parse_timestamp(stripped);
    }
    None
}

/// Smallest `start + k * step` (k >= 0) that is `>= t`.
pub fn ceil_to_grid(t: SimTime, start: SimTime, step: i64) -> SimTime {
    debug_assert!(step > 0);
    let offset = t.since(start);
    if offset <= 0 {
        return start;
    }
    let k = (offset + step - 1) / step;
    start + k * step
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_epoch_and_iso() {
        assert_eq!(parse_timestamp("1000"), Some(SimTime(1000)));
        assert_eq!(parse_timestamp("1970-01-01T00:00:01Z"), Some(SimTime(1000)));
        assert_eq!(parse_timestamp("1970-01-01T00:00:01.5+00:00"), Some(SimTime(1500)));
        assert_eq!(parse_timestamp("1970-01-01 01:00:00"), Some(SimTime(MS_PER_HOUR)));
        assert_eq!(parse_timestamp("1970-01-01T00:00:00.0009Z"), Some(SimTime(0)));
        assert_eq!(parse_timestamp("yesterday"), None);
        assert_eq!(parse_timestamp(""), None);
    }

    #[test]
    fn grid_ceiling() {
        let s = SimTime(100);
        assert_eq!(ceil_to_grid(SimTime(100), s, 10), SimTime(100));
        assert_eq!(ceil_to_grid(SimTime(101), s, 10), SimTime(110));
        assert_eq!(ceil_to_grid(SimTime(110), s, 10), SimTime(110));
        assert_eq!(ceil_to_grid(SimTime(50), s, 10), SimTime(100));
    }

    #[test]
    fn unit_conversions() {
        assert_eq!(watt_ms_to_kwh(1000.0, MS_PER_HOUR), 1.0);
        assert_eq!(watt_ms_to_joules(2.0, 1500), 3.0);
    }
}

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::io::{FailureScope, FailureTrace};
use crate::time::{SimTime, MS_PER_HOUR};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostFailure {
    pub host: usize,
    pub start: SimTime,
    pub duration_ms: i64,
}

impl HostFailure {
    pub fn end(&self) -> SimTime {
        self.start + self.duration_ms
    }
}

/// Number of hosts a fraction takes down: `ceil(fraction * hosts)`.
pub fn hosts_for_fraction(fraction: f64, hosts: usize) -> usize {
    ((fraction * hosts as f64 - 1e-9).ceil().max(0.0) as usize).min(hosts)
}

/// Expands a failure trace into per-host failures. Hosts are drawn uniformly
/// without replacement per record from a stream seeded by `seed`.
pub fn inject_failures(trace: &FailureTrace, hosts: usize, seed: u64) -> Vec<HostFailure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    if hosts == 0 {
        return out;
    }
    for r in &trace.records {
        let n = match r.scope {
            FailureScope::Fraction(f) => hosts_for_fraction(f, hosts),
            FailureScope::Count(c) => (c as usize).min(hosts),
        };
        let mut chosen = sample(&mut rng, hosts, n).into_vec();
        chosen.sort_unstable();
        out.extend(chosen.into_iter().map(|host| HostFailure { host, start: r.start, duration_ms: r.duration_ms }));
    }
    out
}

/// Merged downtime intervals per host.
pub fn downtime_union(failures: &[HostFailure], hosts: usize) -> Vec<Vec<(SimTime, SimTime)>> {
    let mut per_host: Vec<Vec<(SimTime, SimTime)>> = vec![Vec::new(); hosts];
    for f in failures {
        if f.host < hosts {
            per_host[f.host].push((f.start, f.end()));
        }
    }
    for intervals in &mut per_host {
        intervals.sort();
        let mut merged: Vec<(SimTime, SimTime)> = Vec::with_capacity(intervals.len());
        for &(s, e) in intervals.iter() {
            match merged.last_mut() {
                Some(last) if s <= last.1 => last.1 = last.1.max(e),
                _ => merged.push((s, e)),
            }
        }
        *intervals = merged;
    }
    per_host
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointConfig {
    #[serde(default = "default_interval")]
    pub interval_ms: i64,
    #[serde(default)]
    pub snapshot_cost_ms: i64,
}

fn default_interval() -> i64 {
    MS_PER_HOUR
}

impl Default for CheckpointConfig {
    fn default() -> Self {
        CheckpointConfig { interval_ms: default_interval(), snapshot_cost_ms: 0 }
    }
}

impl CheckpointConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.interval_ms <= 0 {
            return Err(PolicyError::InvalidConfig("checkpoint interval must be positive".into()));
        }
        if self.snapshot_cost_ms < 0 {
            return Err(PolicyError::InvalidConfig("snapshot cost must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Restore {
    pub retained_ms: i64,
    pub lost_ms: i64,
}

/// Progress kept after an interruption, measured in executed fragment time.
pub fn checkpoint_restore(progress_ms: i64, cfg: Option<&CheckpointConfig>) -> Restore {
    let retained_ms = match cfg {
        Some(c) => progress_ms.div_euclid(c.interval_ms) * c.interval_ms,
        None => 0,
    };
    Restore { retained_ms, lost_ms: progress_ms - retained_ms }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::FailureRecord;
    use crate::time::MS_PER_MINUTE;

    fn trace(scope: FailureScope) -> FailureTrace {
        FailureTrace { records: vec![FailureRecord { start: SimTime(10), duration_ms: 5, scope }] }
    }

    #[test]
    fn fraction_rounds_up() {
        assert_eq!(hosts_for_fraction(0.25, 10), 3);
        assert_eq!(hosts_for_fraction(1.0, 10), 10);
        assert_eq!(hosts_for_fraction(0.3, 10), 3);
        assert_eq!(inject_failures(&trace(FailureScope::Fraction(0.25)), 10, 1).len(), 3);
    }

    #[test]
    fn full_fraction_takes_all_hosts() {
        let f = inject_failures(&trace(FailureScope::Fraction(1.0)), 7, 3);
        assert_eq!(f.iter().map(|f| f.host).collect::<Vec<_>>(), (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn seeded_selection_is_deterministic() {
        let t = FailureTrace {
            records: (0..20)
                .map(|i| FailureRecord { start: SimTime(i * 100), duration_ms: 50, scope: FailureScope::Fraction(0.3) })
                .collect(),
        };
        assert_eq!(inject_failures(&t, 50, 9), inject_failures(&t, 50, 9));
        assert_ne!(inject_failures(&t, 50, 9), inject_failures(&t, 50, 10));
    }

    #[test]
    fn explicit_counts_capped_at_host_total() {
        assert_eq!(inject_failures(&trace(FailureScope::Count(2)), 10, 0).len(), 2);
        assert_eq!(inject_failures(&trace(FailureScope::Count(20)), 4, 0).len(), 4);
    }

    #[test]
    fn overlapping_downtime_unions() {
        let fs = [
            HostFailure { host: 0, start: SimTime(0), duration_ms: 10 },
            HostFailure { host: 0, start: SimTime(5), duration_ms: 10 },
            HostFailure { host: 0, start: SimTime(30), duration_ms: 1 },
            HostFailure { host: 1, start: SimTime(2), duration_ms: 2 },
        ];
        let u = downtime_union(&fs, 2);
        assert_eq!(u[0], vec![(SimTime(0), SimTime(15)), (SimTime(30), SimTime(31))]);
        assert_eq!(u[1], vec![(SimTime(2), SimTime(4))]);
    }

    #[test]
    fn checkpoint_arithmetic() {
        let cfg = CheckpointConfig::default();
        let r = checkpoint_restore(3 * MS_PER_HOUR + 40 * MS_PER_MINUTE, Some(&cfg));
        assert_eq!(r.retained_ms, 3 * MS_PER_HOUR);
        assert_eq!(r.lost_ms, 40 * MS_PER_MINUTE);
        assert_eq!(checkpoint_restore(2 * MS_PER_HOUR, Some(&cfg)).lost_ms, 0);
        assert_eq!(checkpoint_restore(2 * MS_PER_HOUR, None).retained_ms, 0);
    }
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::io::Task;

/// Countable host resources.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resources {
    pub cores: u32,
    pub memory_mib: u64,
    pub gpus: u32,
}

impl Resources {
    pub fn of_task(task: &Task) -> Self {
        Resources { cores: task.cpu_cores, memory_mib: task.memory_mib, gpus: task.gpu_count }
    }

    pub fn fits_in(&self, other: &Resources) -> bool {
        self.cores <= other.cores && self.memory_mib <= other.memory_mib && self.gpus <= other.gpus
    }

    pub fn take(&mut self, r: &Resources) {
        self.cores -= r.cores;
        self.memory_mib -= r.memory_mib;
        self.gpus -= r.gpus;
    }

    pub fn give(&mut self, r: &Resources) {
        self.cores += r.cores;
        self.memory_mib += r.memory_mib;
        self.gpus += r.gpus;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weigher {
    /// Prefers hosts with more free memory.
    Ram,
    /// Prefers hosts with more free cores.
    Cores,
    Gpus,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeigherSpec {
    pub weigher: Weigher,
    /// Positive spreads load, negative packs it.
    #[serde(default = "one")]
    pub multiplier: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerConfig {
    #[serde(default = "fifo")]
    pub policy: String,
    #[serde(default)]
    pub weighers: Vec<WeigherSpec>,
    /// Let later tasks start when the queue head cannot be placed.
    #[serde(default)]
    pub backfill: bool,
}

fn fifo() -> String {
    "fifo".into()
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig { policy: fifo(), weighers: Vec::new(), backfill: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HostSlot {
    pub capacity: Resources,
    pub free: Resources,
    pub up: bool,
}

impl HostSlot {
    pub fn new(capacity: Resources) -> Self {
        HostSlot { capacity, free: capacity, up: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Placement {
    pub task: usize,
    pub host: usize,
}

/// Pending queue and host view. Queue keys are task indices in submission
/// order, so iteration order is FIFO order.
#[derive(Clone, Debug, Default)]
pub struct SchedulerState {
    pub queue: BTreeMap<usize, Resources>,
    pub hosts: Vec<HostSlot>,
    pub config: SchedulerConfig,
}

impl SchedulerState {
    pub fn new(hosts: Vec<HostSlot>, config: SchedulerConfig) -> Self {
        SchedulerState { queue: BTreeMap::new(), hosts, config }
    }

    /// Whether some host could hold `demand` if it were empty.
    pub fn fits_anywhere(&self, demand: &Resources) -> bool {
        self.hosts.iter().any(|h| demand.fits_in(&h.capacity))
    }

    fn score(&self, host: &HostSlot) -> f64 {
        self.config
            .weighers
            .iter()
            .map(|w| {
                let (free, cap) = match w.weigher {
                    Weigher::Ram => (host.free.memory_mib as f64, host.capacity.memory_mib as f64),
                    Weigher::Cores => (host.free.cores as f64, host.capacity.cores as f64),
                    Weigher::Gpus => (host.free.gpus as f64, host.capacity.gpus as f64),
                };
                if cap > 0.0 {
                    w.multiplier * free / cap
                } else {
                    0.0
                }
            })
            .sum()
    }

    /// Host passing the filters with the best weigher score; lowest id wins ties.
    pub fn select_host(&self, demand: &Resources) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, h) in self.hosts.iter().enumerate() {
            if !h.up || !demand.fits_in(&h.free) {
                continue;
            }
            let s = self.score(h);
            if best.map_or(true, |(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        best.map(|(i, _)| i)
    }
}

/// One FIFO pass. Tasks for which `eligible` is false are skipped without
/// blocking the queue. The first eligible task that cannot be placed stops
/// the pass unless backfilling is on.
pub fn fifo_schedule(state: &mut SchedulerState, mut eligible: impl FnMut(usize) -> bool) -> Vec<Placement> {
    let mut placements = Vec::new();
    let candidates: Vec<(usize, Resources)> = state.queue.iter().map(|(&t, &r)| (t, r)).collect();
    for (task, demand) in candidates {
        if !eligible(task) {
            continue;
        }
        match state.select_host(&demand) {
            Some(host) => {
                state.hosts[host].free.take(&demand);
                state.queue.remove(&task);
                placements.push(Placement { task, host });
            }
            None if state.config.backfill || !state.fits_anywhere(&demand) => continue,
            None => break,
        }
    }
    placements
}

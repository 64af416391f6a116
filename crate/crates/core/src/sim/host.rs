use crate::io::Task;
use crate::policy::CheckpointConfig;
use crate::time::SimTime;

/// Wall-clock interval a task spent on a host. Work segments advance progress
/// one-for-one from `progress_start`; snapshot segments do not advance it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExecSegment {
    pub task: usize,
    pub host: usize,
    pub start: SimTime,
    pub end: SimTime,
    pub progress_start: i64,
    pub snapshot: bool,
}

/// Cumulative fragment end offsets of a task.
#[derive(Clone, Debug)]
pub(crate) struct Profile {
    pub ends: Vec<i64>,
}

impl Profile {
    pub fn of(task: &Task) -> Self {
        let mut acc = 0;
        let ends = task
            .fragments
            .iter()
            .map(|f| {
                acc += f.duration_ms;
                acc
            })
            .collect();
        Profile { ends }
    }

    pub fn total(&self) -> i64 {
        *self.ends.last().unwrap_or(&0)
    }

    pub fn fragment_at(&self, progress: i64) -> usize {
        self.ends.partition_point(|&e| e <= progress).min(self.ends.len() - 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct RunningTask {
    pub task: usize,
    pub progress_ms: i64,
    pub phase_start: SimTime,
    /// Set while a snapshot is being written.
    pub snapshot_until: Option<SimTime>,
    /// Progress preserved by the last completed snapshot.
    pub checkpoint_ms: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum RemoveMode {
    Failure,
    Pause,
}

/// Execution state of one host.
#[derive(Clone, Debug)]
pub(crate) struct HostExec {
    pub index: usize,
    pub cores: u32,
    pub core_speed_mhz: f64,
    pub gpus: u32,
    pub running: Vec<RunningTask>,
    pub down_count: u32,
}

impl HostExec {
    pub fn new(index: usize, cores: u32, core_speed_mhz: f64, gpus: u32) -> Self {
        HostExec { index, cores, core_speed_mhz, gpus, running: Vec::new(), down_count: 0 }
    }

    pub fn is_up(&self) -> bool {
        self.down_count == 0
    }

    pub fn place(&mut self, task: usize, progress_ms: i64, now: SimTime) {
        let rt = RunningTask { task, progress_ms, phase_start: now, snapshot_until: None, checkpoint_ms: progress_ms };
        let pos = self.running.partition_point(|r| r.task < task);
        self.running.insert(pos, rt);
    }

    fn next_boundary(profile: &Profile, progress: i64, ckpt: Option<&CheckpointConfig>) -> i64 {
        let mut b = profile.ends[profile.fragment_at(progress)];
        if let Some(c) = ckpt.filter(|c| c.snapshot_cost_ms > 0) {
            let k = (progress / c.interval_ms + 1) * c.interval_ms;
            b = b.min(k);
        }
        b.min(profile.total())
    }

    /// Runs every task forward to `now`. Returns the tasks that completed.
    pub fn advance(
        &mut self,
        now: SimTime,
        profiles: &[Profile],
        ckpt: Option<&CheckpointConfig>,
        segments: &mut Vec<ExecSegment>,
    ) -> Vec<usize> {
        let mut finished = Vec::new();
        let host = self.index;
        self.running.retain_mut(|rt| {
            let profile = &profiles[rt.task];
            loop {
                if let Some(until) = rt.snapshot_until {
                    if until > now {
                        return true;
                    }
                    segments.push(ExecSegment {
                        task: rt.task,
                        host,
                        start: rt.phase_start,
                        end: until,
                        progress_start: rt.progress_ms,
                        snapshot: true,
                    });
                    rt.checkpoint_ms = rt.progress_ms;
                    rt.snapshot_until = None;
                    rt.phase_start = until;
                    continue;
                }
                let b = Self::next_boundary(profile, rt.progress_ms, ckpt);
                let end = rt.phase_start + (b - rt.progress_ms);
                if end > now {
                    return true;
                }
                segments.push(ExecSegment {
                    task: rt.task,
                    host,
                    start: rt.phase_start,
                    end,
                    progress_start: rt.progress_ms,
                    snapshot: false,
                });
                rt.progress_ms = b;
                rt.phase_start = end;
                if b >= profile.total() {
                    finished.push(rt.task);
                    return false;
                }
                if let Some(c) = ckpt.filter(|c| c.snapshot_cost_ms > 0 && b % c.interval_ms == 0) {
                    rt.snapshot_until = Some(end + c.snapshot_cost_ms);
                }
            }
        });
        finished
    }

    /// Earliest time a running task changes phase.
    pub fn next_due(&self, profiles: &[Profile], ckpt: Option<&CheckpointConfig>) -> Option<SimTime> {
        self.running
            .iter()
            .map(|rt| match rt.snapshot_until {
                Some(until) => until,
                None => rt.phase_start + (Self::next_boundary(&profiles[rt.task], rt.progress_ms, ckpt) - rt.progress_ms),
            })
            .min()
    }

    /// Takes tasks off the host at `now` (after `advance`) and returns the
    /// progress each keeps.
    pub fn remove(
        &mut self,
        tasks: Option<&[usize]>,
        now: SimTime,
        mode: RemoveMode,
        ckpt: Option<&CheckpointConfig>,
        segments: &mut Vec<ExecSegment>,
    ) -> Vec<(usize, i64)> {
        let mut out = Vec::new();
        let host = self.index;
        self.running.retain(|rt| {
            if tasks.is_some_and(|ts| !ts.contains(&rt.task)) {
                return true;
            }
            let progress = match rt.snapshot_until {
                Some(_) => rt.progress_ms,
                None => rt.progress_ms + now.since(rt.phase_start),
            };
            if now > rt.phase_start {
                segments.push(ExecSegment {
                    task: rt.task,
                    host,
                    start: rt.phase_start,
                    end: now,
                    progress_start: rt.progress_ms,
                    snapshot: rt.snapshot_until.is_some(),
                });
            }
            let retained = match (ckpt, mode) {
                (None, RemoveMode::Pause) => progress,
                (None, RemoveMode::Failure) => 0,
                (Some(c), _) if c.snapshot_cost_ms == 0 => progress / c.interval_ms * c.interval_ms,
                (Some(_), _) => rt.checkpoint_ms,
            };
            out.push((rt.task, retained));
            false
        });
        out
    }

    /// CPU utilization, GPU utilization and memory in use.
    pub fn load(&self, tasks: &[Task], profiles: &[Profile]) -> (f64, f64, u64) {
        let mut mhz = 0.0;
        let mut gpu = 0.0;
        let mut mem = 0;
        for rt in &self.running {
            let task = &tasks[rt.task];
            let f = &task.fragments[profiles[rt.task].fragment_at(rt.progress_ms)];
            mhz += f.cpu_usage_mhz;
            gpu += f.gpu_usage * task.gpu_count as f64;
            mem += task.memory_mib;
        }
        let cpu_util = mhz / (self.cores as f64 * self.core_speed_mhz);
        let gpu_util = if self.gpus > 0 { gpu / self.gpus as f64 } else { 0.0 };
        (cpu_util, gpu_util, mem)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::Fragment;
    use crate::policy::checkpoint_restore;
    use crate::time::{MS_PER_HOUR, MS_PER_MINUTE};
    use proptest::prelude::*;

    fn task(durations: &[i64]) -> Task {
        let mut t = Task::simple("t", SimTime(0), 1, 1, 1000.0);
        t.fragments = durations.iter().map(|&d| Fragment { duration_ms: d, cpu_usage_mhz: 500.0, gpu_usage: 0.0 }).collect();
        t
    }

    #[test]
    fn runs_fragments_to_completion() {
        let tasks = [task(&[100, 50])];
        let profiles: Vec<_> = tasks.iter().map(Profile::of).collect();
        let mut h = HostExec::new(0, 1, 1000.0, 0);
        let mut segs = Vec::new();
        h.place(0, 0, SimTime(10));
        assert_eq!(h.next_due(&profiles, None), Some(SimTime(110)));
        assert!(h.advance(SimTime(109), &profiles, None, &mut segs).is_empty());
        assert!(h.advance(SimTime(110), &profiles, None, &mut segs).is_empty());
        assert_eq!(h.next_due(&profiles, None), Some(SimTime(160)));
        assert_eq!(h.advance(SimTime(160), &profiles, None, &mut segs), vec![0]);
        assert_eq!(segs.len(), 2);
        assert!(h.running.is_empty());
    }

    #[test]
    fn failure_keeps_last_checkpoint() {
        let tasks = [task(&[5 * MS_PER_HOUR])];
        let profiles: Vec<_> = tasks.iter().map(Profile::of).collect();
        let ckpt = CheckpointConfig::default();
        let mut h = HostExec::new(0, 1, 1000.0, 0);
        let mut segs = Vec::new();
        h.place(0, 0, SimTime(0));
        let t = SimTime(3 * MS_PER_HOUR + 40 * MS_PER_MINUTE);
        h.advance(t, &profiles, Some(&ckpt), &mut segs);
        let kept = h.remove(None, t, RemoveMode::Failure, Some(&ckpt), &mut segs);
        assert_eq!(kept, vec![(0, 3 * MS_PER_HOUR)]);

        h.place(0, 0, SimTime(0));
        let kept = h.remove(None, t, RemoveMode::Failure, None, &mut segs);
        assert_eq!(kept, vec![(0, 0)]);
        h.place(0, 0, SimTime(0));
        let kept = h.remove(None, t, RemoveMode::Pause, None, &mut segs);
        assert_eq!(kept, vec![(0, t.0)]);
    }

    #[test]
    fn snapshot_cost_delays_completion() {
        let tasks = [task(&[3 * MS_PER_HOUR])];
        let profiles: Vec<_> = tasks.iter().map(Profile::of).collect();
        let ckpt = CheckpointConfig { interval_ms: MS_PER_HOUR, snapshot_cost_ms: 10 * MS_PER_MINUTE };
        let mut h = HostExec::new(0, 1, 1000.0, 0);
        let mut segs = Vec::new();
        h.place(0, 0, SimTime(0));
        let mut now = SimTime(0);
        let mut done = Vec::new();
        while let Some(t) = h.next_due(&profiles, Some(&ckpt)) {
            now = t;
            done.extend(h.advance(now, &profiles, Some(&ckpt), &mut segs));
        }
        assert_eq!(done, vec![0]);
        // Two snapshots (at 1 h and 2 h of progress), none at completion.
        assert_eq!(now, SimTime(3 * MS_PER_HOUR + 20 * MS_PER_MINUTE));

        // Interrupted during the second snapshot: only the first one counts.
        h.place(0, 0, SimTime(0));
        let t = SimTime(2 * MS_PER_HOUR + 15 * MS_PER_MINUTE);
        h.advance(t, &profiles, Some(&ckpt), &mut segs);
        assert_eq!(h.remove(None, t, RemoveMode::Failure, Some(&ckpt), &mut segs), vec![(0, MS_PER_HOUR)]);
    }

    proptest! {
        #[test]
        fn zero_cost_restore_matches_floor_rule(progress in 0i64..(10 * MS_PER_HOUR), interval in 1i64..(3 * MS_PER_HOUR)) {
            let tasks = [task(&[10 * MS_PER_HOUR + 1])];
            let profiles: Vec<_> = tasks.iter().map(Profile::of).collect();
            let ckpt = CheckpointConfig { interval_ms: interval, snapshot_cost_ms: 0 };
            let mut h = HostExec::new(0, 1, 1000.0, 0);
            let mut segs = Vec::new();
            h.place(0, 0, SimTime(0));
            h.advance(SimTime(progress), &profiles, Some(&ckpt), &mut segs);
            let kept = h.remove(None, SimTime(progress), RemoveMode::Failure, Some(&ckpt), &mut segs);
            prop_assert_eq!(kept[0].1, checkpoint_restore(progress, Some(&ckpt)).retained_ms);
        }
    }
}

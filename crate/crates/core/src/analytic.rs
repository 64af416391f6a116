//! Closed-form temporal-shifting estimator and brute-force carbon oracle.
//!
//! The estimator treats every task in isolation: unlimited capacity, no idle
//! power, no failures. Comparing it with simulated runs shows what those
//! assumptions hide.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{Task, TopologySpec, Workload};
use crate::policy::{shift_decide, shifting_threshold, ShiftDecision, ShiftPolicy};
use crate::power::CarbonTrace;
use crate::sim::ExecSegment;
use crate::time::{SimTime, MS_PER_HOUR};

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticError {
    #[error("segments [{0}, {1}) and [{2}, {3}) overlap")]
    Overlap(SimTime, SimTime, SimTime, SimTime),
    #[error("segment [{0}, {1}) ends before it starts")]
    Reversed(SimTime, SimTime),
    #[error("task '{0}' does not fit any host group")]
    NoHostGroup(String),
}

/// Power segment `[start, end)` at a constant draw in watts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerSegment {
    pub start: SimTime,
    pub end: SimTime,
    pub watts: f64,
}

/// Grams of CO2 emitted by non-overlapping power segments, by summing every
/// (segment, carbon sample) overlap.
pub fn brute_force_carbon(segments: &[PowerSegment], trace: &CarbonTrace) -> Result<f64, AnalyticError> {
    let mut sorted: Vec<PowerSegment> = segments.to_vec();
    sorted.sort_by_key(|s| (s.start, s.end));
    for s in &sorted {
        if s.end < s.start {
            return Err(AnalyticError::Reversed(s.start, s.end));
        }
    }
    for w in sorted.windows(2) {
        if w[1].start < w[0].end {
            return Err(AnalyticError::Overlap(w[0].start, w[0].end, w[1].start, w[1].end));
        }
    }
    let samples = trace.samples();
    let mut grams = 0.0;
    for seg in &sorted {
        for (i, sample) in samples.iter().enumerate() {
            let from = if i == 0 { i64::MIN } else { sample.start.0 };
            let to = samples.get(i + 1).map_or(i64::MAX, |n| n.start.0);
            let overlap = seg.end.0.min(to) - seg.start.0.max(from);
            if overlap > 0 {
                grams += seg.watts * overlap as f64 / MS_PER_HOUR as f64 / 1000.0 * sample.intensity;
            }
        }
    }
    Ok(grams)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskEstimate {
    pub task_id: String,
    pub original_start: SimTime,
    pub shifted_start: SimTime,
    pub original_emission_g: f64,
    pub shifted_emission_g: f64,
    pub saving_g: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NaiveShiftEstimate {
    pub tasks: Vec<TaskEstimate>,
    pub mean_saving_g: f64,
}

/// Dynamic power of each fragment of `task` on the first host group it fits.
fn fragment_power(task: &Task, topology: &TopologySpec) -> Result<Vec<(i64, f64)>, AnalyticError> {
    let group = topology
        .host_groups
        .iter()
        .find(|g| {
            g.cpu.core_count >= task.cpu_cores
                && g.memory_mib >= task.memory_mib
                && g.gpu.as_ref().map_or(0, |x| x.count) >= task.gpu_count
        })
        .ok_or_else(|| AnalyticError::NoHostGroup(task.id.clone()))?;
    let capacity = group.cpu.core_count as f64 * group.cpu.core_speed_mhz;
    Ok(task
        .fragments
        .iter()
        .map(|f| {
            let mut w = group.cpu.power_model.dynamic_power((f.cpu_usage_mhz / capacity).min(1.0));
            if let Some(gpu) = &group.gpu {
                let u = (f.gpu_usage * task.gpu_count as f64 / gpu.count as f64).min(1.0);
                w += gpu.count as f64 * gpu.power_model.dynamic_power(u);
            }
            (f.duration_ms, w)
        })
        .collect())
}

fn profile_at(start: SimTime, fragments: &[(i64, f64)]) -> Vec<PowerSegment> {
    let mut t = start;
    fragments
        .iter()
        .map(|&(d, watts)| {
            let seg = PowerSegment { start: t, end: t + d, watts };
            t = t + d;
            seg
        })
        .collect()
}

/// First time at or after `submission` the shifting rule lets a task start,
/// checking at submission and at every later carbon sample.
pub fn naive_start(submission: SimTime, trace: &CarbonTrace, policy: &ShiftPolicy) -> SimTime {
    let deadline = submission + policy.max_delay_ms;
    let candidates = std::iter::once(submission)
        .chain(trace.samples().iter().map(|s| s.start).filter(|&t| t > submission && t < deadline))
        .chain(std::iter::once(deadline));
    for t in candidates {
        let threshold = shifting_threshold(trace, t, policy).unwrap_or(f64::INFINITY);
        if shift_decide(submission, t, threshold, trace.value_at(t), policy) == ShiftDecision::RunNow {
            return t;
        }
    }
    deadline
}

/// Per-task emissions at submission time and at the shifted start, each task
/// alone on an idle-free host.
pub fn naive_shift_savings(
    workload: &Workload,
    topology: &TopologySpec,
    trace: &CarbonTrace,
    policy: &ShiftPolicy,
) -> Result<NaiveShiftEstimate, AnalyticError> {
    let mut tasks = Vec::with_capacity(workload.len());
    for task in workload.tasks() {
        let power = fragment_power(task, topology)?;
        let shifted_start = naive_start(task.submission, trace, policy);
        let original = brute_force_carbon(&profile_at(task.submission, &power), trace)?;
        let shifted = brute_force_carbon(&profile_at(shifted_start, &power), trace)?;
        tasks.push(TaskEstimate {
            task_id: task.id.clone(),
            original_start: task.submission,
            shifted_start,
            original_emission_g: original,
            shifted_emission_g: shifted,
            saving_g: original - shifted,
        });
    }
    let mean_saving_g = if tasks.is_empty() {
        0.0
    } else {
        tasks.iter().map(|t| t.saving_g).sum::<f64>() / tasks.len() as f64
    };
    Ok(NaiveShiftEstimate { tasks, mean_saving_g })
}

/// Dynamic-power emissions each task caused in a simulated run, from its
/// execution segments. Snapshot segments draw the power of the fragment they
/// interrupt.
pub fn simulated_task_carbon(
    segments: &[ExecSegment],
    workload: &Workload,
    topology: &TopologySpec,
    trace: &CarbonTrace,
) -> Result<Vec<f64>, AnalyticError> {
    let powers = workload
        .tasks()
        .iter()
        .map(|t| fragment_power(t, topology))
        .collect::<Result<Vec<_>, _>>()?;
    let mut per_task: Vec<Vec<PowerSegment>> = vec![Vec::new(); workload.len()];
    for s in segments {
        let fragments = &powers[s.task];
        let mut acc = 0;
        let mut watts = fragments.last().map_or(0.0, |f| f.1);
        for &(d, w) in fragments {
            acc += d;
            if s.progress_start < acc {
                watts = w;
                break;
            }
        }
        per_task[s.task].push(PowerSegment { start: s.start, end: s.end, watts });
    }
    per_task.iter().map(|segs| brute_force_carbon(segs, trace)).collect()
}

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::error::{csv_error, csv_reader, Columns, InputError, Row};
use crate::time::SimTime;

/// Piecewise-constant segment of a task's resource demand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fragment {
    pub duration_ms: i64,
    /// Total CPU demand in MHz across the task's cores.
    pub cpu_usage_mhz: f64,
    /// Per-GPU utilization in [0, 1].
    pub gpu_usage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub submission: SimTime,
    pub cpu_cores: u32,
    /// MHz per requested core.
    pub cpu_capacity_mhz: f64,
    pub gpu_count: u32,
    pub memory_mib: u64,
    pub fragments: Vec<Fragment>,
    pub deadline: Option<SimTime>,
}

impl Task {
    /// A single-fragment task using `cores` fully for `duration_ms`.
    pub fn simple(id: impl Into<String>, submission: SimTime, duration_ms: i64, cores: u32, core_mhz: f64) -> Self {
        Task {
            id: id.into(),
            submission,
            cpu_cores: cores,
            cpu_capacity_mhz: core_mhz,
            gpu_count: 0,
            memory_mib: 0,
            fragments: vec![Fragment {
                duration_ms,
                cpu_usage_mhz: cores as f64 * core_mhz,
                gpu_usage: 0.0,
            }],
            deadline: None,
        }
    }

    /// Pure work time: the sum of fragment durations.
    pub fn total_duration_ms(&self) -> i64 {
        self.fragments.iter().map(|f| f.duration_ms).sum()
    }

    pub fn requested_mhz(&self) -> f64 {
        self.cpu_cores as f64 * self.cpu_capacity_mhz
    }
}

/// Orders ids numerically when both are integers, lexicographically otherwise.
pub fn compare_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.cmp(b),
    }
}

/// Bag of tasks sorted by `(submission, id)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub name: String,
    tasks: Vec<Task>,
}

impl Workload {
    pub fn new(name: impl Into<String>, mut tasks: Vec<Task>) -> Self {
        tasks.sort_by(|a, b| a.submission.cmp(&b.submission).then_with(|| compare_ids(&a.id, &b.id)));
        Workload { name: name.into(), tasks }
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn mean_duration_ms(&self) -> f64 {
        if self.tasks.is_empty() {
            return 0.0;
        }
        self.tasks.iter().map(|t| t.total_duration_ms() as f64).sum::<f64>() / self.tasks.len() as f64
    }

    /// Multiplies every fragment's CPU usage by `factor` (for traces with
    /// normalized utilization).
    pub fn scale_cpu_usage(&mut self, factor: f64) {
        for t in &mut self.tasks {
            for f in &mut t.fragments {
                f.cpu_usage_mhz *= factor;
            }
        }
    }
}

/// Reads a workload from its task and fragment tables.
///
/// Fragments are attached in file order per task, or by the optional
/// `fragment_index` column when present.
pub fn parse_workload(tasks_path: &Path, fragments_path: &Path) -> Result<Workload, InputError> {
    let mut tasks = read_tasks(tasks_path)?;
    let mut by_id: HashMap<String, usize> = HashMap::with_capacity(tasks.len());
    for (i, t) in tasks.iter().enumerate() {
        if by_id.insert(t.id.clone(), i).is_some() {
            return Err(InputError::DuplicateTask { path: tasks_path.to_path_buf(), task: t.id.clone() });
        }
    }

    let mut reader = csv_reader(fragments_path)?;
    let headers = reader.headers().map_err(|e| csv_error(fragments_path, e))?.clone();
    let cols = Columns::new(fragments_path, headers);
    let c_id = cols.required("id")?;
    let c_dur = cols.required("duration")?;
    let c_cpu = cols.required("cpu_usage")?;
    let c_gpu = cols.optional("gpu_usage");
    let c_idx = cols.optional("fragment_index");

    let mut staged: Vec<Vec<(i64, usize, Fragment)>> = vec![Vec::new(); tasks.len()];
    let mut record = csv::StringRecord::new();
    let mut row_no = 0usize;
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(csv_error(fragments_path, e)),
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row = Row { path: fragments_path, line, record: &record };
        let id = row.str(c_id).to_string();
        let Some(&task_idx) = by_id.get(&id) else {
            return Err(InputError::UnknownTask { path: fragments_path.to_path_buf(), line, task: id });
        };
        let duration_ms = row.millis(c_dur, "duration")?;
        if duration_ms <= 0 {
            return Err(InputError::NonPositiveDuration { path: fragments_path.to_path_buf(), line, value: duration_ms });
        }
        let cpu_usage_mhz: f64 = row.parse(c_cpu, "cpu_usage")?;
        let gpu_usage: f64 = match c_gpu {
            Some(c) if !row.str(c).is_empty() => row.parse(c, "gpu_usage")?,
            _ => 0.0,
        };
        if !(cpu_usage_mhz >= 0.0 && gpu_usage >= 0.0) {
            return Err(InputError::malformed(fragments_path, line, "resource usage must be non-negative"));
        }
        let order = match c_idx {
            Some(c) => row.parse::<i64>(c, "fragment_index")?,
            None => 0,
        };
        let task = &tasks[task_idx];
        let requested = task.requested_mhz();
        let cpu_usage_mhz = if cpu_usage_mhz > requested * (1.0 + 1e-9) && requested > 0.0 {
            log::warn!("{}:{line}: cpu_usage {cpu_usage_mhz} exceeds requested {requested}; clamping", fragments_path.display());
            requested
        } else {
            cpu_usage_mhz
        };
        let gpu_usage = if gpu_usage > 1.0 {
            log::warn!("{}:{line}: gpu_usage {gpu_usage} exceeds 1; clamping", fragments_path.display());
            1.0
        } else {
            gpu_usage
        };
        staged[task_idx].push((order, row_no, Fragment { duration_ms, cpu_usage_mhz, gpu_usage }));
        row_no += 1;
    }

    for (task, mut frags) in tasks.iter_mut().zip(staged) {
        if frags.is_empty() {
            return Err(InputError::NoFragments { path: fragments_path.to_path_buf(), task: task.id.clone() });
        }
        frags.sort_by_key(|&(order, row, _)| (order, row));
        task.fragments = frags.into_iter().map(|(_, _, f)| f).collect();
    }
    let name = tasks_path
        .parent()
        .and_then(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let workload = Workload::new(name, tasks);
    Ok(workload)
}

/// Loads `<dir>/tasks.csv` and `<dir>/fragments.csv`.
pub fn parse_workload_dir(dir: &Path) -> Result<Workload, InputError> {
    parse_workload(&dir.join("tasks.csv"), &dir.join("fragments.csv"))
}

fn read_tasks(path: &Path) -> Result<Vec<Task>, InputError> {
    let mut reader = csv_reader(path)?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols = Columns::new(path, headers);
    let c_id = cols.required("id")?;
    let c_sub = cols.required("submission_time")?;
    let c_dur = cols.required("duration")?;
    let c_cores = cols.required("cpu_count")?;
    let c_cap = cols.required("cpu_capacity")?;
    let c_mem = cols.required("mem_capacity")?;
    let c_gpu = cols.optional("gpu_count");
    let c_deadline = cols.optional("deadline");

    let mut out = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(csv_error(path, e)),
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row = Row { path, line, record: &record };
        let id = row.str(c_id).to_string();
        if id.is_empty() {
            return Err(InputError::malformed(path, line, "empty task id"));
        }
        let submission = row.timestamp(c_sub, "submission_time")?;
        let duration = row.millis(c_dur, "duration")?;
        if duration <= 0 {
            return Err(InputError::NonPositiveDuration { path: path.to_path_buf(), line, value: duration });
        }
        let cpu_cores: u32 = row.parse(c_cores, "cpu_count")?;
        let cpu_capacity_mhz: f64 = row.parse(c_cap, "cpu_capacity")?;
        let memory: f64 = row.parse(c_mem, "mem_capacity")?;
        let gpu_count: u32 = match c_gpu {
            Some(c) if !row.str(c).is_empty() => row.parse(c, "gpu_count")?,
            _ => 0,
        };
        if !(cpu_capacity_mhz >= 0.0 && memory >= 0.0) {
            return Err(InputError::malformed(path, line, "resource requirements must be non-negative"));
        }
        let deadline = match c_deadline {
            Some(c) if !row.str(c).is_empty() => Some(row.timestamp(c, "deadline")?),
            _ => None,
        };
        out.push(Task {
            id,
            submission,
            cpu_cores,
            cpu_capacity_mhz,
            gpu_count,
            memory_mib: memory.round() as u64,
            fragments: Vec::new(),
            deadline,
        });
    }
    Ok(out)
}

/// Writes a workload back to the two-table layout.
pub fn write_workload(workload: &Workload, dir: &Path) -> Result<(), InputError> {
    std::fs::create_dir_all(dir).map_err(|e| InputError::io(dir, e))?;
    let tasks_path = dir.join("tasks.csv");
    let frags_path = dir.join("fragments.csv");
    let mut tw = csv::Writer::from_path(&tasks_path).map_err(|e| csv_error(&tasks_path, e))?;
    tw.write_record(["id", "submission_time", "duration", "cpu_count", "cpu_capacity", "mem_capacity", "gpu_count"])
        .map_err(|e| csv_error(&tasks_path, e))?;
    let mut fw = csv::Writer::from_path(&frags_path).map_err(|e| csv_error(&frags_path, e))?;
    fw.write_record(["id", "duration", "cpu_usage", "gpu_usage"]).map_err(|e| csv_error(&frags_path, e))?;
    for t in workload.tasks() {
        tw.write_record([
            t.id.clone(),
            t.submission.0.to_string(),
            t.total_duration_ms().to_string(),
            t.cpu_cores.to_string(),
            t.cpu_capacity_mhz.to_string(),
            t.memory_mib.to_string(),
            t.gpu_count.to_string(),
        ])
        .map_err(|e| csv_error(&tasks_path, e))?;
        for f in &t.fragments {
            fw.write_record([
                t.id.clone(),
                f.duration_ms.to_string(),
                f.cpu_usage_mhz.to_string(),
                f.gpu_usage.to_string(),
            ])
            .map_err(|e| csv_error(&frags_path, e))?;
        }
    }
    tw.flush().map_err(|e| InputError::io(&tasks_path, e))?;
    fw.flush().map_err(|e| InputError::io(&frags_path, e))?;
    Ok(())
}

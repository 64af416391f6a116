//! Scenario-matrix expansion and the parallel batch runner.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analytic::{naive_shift_savings, simulated_task_carbon};
use crate::io::{
    parse_carbon_trace, parse_failure_trace, parse_topology, parse_workload_dir, BatterySpec, ExperimentSpec,
    FailureTrace, TopologySpec, Workload,
};
use crate::metrics::{
    aggregate, read_summaries, summarize, write_aggregate, write_rows, write_summaries, RunMeta, RunSummary, BASELINE,
};
use crate::policy::{inject_failures, ShiftPolicy};
use crate::power::CarbonTrace;
use crate::sim::{PolicyConfig, RunConfig, RunReport, Simulation, TraceSet};
use crate::SimTime;

/// Region label of runs that use the carbon traces named by the topology.
pub const TOPOLOGY_REGION: &str = "topology";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("output directory {0} already exists; pass --resume to continue it")]
    OutputExists(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid parallelism {0}; need at least 1 worker")]
    Parallelism(usize),
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatteryVariant {
    pub capacity_kwh: f64,
    pub c_rate: f64,
    pub embodied_kg_per_kwh: f64,
}

/// Techniques enabled in one run. All `None`/`false` is the baseline.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TechniqueSet {
    pub host_count: Option<u32>,
    pub battery: Option<BatteryVariant>,
    pub shifting: bool,
    pub stopper: bool,
}

impl TechniqueSet {
    pub fn is_baseline(&self) -> bool {
        *self == TechniqueSet::default()
    }

    /// Short label, e.g. `hs:16+battery:100kWh:3C:100kg+shifting`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if let Some(n) = self.host_count {
            parts.push(format!("hs:{n}"));
        }
        if let Some(b) = self.battery {
            parts.push(format!("battery:{}kWh:{}C:{}kg", b.capacity_kwh, b.c_rate, b.embodied_kg_per_kwh));
        }
        if self.shifting {
            parts.push("shifting".to_string());
        }
        if self.stopper {
            parts.push("stopper".to_string());
        }
        if parts.is_empty() {
            BASELINE.to_string()
        } else {
            parts.join("+")
        }
    }
}

/// Every combination of technique variants, baseline first.
pub fn technique_sets(spec: &ExperimentSpec) -> Vec<TechniqueSet> {
    let t = &spec.techniques;
    let mut hosts = vec![None];
    if let Some(hs) = &t.horizontal_scaling {
        hosts.extend(hs.host_counts.iter().map(|&n| Some(n)));
    }
    let mut batteries = vec![None];
    if let Some(b) = &t.battery {
        for &capacity_kwh in &b.capacities_kwh {
            for &c_rate in &b.c_rates {
                for &embodied_kg_per_kwh in &b.embodied_kg_per_kwh {
                    batteries.push(Some(BatteryVariant { capacity_kwh, c_rate, embodied_kg_per_kwh }));
                }
            }
        }
    }
    let shifting = if t.temporal_shifting.is_some() { vec![false, true] } else { vec![false] };
    let stopper = if t.task_stopper.is_some() { vec![false, true] } else { vec![false] };
    let mut out = Vec::new();
    for &host_count in &hosts {
        for &battery in &batteries {
            for &shifting in &shifting {
                for &stopper in &stopper {
                    out.push(TechniqueSet { host_count, battery, shifting, stopper });
                }
            }
        }
    }
    out
}

/// One cell of the scenario matrix. Paths are as written in the experiment file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub experiment: String,
    pub topology: PathBuf,
    pub workload: PathBuf,
    pub region: String,
    pub carbon_trace: Option<PathBuf>,
    pub techniques: TechniqueSet,
    pub seed: u64,
}

impl RunSpec {
    /// Stable hash of the run's fields.
    pub fn run_id(&self) -> String {
        let json = serde_json::to_string(self).expect("run spec serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..8])
    }
}

fn regions(spec: &ExperimentSpec) -> Vec<(String, Option<PathBuf>)> {
    if spec.carbon_traces.is_empty() {
        return vec![(TOPOLOGY_REGION.to_string(), None)];
    }
    spec.carbon_traces
        .iter()
        .map(|p| (p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(), Some(p.clone())))
        .collect()
}

/// Cross product topology × workload × region × technique set × seed, in that
/// nesting order with each axis in file order.
pub fn expand(spec: &ExperimentSpec) -> Vec<RunSpec> {
    let sets = technique_sets(spec);
    let regions = regions(spec);
    let mut out = Vec::new();
    for topology in &spec.topologies {
        for workload in &spec.workloads {
            for (region, trace) in &regions {
                for techniques in &sets {
                    for &seed in &spec.seeds {
                        out.push(RunSpec {
                            experiment: spec.name.clone(),
                            topology: topology.clone(),
                            workload: workload.clone(),
                            region: region.clone(),
                            carbon_trace: trace.clone(),
                            techniques: *techniques,
                            seed,
                        });
                    }
                }
            }
        }
    }
    out
}

type Loaded<T> = BTreeMap<PathBuf, Result<Arc<T>, String>>;

/// Input files of a matrix, each read once. Load failures are kept per file
/// so they fail only the runs that use them.
pub struct Inputs {
    topologies: Loaded<TopologySpec>,
    workloads: Loaded<Workload>,
    traces: Loaded<CarbonTrace>,
    failures: Option<Result<Arc<FailureTrace>, String>>,
}

fn load<T>(map: &mut Loaded<T>, path: PathBuf, f: impl FnOnce(&Path) -> Result<T, String>) {
    if !map.contains_key(&path) {
        let value = f(&path).map(Arc::new);
        map.insert(path, value);
    }
}

fn lookup<T>(map: &Loaded<T>, path: &Path) -> Result<Arc<T>, String> {
    map.get(path).cloned().unwrap_or_else(|| Err(format!("{}: not loaded", path.display())))
}

impl Inputs {
    pub fn load(spec: &ExperimentSpec, runs: &[RunSpec]) -> Self {
        let mut inputs = Inputs {
            topologies: BTreeMap::new(),
            workloads: BTreeMap::new(),
            traces: BTreeMap::new(),
            failures: None,
        };
        for run in runs {
            let topo_path = spec.resolve(&run.topology);
            load(&mut inputs.topologies, topo_path.clone(), |p| parse_topology(p).map_err(|e| e.to_string()));
            load(&mut inputs.workloads, spec.resolve(&run.workload), |p| {
                let mut w = parse_workload_dir(p).map_err(|e| e.to_string())?;
                if spec.cpu_usage_scale != 1.0 {
                    w.scale_cpu_usage(spec.cpu_usage_scale);
                }
                Ok(w)
            });
            match &run.carbon_trace {
                Some(t) => load(&mut inputs.traces, spec.resolve(t), |p| parse_carbon_trace(p).map_err(|e| e.to_string())),
                None => {
                    if let Some(Ok(topo)) = inputs.topologies.get(&topo_path).cloned() {
                        let dir = topo_path.parent().unwrap_or(Path::new(""));
                        for src in &topo.power_sources {
                            if let Some(t) = &src.carbon_trace {
                                load(&mut inputs.traces, dir.join(t), |p| parse_carbon_trace(p).map_err(|e| e.to_string()));
                            }
                        }
                    }
                }
            }
        }
        if let Some(f) = &spec.failures {
            let path = spec.resolve(&f.trace);
            inputs.failures = Some(parse_failure_trace(&path).map(Arc::new).map_err(|e| e.to_string()));
        }
        inputs
    }
}

/// Everything one run needs, assembled from the matrix cell and its inputs.
pub struct Scenario {
    pub topology: TopologySpec,
    pub workload: Arc<Workload>,
    pub policies: PolicyConfig,
    pub traces: TraceSet,
    pub config: RunConfig,
    pub meta: RunMeta,
}

pub fn scenario(spec: &ExperimentSpec, run: &RunSpec, inputs: &Inputs) -> Result<Scenario, String> {
    let topo_path = spec.resolve(&run.topology);
    let base = lookup(&inputs.topologies, &topo_path)?;
    let workload = lookup(&inputs.workloads, &spec.resolve(&run.workload))?;
    let tech = &run.techniques;

    let mut topology = (*base).clone();
    if let Some(n) = tech.host_count {
        for g in &mut topology.host_groups {
            g.count = n;
        }
    }
    if let (Some(v), Some(b)) = (tech.battery, &spec.techniques.battery) {
        topology.batteries = topology
            .power_sources
            .iter()
            .map(|src| BatterySpec {
                c_rate: v.c_rate,
                embodied_kg_per_kwh: v.embodied_kg_per_kwh,
                efficiency: b.efficiency,
                discharge_cap_kw: b.discharge_cap_kw,
                policy: b.policy.clone(),
                window_ms: b.window_ms,
                ..BatterySpec::new(format!("battery-{}", src.id), src.id.clone(), v.capacity_kwh)
            })
            .collect();
    }
    topology.validate(&topo_path).map_err(|e| e.to_string())?;

    let mut carbon = BTreeMap::new();
    for src in &topology.power_sources {
        let path = match (&run.carbon_trace, &src.carbon_trace) {
            (Some(t), _) => spec.resolve(t),
            (None, Some(t)) => topo_path.parent().unwrap_or(Path::new("")).join(t),
            (None, None) => return Err(format!("power source '{}' has no carbon trace", src.id)),
        };
        carbon.insert(src.id.clone(), lookup(&inputs.traces, &path)?);
    }
    let failures = match &inputs.failures {
        Some(Ok(trace)) => Some(inject_failures(trace, topology.host_count(), run.seed)),
        Some(Err(e)) => return Err(e.clone()),
        None => None,
    };
    let policies = PolicyConfig {
        scheduler: spec.scheduler.clone(),
        shifting: tech.shifting.then(|| spec.techniques.temporal_shifting.clone().unwrap_or_default().params()),
        stopper: tech.stopper.then(|| spec.techniques.task_stopper.clone().unwrap_or_default().params()),
        checkpoint: spec.failures.as_ref().and_then(|f| f.checkpoint),
        sla: spec.sla,
    };
    let config = RunConfig {
        start: spec.start_time_ms.map(SimTime),
        end: spec.end_time_ms.map(SimTime),
        export_interval_ms: spec.export.interval_ms,
        host_rows: spec.export.enabled("host"),
    };
    let meta = RunMeta {
        run_id: run.run_id(),
        topology: base.name.clone(),
        workload: workload.name.clone(),
        region: run.region.clone(),
        techniques: tech.label(),
        seed: run.seed,
    };
    Ok(Scenario { topology, workload, policies, traces: TraceSet { carbon, failures }, config, meta })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticRow {
    pub task_id: String,
    pub submission: i64,
    pub naive_start: i64,
    pub simulated_start: Option<i64>,
    pub naive_original_g: f64,
    pub naive_shifted_g: f64,
    pub naive_saving_g: f64,
    pub simulated_g: f64,
}

pub const ANALYTIC_HEADER: &[&str] = &[
    "task_id",
    "submission",
    "naive_start",
    "simulated_start",
    "naive_original_g",
    "naive_shifted_g",
    "naive_saving_g",
    "simulated_g",
];

/// Naive estimate next to what the simulated run actually emitted, per task.
pub fn analytic_rows(scenario: &Scenario, report: &RunReport, policy: &ShiftPolicy) -> Result<Vec<AnalyticRow>, String> {
    let first = &scenario.topology.power_sources[0].id;
    let trace = &scenario.traces.carbon[first];
    let est = naive_shift_savings(&scenario.workload, &scenario.topology, trace, policy).map_err(|e| e.to_string())?;
    let sim = simulated_task_carbon(&report.segments, &scenario.workload, &scenario.topology, trace)
        .map_err(|e| e.to_string())?;
    Ok(est
        .tasks
        .iter()
        .zip(&report.tables.task)
        .zip(sim)
        .map(|((e, row), simulated_g)| AnalyticRow {
            task_id: e.task_id.clone(),
            submission: e.original_start.0,
            naive_start: e.shifted_start.0,
            simulated_start: row.start,
            naive_original_g: e.original_emission_g,
            naive_shifted_g: e.shifted_emission_g,
            naive_saving_g: e.saving_g,
            simulated_g,
        })
        .collect())
}

/// Runs one matrix cell in memory.
pub fn execute(spec: &ExperimentSpec, run: &RunSpec, inputs: &Inputs) -> Result<(Scenario, RunReport), String> {
    let s = scenario(spec, run, inputs)?;
    let report = Simulation::new(&s.topology, &s.policies, &s.traces, s.workload.clone(), s.config.clone())
        .and_then(Simulation::run)
        .map_err(|e| e.to_string())?;
    Ok((s, report))
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub output_dir: PathBuf,
    pub parallelism: usize,
    pub resume: bool,
    pub analytic_compare: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub summaries: Vec<RunSummary>,
    pub executed: usize,
    pub skipped: usize,
    pub failed: Vec<(String, String)>,
    pub aggregate_error: Option<String>,
}

impl Outcome {
    pub fn success(&self) -> bool {
        self.failed.is_empty() && self.aggregate_error.is_none()
    }
}

enum CellResult {
    Done(RunSummary),
    Skipped(RunSummary),
    Failed(String, String),
}

fn run_cell(spec: &ExperimentSpec, run: &RunSpec, inputs: &Inputs, dir: &Path, opts: &RunOptions) -> CellResult {
    let id = run.run_id();
    let summary_path = dir.join("summary.csv");
    if opts.resume && summary_path.exists() {
        match read_summaries(&summary_path) {
            Ok(mut rows) if rows.len() == 1 => return CellResult::Skipped(rows.remove(0)),
            _ => log::warn!("run {id}: unreadable summary, running again"),
        }
    }
    let result = (|| -> Result<RunSummary, String> {
        std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        let _ = std::fs::remove_file(dir.join("error.txt"));
        let spec_json = serde_json::to_string_pretty(run).expect("run spec serializes");
        std::fs::write(dir.join("run.json"), spec_json).map_err(|e| e.to_string())?;
        let (scenario, report) = execute(spec, run, inputs)?;
        let mut tables = spec.export.tables.clone();
        tables.retain(|t| t != "host" || scenario.config.host_rows);
        report.tables.write(dir, &tables).map_err(|e| e.to_string())?;
        if opts.analytic_compare {
            let policy = spec.techniques.temporal_shifting.clone().unwrap_or_default().params();
            let rows = analytic_rows(&scenario, &report, &policy)?;
            write_rows(&rows, &dir.join("analytic.csv"), ANALYTIC_HEADER).map_err(|e| e.to_string())?;
        }
        let summary = summarize(&report, &scenario.meta);
        write_summaries(std::slice::from_ref(&summary), &summary_path).map_err(|e| e.to_string())?;
        Ok(summary)
    })();
    match result {
        Ok(s) => CellResult::Done(s),
        Err(msg) => {
            log::error!("run {id} failed: {msg}");
            let _ = std::fs::create_dir_all(dir);
            let _ = std::fs::write(dir.join("error.txt"), format!("{msg}\n"));
            CellResult::Failed(id, msg)
        }
    }
}

/// Executes the whole matrix under `output_dir/<experiment>/` and writes the
/// experiment-level `summary.csv` and `aggregate.csv`.
pub fn run_all(spec: &ExperimentSpec, opts: &RunOptions) -> Result<Outcome, ExperimentError> {
    if opts.parallelism == 0 {
        return Err(ExperimentError::Parallelism(0));
    }
    let root = opts.output_dir.join(&spec.name);
    if root.exists() && !opts.resume {
        let occupied = std::fs::read_dir(&root).map_err(io_err(&root))?.next().is_some();
        if occupied {
            return Err(ExperimentError::OutputExists(root));
        }
    }
    std::fs::create_dir_all(&root).map_err(io_err(&root))?;

    let runs = expand(spec);
    let inputs = Inputs::load(spec, &runs);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.parallelism)
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    let results: Vec<CellResult> = pool.install(|| {
        runs.par_iter()
            .map(|run| run_cell(spec, run, &inputs, &root.join(run.run_id()), opts))
            .collect()
    });

    let mut outcome = Outcome::default();
    for r in results {
        match r {
            CellResult::Done(s) => {
                outcome.executed += 1;
                outcome.summaries.push(s);
            }
            CellResult::Skipped(s) => {
                outcome.skipped += 1;
                outcome.summaries.push(s);
            }
            CellResult::Failed(id, msg) => outcome.failed.push((id, msg)),
        }
    }
    let summary_path = root.join("summary.csv");
    write_summaries(&outcome.summaries, &summary_path).map_err(|e| ExperimentError::Io {
        path: summary_path.clone(),
        source: std::io::Error::other(e.to_string()),
    })?;
    let aggregate_path = root.join("aggregate.csv");
    match aggregate(&outcome.summaries) {
        Ok(rows) => write_aggregate(&rows, &aggregate_path).map_err(|e| ExperimentError::Io {
            path: aggregate_path.clone(),
            source: std::io::Error::other(e.to_string()),
        })?,
        Err(e) => {
            log::error!("aggregation failed: {e}");
            let _ = std::fs::remove_file(&aggregate_path);
            outcome.aggregate_error = Some(e.to_string());
        }
    }
    Ok(outcome)
}

/// Tab-separated listing of the matrix: run id, topology, workload, region,
/// techniques, seed.
pub fn list(spec: &ExperimentSpec) -> String {
    let mut out = String::from("run_id\ttopology\tworkload\tregion\ttechniques\tseed\n");
    for r in expand(spec) {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.run_id(),
            r.topology.display(),
            r.workload.display(),
            r.region,
            r.techniques.label(),
            r.seed
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{BatteryTechniqueSpec, HorizontalScalingSpec, ThresholdPolicySpec};

    fn spec(regions: usize) -> ExperimentSpec {
        let text = r#"{"name": "e", "topologies": ["t.json"], "workloads": ["w"], "seeds": [0]}"#;
        let mut s: ExperimentSpec = serde_json::from_str(text).unwrap();
        s.carbon_traces = (0..regions).map(|i| PathBuf::from(format!("R{i}.csv"))).collect();
        s
    }

    fn battery(caps: &[f64]) -> BatteryTechniqueSpec {
        serde_json::from_value(serde_json::json!({ "capacities_kwh": caps })).unwrap()
    }

    #[test]
    fn two_regions_baseline_and_battery() {
        let mut s = spec(2);
        s.techniques.battery = Some(battery(&[100.0]));
        let runs = expand(&s);
        assert_eq!(runs.len(), 4);
        assert_eq!(runs[0].techniques.label(), "baseline");
        assert_eq!(runs[1].techniques.label(), "battery:100kWh:3C:100kg");
        assert_eq!(runs[2].region, "R1");
    }

    #[test]
    fn three_techniques_over_many_regions() {
        let mut s = spec(158);
        s.workloads = vec!["a".into(), "b".into(), "c".into()];
        s.techniques.horizontal_scaling = Some(HorizontalScalingSpec { host_counts: vec![200] });
        s.techniques.battery = Some(battery(&[100.0]));
        s.techniques.temporal_shifting = Some(ThresholdPolicySpec::default());
        assert_eq!(technique_sets(&s).len(), 8);
        assert_eq!(expand(&s).len(), 3792);
    }

    #[test]
    fn capacity_sweep_variants() {
        let mut s = spec(1);
        s.techniques.battery = Some(battery(&[100.0, 200.0, 300.0, 400.0, 500.0]));
        let sets = technique_sets(&s);
        assert_eq!(sets.iter().filter(|t| t.battery.is_some()).count(), 5);
    }

    #[test]
    fn run_ids_are_stable_and_distinct() {
        let mut s = spec(3);
        s.seeds = vec![1, 2];
        let runs = expand(&s);
        let again = expand(&s);
        let ids: std::collections::BTreeSet<_> = runs.iter().map(RunSpec::run_id).collect();
        assert_eq!(ids.len(), runs.len());
        assert_eq!(runs.iter().map(RunSpec::run_id).collect::<Vec<_>>(), again.iter().map(RunSpec::run_id).collect::<Vec<_>>());
        assert_eq!(runs[0].run_id().len(), 16);
    }
}

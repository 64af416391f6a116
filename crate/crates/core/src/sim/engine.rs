use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use thiserror::Error;

use super::event::{Event, EventQueue, Payload, ReturnReason};
use super::graph::{build_graph, ComponentGraph, ComponentId, ComponentKind, EdgeKind, GraphError, PolicyConfig, TraceSet};
use super::host::{ExecSegment, HostExec, Profile, RemoveMode};
use crate::io::{HostGroupSpec, TopologySpec, Workload};
use crate::metrics::{BatteryRow, HostRow, PowerSourceRow, ServiceRow, Tables, TaskRow};
use crate::policy::{
    fifo_schedule, shifting_threshold, sla_check, task_stopper, BatteryPolicy, HostFailure, HostSlot, Resources,
    SchedulerState, ShiftPolicy, StopperAction, TaskOutcome,
};
use crate::power::{
    device_power, embodied_carbon, Battery, BatteryFlow, BatteryMode, CarbonAccumulator, CarbonLedger, CarbonTrace,
    EmbodiedAsset, PowerModel,
};
use crate::time::{ceil_to_grid, watt_ms_to_joules, SimTime, MS_PER_HOUR, MS_PER_MINUTE};

/// Same-timestamp deliveries allowed per (target, sender) pair.
pub const ITERATION_CAP: u32 = 1000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("event for '{component}' at {time} is earlier than the clock {clock}")]
    Past { component: String, time: SimTime, clock: SimTime },
    #[error("no fixpoint at {time}: '{component}' received more than {cap} updates from '{sender}' (cycle {sender} -> {component})")]
    NonConvergence { time: SimTime, component: String, sender: String, cap: u32 },
    #[error("task '{task}' does not fit on any host")]
    Unschedulable { task: String },
    #[error("task '{task}' is submitted at {submission}, before the simulation start {start}")]
    EarlyTask { task: String, submission: SimTime, start: SimTime },
    #[error("simulation stuck at {time}: {unfinished} tasks can never finish")]
    Deadlock { time: SimTime, unfinished: usize },
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Defaults to the earliest submission.
    pub start: Option<SimTime>,
    /// Hard stop; tasks unfinished by then count as terminated.
    pub end: Option<SimTime>,
    pub export_interval_ms: i64,
    pub host_rows: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { start: None, end: None, export_interval_ms: 5 * MS_PER_MINUTE, host_rows: false }
    }
}

/// Energy totals over the run, in joules.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnergyBalance {
    pub grid_j: f64,
    pub device_j: f64,
    pub charged_j: f64,
    pub discharged_j: f64,
}

impl EnergyBalance {
    /// `|(grid + discharged) - (device + charged)|` relative to the larger side.
    pub fn relative_error(&self) -> f64 {
        let lhs = self.grid_j + self.discharged_j;
        let rhs = self.device_j + self.charged_j;
        let scale = lhs.abs().max(rhs.abs());
        if scale == 0.0 {
            0.0
        } else {
            (lhs - rhs).abs() / scale
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub start: SimTime,
    pub stop: SimTime,
    pub tables: Tables,
    pub ledger: CarbonLedger,
    pub energy: EnergyBalance,
    /// Maximum over the sampled per-interval peaks.
    pub peak_power_w: f64,
    pub segments: Vec<ExecSegment>,
    pub failures: Vec<HostFailure>,
    pub sla_violations: usize,
    pub events: u64,
}

impl RunReport {
    pub fn horizon_h(&self) -> f64 {
        self.stop.since(self.start) as f64 / MS_PER_HOUR as f64
    }
}

struct SourceState {
    name: String,
    acc: CarbonAccumulator,
    demands: BTreeMap<ComponentId, f64>,
    observers: Vec<ComponentId>,
    last_energy_j: f64,
    last_carbon_g: f64,
    max_power_w: Option<f64>,
    warned: bool,
}

struct PsuState {
    demands: BTreeMap<ComponentId, f64>,
    supplier: ComponentId,
    acc: CarbonAccumulator,
    sent: Option<f64>,
}

struct DeviceState {
    model: PowerModel,
    count: u32,
    utilization: f64,
    power_w: f64,
    psu: ComponentId,
    sent: Option<f64>,
}

struct HostState {
    exec: HostExec,
    cpu: ComponentId,
    gpu: Option<ComponentId>,
    memory: ComponentId,
    timer_gen: u64,
    timer_at: Option<SimTime>,
    sent: Option<(f64, f64, bool)>,
    memory_sent: Option<u64>,
    warned: bool,
}

struct BatteryState {
    name: String,
    device: Battery,
    mode: BatteryMode,
    demands: BTreeMap<ComponentId, f64>,
    demand_w: f64,
    flow: BatteryFlow,
    last: SimTime,
    generation: u64,
    supplier: ComponentId,
    charged_j: f64,
    discharged_j: f64,
    sent: Option<f64>,
}

struct CarbonModelState {
    trace: Arc<CarbonTrace>,
    current: Option<f64>,
    consumers: Vec<ComponentId>,
}

struct StopperState {
    trace: Arc<CarbonTrace>,
    params: ShiftPolicy,
    stopped: bool,
    scheduler: ComponentId,
}

struct ManagerState {
    policy: BatteryPolicy,
    trace: Arc<CarbonTrace>,
    battery: ComponentId,
    mode: Option<BatteryMode>,
}

struct SchedulerComp {
    state: SchedulerState,
    hosts: Vec<ComponentId>,
    running: BTreeMap<usize, usize>,
    progress: Vec<i64>,
    started: Vec<Option<SimTime>>,
    finished: Vec<Option<SimTime>>,
    completed: usize,
    shifting: Option<(ShiftPolicy, Arc<CarbonTrace>)>,
    stopper_delay: Option<i64>,
    stopped: bool,
    threshold: Option<(SimTime, f64)>,
    pass_at: Option<SimTime>,
    wakes: BTreeSet<SimTime>,
}

struct FaultState {
    failures: Vec<HostFailure>,
    hosts: Vec<ComponentId>,
}

enum State {
    Source(SourceState),
    Psu(PsuState),
    Device(DeviceState),
    Memory(u64),
    Host(Box<HostState>),
    Battery(BatteryState),
    CarbonModel(CarbonModelState),
    Stopper(StopperState),
    Manager(ManagerState),
    Scheduler(Box<SchedulerComp>),
    Fault(FaultState),
    Probe,
}

struct Ctx {
    workload: Arc<Workload>,
    profiles: Vec<Profile>,
    policies: PolicyConfig,
    config: RunConfig,
    start: SimTime,
    host_groups: Vec<usize>,
    topology: TopologySpec,
}

/// One simulation run over a component graph.
pub struct Simulation {
    graph: ComponentGraph,
    ctx: Ctx,
    states: Vec<State>,
    queue: EventQueue,
    clock: SimTime,
    visits: HashMap<(ComponentId, Option<ComponentId>), u32>,
    visits_at: SimTime,
    segments: Vec<ExecSegment>,
    tables: Tables,
    scheduler: ComponentId,
    probe: ComponentId,
    stop: Option<SimTime>,
    failures: Vec<HostFailure>,
    events: u64,
}

fn emit(out: &mut Vec<Event>, time: SimTime, target: ComponentId, from: ComponentId, payload: Payload) {
    out.push(Event::new(time, target, Some(from), payload));
}

fn flatten_hosts(topology: &TopologySpec) -> Vec<usize> {
    topology
        .host_groups
        .iter()
        .enumerate()
        .flat_map(|(g, spec)| std::iter::repeat(g).take(spec.count as usize))
        .collect()
}

impl Simulation {
    pub fn new(
        topology: &TopologySpec,
        policies: &PolicyConfig,
        traces: &TraceSet,
        workload: Arc<Workload>,
        config: RunConfig,
    ) -> Result<Self, SimError> {
        if config.export_interval_ms <= 0 {
            return Err(SimError::InvalidConfig("export interval must be positive".into()));
        }
        let mut graph = build_graph(topology, policies, traces)?;
        let host_groups = flatten_hosts(topology);
        let start = config
            .start
            .or_else(|| workload.tasks().first().map(|t| t.submission))
            .unwrap_or(SimTime::ZERO);
        for t in workload.tasks() {
            if t.submission < start {
                return Err(SimError::EarlyTask { task: t.id.clone(), submission: t.submission, start });
            }
        }

        let slots: Vec<HostSlot> = host_groups
            .iter()
            .map(|&g| {
                let spec = &topology.host_groups[g];
                HostSlot::new(Resources {
                    cores: spec.cpu.core_count,
                    memory_mib: spec.memory_mib,
                    gpus: spec.gpu.as_ref().map_or(0, |g| g.count),
                })
            })
            .collect();
        for t in workload.tasks() {
            let demand = Resources::of_task(t);
            if !slots.iter().any(|s| demand.fits_in(&s.capacity)) {
                return Err(SimError::Unschedulable { task: t.id.clone() });
            }
        }

        let probe = graph.add(ComponentKind::MetricsProbe, "metrics_probe", 0)?;
        for c in graph.components().to_vec() {
            if matches!(c.kind, ComponentKind::PowerSource | ComponentKind::Battery | ComponentKind::Scheduler) {
                graph.connect(c.id, probe, EdgeKind::Observation)?;
            }
        }

        let first_trace = traces.carbon[&topology.power_sources[0].id].clone();
        let scheduler = graph.by_name("scheduler").expect("scheduler exists");
        let host_ids: Vec<ComponentId> = graph.of_kind(ComponentKind::Host).map(|c| c.id).collect();
        let mut states = Vec::with_capacity(graph.components().len());
        for c in graph.components() {
            let state = match c.kind {
                ComponentKind::PowerSource => {
                    let spec = &topology.power_sources[c.index];
                    let trace = &traces.carbon[&spec.id];
                    State::Source(SourceState {
                        name: spec.id.clone(),
                        acc: CarbonAccumulator::new(start, trace.value_at(start)),
                        demands: BTreeMap::new(),
                        observers: graph
                            .consumers(c.id, EdgeKind::Observation)
                            .into_iter()
                            .filter(|&o| o != probe)
                            .collect(),
                        last_energy_j: 0.0,
                        last_carbon_g: 0.0,
                        max_power_w: spec.max_power_w,
                        warned: false,
                    })
                }
                ComponentKind::Psu => State::Psu(PsuState {
                    demands: BTreeMap::new(),
                    supplier: graph.suppliers(c.id, EdgeKind::Power)[0],
                    acc: CarbonAccumulator::new(start, 0.0),
                    sent: None,
                }),
                ComponentKind::Cpu | ComponentKind::Gpu => {
                    let spec = &topology.host_groups[host_groups[c.index]];
                    let (model, count) = match c.kind {
                        ComponentKind::Cpu => (spec.cpu.power_model, 1),
                        _ => {
                            let gpu = spec.gpu.as_ref().expect("gpu component implies gpu spec");
                            (gpu.power_model, gpu.count)
                        }
                    };
                    State::Device(DeviceState {
                        model,
                        count,
                        utilization: 0.0,
                        power_w: 0.0,
                        psu: graph.suppliers(c.id, EdgeKind::Power)[0],
                        sent: None,
                    })
                }
                ComponentKind::Memory => State::Memory(0),
                ComponentKind::Host => {
                    let spec = &topology.host_groups[host_groups[c.index]];
                    let compute = graph.suppliers(c.id, EdgeKind::Compute);
                    let find = |k: ComponentKind| compute.iter().copied().find(|&s| graph.get(s).kind == k);
                    State::Host(Box::new(HostState {
                        exec: HostExec::new(
                            c.index,
                            spec.cpu.core_count,
                            spec.cpu.core_speed_mhz,
                            spec.gpu.as_ref().map_or(0, |g| g.count),
                        ),
                        cpu: find(ComponentKind::Cpu).expect("host has a cpu"),
                        gpu: find(ComponentKind::Gpu),
                        memory: find(ComponentKind::Memory).expect("host has memory"),
                        timer_gen: 0,
                        timer_at: None,
                        sent: None,
                        memory_sent: None,
                        warned: false,
                    }))
                }
                ComponentKind::Battery => {
                    let spec = &topology.batteries[c.index];
                    State::Battery(BatteryState {
                        name: spec.id.clone(),
                        device: spec.device(),
                        mode: BatteryMode::Idle,
                        demands: BTreeMap::new(),
                        demand_w: 0.0,
                        flow: BatteryFlow::default(),
                        last: start,
                        generation: 0,
                        supplier: graph.suppliers(c.id, EdgeKind::Power)[0],
                        charged_j: 0.0,
                        discharged_j: 0.0,
                        sent: None,
                    })
                }
                ComponentKind::BatteryManager => {
                    let spec = &topology.batteries[c.index];
                    let policy = BatteryPolicy::new(spec.window_ms).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
                    State::Manager(ManagerState {
                        policy,
                        trace: traces.carbon[&spec.power_source].clone(),
                        battery: graph.consumers(c.id, EdgeKind::Control)[0],
                        mode: None,
                    })
                }
                ComponentKind::CarbonModel => {
                    let consumers = graph.consumers(c.id, EdgeKind::Observation);
                    let source_spec = &topology.power_sources[graph.get(consumers[0]).index];
                    State::CarbonModel(CarbonModelState {
                        trace: traces.carbon[&source_spec.id].clone(),
                        current: None,
                        consumers,
                    })
                }
                ComponentKind::TaskStopper => State::Stopper(StopperState {
                    trace: first_trace.clone(),
                    params: policies.stopper.expect("stopper component implies stopper policy"),
                    stopped: false,
                    scheduler,
                }),
                ComponentKind::Scheduler => {
                    let n = workload.len();
                    State::Scheduler(Box::new(SchedulerComp {
                        state: SchedulerState::new(slots.clone(), policies.scheduler.clone()),
                        hosts: host_ids.clone(),
                        running: BTreeMap::new(),
                        progress: vec![0; n],
                        started: vec![None; n],
                        finished: vec![None; n],
                        completed: 0,
                        shifting: policies.shifting.map(|p| (p, first_trace.clone())),
                        stopper_delay: policies.stopper.map(|p| p.max_delay_ms),
                        stopped: false,
                        threshold: None,
                        pass_at: None,
                        wakes: BTreeSet::new(),
                    }))
                }
                ComponentKind::FaultInjector => State::Fault(FaultState {
                    failures: traces.failures.clone().unwrap_or_default(),
                    hosts: host_ids.clone(),
                }),
                ComponentKind::MetricsProbe => State::Probe,
            };
            states.push(state);
        }

        let profiles = workload.tasks().iter().map(Profile::of).collect();
        Ok(Simulation {
            graph,
            ctx: Ctx {
                workload,
                profiles,
                policies: policies.clone(),
                config,
                start,
                host_groups,
                topology: topology.clone(),
            },
            states,
            queue: EventQueue::new(),
            clock: start,
            visits: HashMap::new(),
            visits_at: start,
            segments: Vec::new(),
            tables: Tables::default(),
            scheduler,
            probe,
            stop: None,
            failures: traces.failures.clone().unwrap_or_default(),
            events: 0,
        })
    }

    pub fn graph(&self) -> &ComponentGraph {
        &self.graph
    }

    pub fn clock(&self) -> SimTime {
        self.clock
    }

    pub fn start(&self) -> SimTime {
        self.ctx.start
    }

    pub fn push(&mut self, event: Event) {
        let class = self.graph.get(event.target).kind.priority();
        self.queue.push(event, class);
    }

    /// Current grid draw of a power source, in watts.
    pub fn source_power_w(&self, id: ComponentId) -> Option<f64> {
        match &self.states[id.index()] {
            State::Source(s) => Some(s.acc.power_w()),
            _ => None,
        }
    }

    /// Current power draw of a CPU or GPU, in watts.
    pub fn device_power_w(&self, id: ComponentId) -> Option<f64> {
        match &self.states[id.index()] {
            State::Device(d) => Some(d.power_w),
            _ => None,
        }
    }

    fn seed(&mut self) {
        let start = self.ctx.start;
        let ids: Vec<ComponentId> = self.graph.components().iter().map(|c| c.id).collect();
        for id in ids {
            self.push(Event::new(start, id, None, Payload::Init));
        }
        let mut by_time: BTreeMap<SimTime, Vec<usize>> = BTreeMap::new();
        for (i, t) in self.ctx.workload.tasks().iter().enumerate() {
            by_time.entry(t.submission).or_default().push(i);
        }
        for (t, tasks) in by_time {
            self.push(Event::new(t, self.scheduler, None, Payload::Submit(tasks)));
        }

        let mut periodic = Vec::new();
        for c in self.graph.components() {
            let (trace, payload) = match &self.states[c.id.index()] {
                State::CarbonModel(s) => (&s.trace, Payload::CarbonSample),
                State::Stopper(s) => (&s.trace, Payload::Tick),
                State::Manager(s) => (&s.trace, Payload::Tick),
                State::Scheduler(s) => match &s.shifting {
                    Some((_, trace)) => (trace, Payload::Tick),
                    None => continue,
                },
                _ => continue,
            };
            for s in trace.samples().iter().filter(|s| s.start > start) {
                periodic.push(Event::new(s.start, c.id, None, payload.clone()));
            }
        }
        for e in periodic {
            self.push(e);
        }
        let first_sample = start + self.ctx.config.export_interval_ms;
        self.push(Event::new(first_sample, self.probe, None, Payload::Sample));
    }

    fn all_done(&self) -> bool {
        match &self.states[self.scheduler.index()] {
            State::Scheduler(s) => s.completed == self.ctx.workload.len(),
            _ => unreachable!(),
        }
    }

    fn unfinished(&self) -> usize {
        match &self.states[self.scheduler.index()] {
            State::Scheduler(s) => self.ctx.workload.len() - s.completed,
            _ => unreachable!(),
        }
    }

    fn horizon_for(&self, t: SimTime) -> SimTime {
        let stop = ceil_to_grid(t.max(self.ctx.start), self.ctx.start, self.ctx.config.export_interval_ms);
        match self.ctx.config.end {
            Some(end) => stop.min(end),
            None => stop,
        }
    }

    /// Executes the run to completion.
    pub fn run(mut self) -> Result<RunReport, SimError> {
        self.seed();
        if self.ctx.workload.is_empty() {
            self.stop = Some(self.ctx.start);
        }
        while let Some(next) = self.queue.peek_time() {
            if let Some(stop) = self.stop {
                if next > stop {
                    break;
                }
            }
            if let Some(end) = self.ctx.config.end {
                if next > end {
                    self.stop = Some(end);
                    break;
                }
            }
            let event = self.queue.pop().expect("peeked");
            for e in self.propagate(event)? {
                self.push(e);
            }
            if self.stop.is_none() {
                if self.all_done() {
                    self.stop = Some(self.horizon_for(self.clock));
                } else if self.queue.driving() == 0 {
                    return Err(SimError::Deadlock { time: self.clock, unfinished: self.unfinished() });
                }
            }
        }
        let stop = match self.stop {
            Some(s) => s,
            None if self.all_done() => self.horizon_for(self.clock),
            None => return Err(SimError::Deadlock { time: self.clock, unfinished: self.unfinished() }),
        };
        Ok(self.finish(stop))
    }

    /// Applies one event to its target and returns the follow-up events.
    pub fn propagate(&mut self, event: Event) -> Result<Vec<Event>, SimError> {
        let target = event.target;
        if event.time < self.clock {
            return Err(SimError::Past {
                component: self.graph.get(target).name.clone(),
                time: event.time,
                clock: self.clock,
            });
        }
        self.clock = event.time;
        if self.visits_at != event.time {
            self.visits.clear();
            self.visits_at = event.time;
        }
        let count = self.visits.entry((target, event.source)).or_insert(0);
        *count += 1;
        if *count > ITERATION_CAP {
            return Err(SimError::NonConvergence {
                time: event.time,
                component: self.graph.get(target).name.clone(),
                sender: event.source.map_or_else(|| "engine".to_string(), |s| self.graph.get(s).name.clone()),
                cap: ITERATION_CAP,
            });
        }
        self.events += 1;

        let now = event.time;
        let mut out = Vec::new();
        let ctx = &self.ctx;
        match &mut self.states[target.index()] {
            State::Source(s) => source_event(s, &event, target, &mut out),
            State::Psu(s) => psu_event(s, &event, target, &mut out),
            State::Device(d) => device_event(d, &event, target, &mut out),
            State::Memory(m) => {
                if let Payload::MemoryDemand(v) = event.payload {
                    *m = v;
                }
            }
            State::Host(h) => host_event(h, &event, target, self.scheduler, ctx, &mut self.segments, &mut out),
            State::Battery(b) => battery_event(b, &event, target, &mut out),
            State::CarbonModel(c) => {
                let v = c.trace.value_at(now);
                if matches!(event.payload, Payload::Init | Payload::CarbonSample) && c.current != Some(v) {
                    c.current = Some(v);
                    for &dst in &c.consumers {
                        emit(&mut out, now, dst, target, Payload::CarbonIntensity(v));
                    }
                }
            }
            State::Stopper(s) => {
                if matches!(event.payload, Payload::Init | Payload::Tick) {
                    let threshold = shifting_threshold(&s.trace, now, &s.params).unwrap_or(f64::INFINITY);
                    let ci = s.trace.value_at(now);
                    match task_stopper(ci, threshold, s.stopped) {
                        Some(StopperAction::Stop) => {
                            s.stopped = true;
                            emit(&mut out, now, s.scheduler, target, Payload::StopTasks);
                        }
                        Some(StopperAction::Resume) => {
                            s.stopped = false;
                            emit(&mut out, now, s.scheduler, target, Payload::ResumeTasks);
                        }
                        None => {}
                    }
                }
            }
            State::Manager(m) => {
                if matches!(event.payload, Payload::Init | Payload::Tick) {
                    let mode = m.policy.observe(&m.trace, now).mode();
                    if m.mode != Some(mode) {
                        m.mode = Some(mode);
                        emit(&mut out, now, m.battery, target, Payload::BatteryCommand(mode));
                    }
                }
            }
            State::Scheduler(s) => scheduler_event(s, &event, target, ctx, &mut out),
            State::Fault(f) => match event.payload {
                Payload::Init => {
                    for (k, fail) in f.failures.iter().enumerate() {
                        if fail.end() <= now || fail.host >= f.hosts.len() {
                            continue;
                        }
                        emit(&mut out, fail.start.max(now), target, target, Payload::FailureStart(k));
                        emit(&mut out, fail.end(), target, target, Payload::FailureEnd(k));
                    }
                }
                Payload::FailureStart(k) => emit(&mut out, now, f.hosts[f.failures[k].host], target, Payload::HostFail),
                Payload::FailureEnd(k) => emit(&mut out, now, f.hosts[f.failures[k].host], target, Payload::HostRecover),
                _ => {}
            },
            State::Probe => {
                if event.payload == Payload::Sample {
                    self.sample(now);
                    let next = now + self.ctx.config.export_interval_ms;
                    if self.stop.map_or(true, |s| next <= s) {
                        out.push(Event::new(next, target, Some(target), Payload::Sample));
                    }
                }
            }
        }
        Ok(out)
    }

    fn sample(&mut self, now: SimTime) {
        let t = now.0;
        if let State::Scheduler(s) = &self.states[self.scheduler.index()] {
            self.tables.service.push(ServiceRow {
                timestamp: t,
                tasks_pending: s.state.queue.len(),
                tasks_active: s.running.len(),
                tasks_completed: s.completed,
                tasks_terminated: 0,
            });
        }
        for i in 0..self.states.len() {
            match &mut self.states[i] {
                State::Source(s) => {
                    s.acc.advance(now);
                    self.tables.power_source.push(PowerSourceRow {
                        timestamp: t,
                        source_id: s.name.clone(),
                        power_draw_w: s.acc.power_w(),
                        energy_usage_j: s.acc.energy_j() - s.last_energy_j,
                        carbon_intensity: s.acc.intensity(),
                        carbon_emission_g: s.acc.carbon_g() - s.last_carbon_g,
                        peak_power_w: s.acc.take_window_peak(),
                    });
                    s.last_energy_j = s.acc.energy_j();
                    s.last_carbon_g = s.acc.carbon_g();
                }
                State::Battery(b) => {
                    b.settle(now);
                    self.tables.battery.push(BatteryRow {
                        timestamp: t,
                        battery_id: b.name.clone(),
                        soc_kwh: b.device.soc_kwh,
                        mode: b.mode.as_str().to_string(),
                        power_w: b.flow.charge_w - b.flow.discharge_w,
                    });
                }
                _ => {}
            }
        }
        if self.ctx.config.host_rows {
            for i in 0..self.states.len() {
                if let State::Host(h) = &self.states[i] {
                    let power = |id: Option<ComponentId>| match id.map(|id| &self.states[id.index()]) {
                        Some(State::Device(d)) => d.power_w,
                        _ => 0.0,
                    };
                    let utilization = match &self.states[h.cpu.index()] {
                        State::Device(d) => d.utilization,
                        _ => 0.0,
                    };
                    self.tables.host.push(HostRow {
                        timestamp: t,
                        host_id: h.exec.index,
                        cpu_utilization: utilization,
                        power_draw_w: power(Some(h.cpu)) + power(h.gpu),
                    });
                }
            }
        }
    }

    fn finish(mut self, stop: SimTime) -> RunReport {
        let start = self.ctx.start;
        let mut ledger = CarbonLedger::default();
        let mut energy = EnergyBalance::default();
        for state in &mut self.states {
            match state {
                State::Source(s) => {
                    s.acc.advance(stop);
                    ledger.operational_by_source.push((s.name.clone(), s.acc.carbon_g()));
                    energy.grid_j += s.acc.energy_j();
                }
                State::Psu(p) => {
                    p.acc.advance(stop);
                    energy.device_j += p.acc.energy_j();
                }
                State::Battery(b) => {
                    b.settle(stop);
                    energy.charged_j += b.charged_j;
                    energy.discharged_j += b.discharged_j;
                }
                State::CarbonModel(c) => {
                    if !c.trace.covers(start, stop) {
                        log::warn!(
                            "carbon trace '{}' does not cover [{start}, {stop}]; holding the nearest sample",
                            c.trace.region_id()
                        );
                    }
                }
                _ => {}
            }
        }

        let horizon_h = stop.since(start) as f64 / MS_PER_HOUR as f64;
        for &g in &self.ctx.host_groups {
            let spec: &HostGroupSpec = &self.ctx.topology.host_groups[g];
            if let Ok(asset) = EmbodiedAsset::new(spec.embodied_kg, spec.lifespan_h) {
                ledger.embodied_hosts_g += embodied_carbon(&asset, horizon_h);
            }
        }
        for b in &self.ctx.topology.batteries {
            if let Ok(asset) = b.device().embodied() {
                ledger.embodied_batteries_g += embodied_carbon(&asset, horizon_h);
            }
        }

        let tasks = self.ctx.workload.tasks();
        let mut violations = 0;
        let mut terminated = 0;
        if let State::Scheduler(s) = &self.states[self.scheduler.index()] {
            for (i, t) in tasks.iter().enumerate() {
                let finish = s.finished[i].filter(|&f| f <= stop);
                let start_t = s.started[i].filter(|&f| f <= stop);
                let outcome = TaskOutcome {
                    submission: t.submission,
                    work_ms: t.total_duration_ms(),
                    deadline: t.deadline,
                    finish,
                };
                let violated = sla_check(&outcome, &self.ctx.policies.sla);
                violations += violated as usize;
                terminated += finish.is_none() as usize;
                self.tables.task.push(TaskRow {
                    task_id: t.id.clone(),
                    submission: t.submission.0,
                    start: start_t.map(|s| s.0),
                    finish: finish.map(|f| f.0),
                    delay_ms: start_t.map(|s| s.since(t.submission)),
                    sla_violated: violated,
                });
            }
        }
        if terminated > 0 {
            if let Some(last) = self.tables.service.last_mut() {
                if last.timestamp == stop.0 {
                    last.tasks_terminated = terminated;
                }
            }
        }
        let peak_power_w = self.tables.power_source.iter().map(|r| r.peak_power_w).fold(0.0, f64::max);
        RunReport {
            start,
            stop,
            tables: self.tables,
            ledger,
            energy,
            peak_power_w,
            segments: self.segments,
            failures: self.failures,
            sla_violations: violations,
            events: self.events,
        }
    }
}

fn source_event(s: &mut SourceState, ev: &Event, me: ComponentId, out: &mut Vec<Event>) {
    let now = ev.time;
    match ev.payload {
        Payload::PowerDemand(w) => {
            let from = ev.source.expect("power demand names its consumer");
            s.demands.insert(from, w);
            let total: f64 = s.demands.values().sum();
            if total != s.acc.power_w() {
                s.acc.set_power(now, total);
                if let Some(max) = s.max_power_w {
                    if total > max && !s.warned {
                        s.warned = true;
                        log::warn!("power source '{}' draws {total:.1} W, above its {max} W limit", s.name);
                    }
                }
            }
        }
        Payload::CarbonIntensity(v) => {
            if v != s.acc.intensity() {
                s.acc.set_intensity(now, v);
            }
            for &o in &s.observers {
                emit(out, now, o, me, Payload::CarbonIntensity(v));
            }
        }
        _ => {}
    }
}

fn psu_event(p: &mut PsuState, ev: &Event, me: ComponentId, out: &mut Vec<Event>) {
    if let Payload::PowerDemand(w) = ev.payload {
        p.demands.insert(ev.source.expect("power demand names its consumer"), w);
        let total: f64 = p.demands.values().sum();
        p.acc.set_power(ev.time, total);
        if p.sent != Some(total) {
            p.sent = Some(total);
            emit(out, ev.time, p.supplier, me, Payload::PowerDemand(total));
        }
    }
}

fn device_event(d: &mut DeviceState, ev: &Event, me: ComponentId, out: &mut Vec<Event>) {
    if let Payload::ComputeDemand { utilization, powered } = ev.payload {
        d.utilization = utilization;
        d.power_w = if powered { d.count as f64 * device_power(&d.model, utilization) } else { 0.0 };
        if d.sent != Some(d.power_w) {
            d.sent = Some(d.power_w);
            emit(out, ev.time, d.psu, me, Payload::PowerDemand(d.power_w));
        }
    }
}

fn host_event(
    h: &mut HostState,
    ev: &Event,
    me: ComponentId,
    scheduler: ComponentId,
    ctx: &Ctx,
    segments: &mut Vec<ExecSegment>,
    out: &mut Vec<Event>,
) {
    let now = ev.time;
    let ckpt = ctx.policies.checkpoint.as_ref();
    let tasks = ctx.workload.tasks();
    let done = h.exec.advance(now, &ctx.profiles, ckpt, segments);
    if !done.is_empty() {
        emit(out, now, scheduler, me, Payload::TasksFinished(done));
    }
    match &ev.payload {
        Payload::Place(list) => {
            if h.exec.is_up() {
                for &(task, progress) in list {
                    h.exec.place(task, progress, now);
                }
            } else {
                emit(out, now, scheduler, me, Payload::TasksReturned { tasks: list.clone(), reason: ReturnReason::Rejected });
            }
        }
        Payload::Pause(list) => {
            let kept = h.exec.remove(Some(list), now, RemoveMode::Pause, ckpt, segments);
            if !kept.is_empty() {
                emit(out, now, scheduler, me, Payload::TasksReturned { tasks: kept, reason: ReturnReason::Paused });
            }
        }
        Payload::HostFail => {
            h.exec.down_count += 1;
            if h.exec.down_count == 1 {
                let kept = h.exec.remove(None, now, RemoveMode::Failure, ckpt, segments);
                if !kept.is_empty() {
                    emit(out, now, scheduler, me, Payload::TasksReturned { tasks: kept, reason: ReturnReason::Interrupted });
                }
                emit(out, now, scheduler, me, Payload::HostDown);
            }
        }
        Payload::HostRecover => {
            h.exec.down_count = h.exec.down_count.saturating_sub(1);
            if h.exec.down_count == 0 {
                emit(out, now, scheduler, me, Payload::HostUp);
            }
        }
        _ => {}
    }

    let (mut cpu, mut gpu, mem) = h.exec.load(tasks, &ctx.profiles);
    if (cpu > 1.0 + 1e-9 || gpu > 1.0 + 1e-9) && !h.warned {
        h.warned = true;
        log::warn!("host {} is loaded beyond capacity (cpu {cpu:.3}, gpu {gpu:.3}); clamping", h.exec.index);
    }
    cpu = cpu.clamp(0.0, 1.0);
    gpu = gpu.clamp(0.0, 1.0);
    let powered = h.exec.is_up();
    let prev = h.sent;
    if prev.map_or(true, |(c, _, p)| c != cpu || p != powered) {
        emit(out, now, h.cpu, me, Payload::ComputeDemand { utilization: cpu, powered });
    }
    if let Some(g) = h.gpu {
        if prev.map_or(true, |(_, u, p)| u != gpu || p != powered) {
            emit(out, now, g, me, Payload::ComputeDemand { utilization: gpu, powered });
        }
    }
    h.sent = Some((cpu, gpu, powered));
    if h.memory_sent != Some(mem) {
        h.memory_sent = Some(mem);
        emit(out, now, h.memory, me, Payload::MemoryDemand(mem));
    }

    let due = h.exec.next_due(&ctx.profiles, ckpt);
    if due != h.timer_at {
        h.timer_gen += 1;
        h.timer_at = due;
        if let Some(t) = due {
            emit(out, t, me, me, Payload::HostTimer(h.timer_gen));
        }
    }
}

impl BatteryState {
    fn settle(&mut self, now: SimTime) {
        let dt = now.since(self.last);
        if dt > 0 {
            self.device.apply(&self.flow, dt);
            self.charged_j += watt_ms_to_joules(self.flow.charge_w, dt);
            self.discharged_j += watt_ms_to_joules(self.flow.discharge_w, dt);
            self.last = now;
        }
    }

    fn replan(&mut self, now: SimTime, me: ComponentId, out: &mut Vec<Event>) {
        let segment = self.device.segment_to_bound(self.mode, self.demand_w);
        self.flow = self.device.flow(self.mode, self.demand_w, segment.unwrap_or(MS_PER_HOUR));
        self.generation += 1;
        if let Some(ms) = segment {
            emit(out, now + ms, me, me, Payload::BatteryTimer(self.generation));
        }
        if self.sent != Some(self.flow.grid_w) {
            self.sent = Some(self.flow.grid_w);
            emit(out, now, self.supplier, me, Payload::PowerDemand(self.flow.grid_w));
        }
    }
}

fn battery_event(b: &mut BatteryState, ev: &Event, me: ComponentId, out: &mut Vec<Event>) {
    let now = ev.time;
    b.settle(now);
    match ev.payload {
        Payload::PowerDemand(w) => {
            b.demands.insert(ev.source.expect("power demand names its consumer"), w);
            b.demand_w = b.demands.values().sum();
        }
        Payload::BatteryCommand(mode) => b.mode = mode,
        Payload::BatteryTimer(g) if g != b.generation => return,
        Payload::BatteryTimer(_) | Payload::Init => {}
        _ => return,
    }
    b.replan(now, me, out);
}

impl SchedulerComp {
    fn request_pass(&mut self, now: SimTime, me: ComponentId, out: &mut Vec<Event>) {
        if self.pass_at != Some(now) && !self.state.queue.is_empty() {
            self.pass_at = Some(now);
            emit(out, now, me, me, Payload::SchedulePass);
        }
    }

    fn release(&mut self, task: usize, ctx: &Ctx) {
        if let Some(h) = self.running.remove(&task) {
            self.state.hosts[h].free.give(&Resources::of_task(&ctx.workload.tasks()[task]));
        }
    }

    fn pass(&mut self, now: SimTime, me: ComponentId, ctx: &Ctx, out: &mut Vec<Event>) {
        let tasks = ctx.workload.tasks();
        let shift = match &self.shifting {
            Some((policy, trace)) if !self.state.queue.is_empty() => {
                let threshold = match self.threshold {
                    Some((t, v)) if t == now => v,
                    _ => {
                        let v = shifting_threshold(trace, now, policy).unwrap_or(f64::INFINITY);
                        self.threshold = Some((now, v));
                        v
                    }
                };
                Some((*policy, threshold, trace.value_at(now)))
            }
            _ => None,
        };
        let stopped = self.stopped;
        let stopper_delay = self.stopper_delay;
        let eligible = |t: usize| {
            let sub = tasks[t].submission;
            let shift_ok = match &shift {
                Some((policy, threshold, ci)) => *ci <= *threshold || policy.delay_exhausted(sub, now),
                None => true,
            };
            let stop_ok = !stopped || stopper_delay.is_some_and(|d| now.since(sub) >= d);
            shift_ok && stop_ok
        };
        let placements = fifo_schedule(&mut self.state, eligible);
        let mut by_host: BTreeMap<usize, Vec<(usize, i64)>> = BTreeMap::new();
        for p in placements {
            self.running.insert(p.task, p.host);
            self.started[p.task].get_or_insert(now);
            by_host.entry(p.host).or_default().push((p.task, self.progress[p.task]));
        }
        for (h, list) in by_host {
            emit(out, now, self.hosts[h], me, Payload::Place(list));
        }
    }
}

fn scheduler_event(s: &mut SchedulerComp, ev: &Event, me: ComponentId, ctx: &Ctx, out: &mut Vec<Event>) {
    let now = ev.time;
    let tasks = ctx.workload.tasks();
    match &ev.payload {
        Payload::Submit(list) => {
            let delays: Vec<i64> = s.shifting.iter().map(|(p, _)| p.max_delay_ms).chain(s.stopper_delay).collect();
            for &t in list {
                s.state.queue.insert(t, Resources::of_task(&tasks[t]));
                for d in &delays {
                    let wake = tasks[t].submission + *d;
                    if s.wakes.insert(wake) {
                        emit(out, wake, me, me, Payload::Wake);
                    }
                }
            }
            s.request_pass(now, me, out);
        }
        Payload::SchedulePass => {
            s.pass_at = None;
            s.pass(now, me, ctx, out);
        }
        Payload::TasksFinished(list) => {
            for &t in list {
                s.release(t, ctx);
                s.finished[t] = Some(now);
                s.completed += 1;
            }
            s.request_pass(now, me, out);
        }
        Payload::TasksReturned { tasks: list, .. } => {
            for &(t, progress) in list {
                s.release(t, ctx);
                s.progress[t] = progress;
                s.state.queue.insert(t, Resources::of_task(&tasks[t]));
            }
            s.request_pass(now, me, out);
        }
        Payload::HostDown | Payload::HostUp => {
            let host = ctx_host_index(ev, s);
            if let Some(h) = host {
                s.state.hosts[h].up = ev.payload == Payload::HostUp;
            }
            s.request_pass(now, me, out);
        }
        Payload::StopTasks => {
            s.stopped = true;
            let delay = s.stopper_delay.unwrap_or(i64::MAX);
            let mut by_host: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (&t, &h) in &s.running {
                if now.since(tasks[t].submission) < delay {
                    by_host.entry(h).or_default().push(t);
                }
            }
            for (h, list) in by_host {
                emit(out, now, s.hosts[h], me, Payload::Pause(list));
            }
        }
        Payload::ResumeTasks => {
            s.stopped = false;
            s.request_pass(now, me, out);
        }
        Payload::Wake | Payload::Tick | Payload::CarbonIntensity(_) => s.request_pass(now, me, out),
        _ => {}
    }
}

fn ctx_host_index(ev: &Event, s: &SchedulerComp) -> Option<usize> {
    ev.source.and_then(|src| s.hosts.iter().position(|&h| h == src))
}

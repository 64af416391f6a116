use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::TopologySpec;
use crate::policy::{CheckpointConfig, HostFailure, SchedulerConfig, ShiftPolicy, SlaRule};
use crate::power::CarbonTrace;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ComponentId(pub u32);

impl ComponentId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ComponentKind {
    PowerSource,
    Psu,
    Cpu,
    Gpu,
    Memory,
    Host,
    Battery,
    CarbonModel,
    TaskStopper,
    BatteryManager,
    Scheduler,
    FaultInjector,
    MetricsProbe,
}

impl ComponentKind {
    /// Same-timestamp processing class: traces, devices, policies, scheduler, metrics.
    pub fn priority(self) -> u8 {
        match self {
            ComponentKind::CarbonModel | ComponentKind::FaultInjector => 0,
            ComponentKind::PowerSource
            | ComponentKind::Psu
            | ComponentKind::Cpu
            | ComponentKind::Gpu
            | ComponentKind::Memory
            | ComponentKind::Host
            | ComponentKind::Battery => 1,
            ComponentKind::TaskStopper | ComponentKind::BatteryManager => 2,
            ComponentKind::Scheduler => 3,
            ComponentKind::MetricsProbe => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    Power,
    Compute,
    Observation,
    Control,
}

/// Directed supplier -> consumer edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub from: ComponentId,
    pub to: ComponentId,
    pub kind: EdgeKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub id: ComponentId,
    pub kind: ComponentKind,
    /// Stable, human-readable name, e.g. `host[3].cpu`.
    pub name: String,
    /// Position in the kind's own table (host index, source index, ...).
    pub index: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("duplicate component id '{0}'")]
    DuplicateId(String),
    #[error("dangling reference: {0}")]
    Dangling(String),
    #[error("power edges form a cycle through '{0}'")]
    PowerCycle(String),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ComponentGraph {
    components: Vec<Component>,
    edges: Vec<Edge>,
    names: BTreeMap<String, ComponentId>,
}

impl ComponentGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, kind: ComponentKind, name: impl Into<String>, index: usize) -> Result<ComponentId, GraphError> {
        let name = name.into();
        if self.names.contains_key(&name) {
            return Err(GraphError::DuplicateId(name));
        }
        let id = ComponentId(self.components.len() as u32);
        self.names.insert(name.clone(), id);
        self.components.push(Component { id, kind, name, index });
        Ok(id)
    }

    pub fn connect(&mut self, from: ComponentId, to: ComponentId, kind: EdgeKind) -> Result<(), GraphError> {
        for id in [from, to] {
            if id.index() >= self.components.len() {
                return Err(GraphError::Dangling(format!("edge endpoint {} does not exist", id.0)));
            }
        }
        let edge = Edge { from, to, kind };
        if !self.edges.contains(&edge) {
            self.edges.push(edge);
        }
        Ok(())
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn get(&self, id: ComponentId) -> &Component {
        &self.components[id.index()]
    }

    pub fn by_name(&self, name: &str) -> Option<ComponentId> {
        self.names.get(name).copied()
    }

    pub fn of_kind(&self, kind: ComponentKind) -> impl Iterator<Item = &Component> + '_ {
        self.components.iter().filter(move |c| c.kind == kind)
    }

    pub fn count(&self, kind: ComponentKind) -> usize {
        self.of_kind(kind).count()
    }

    pub fn consumers(&self, id: ComponentId, kind: EdgeKind) -> Vec<ComponentId> {
        self.edges.iter().filter(|e| e.from == id && e.kind == kind).map(|e| e.to).collect()
    }

    pub fn suppliers(&self, id: ComponentId, kind: EdgeKind) -> Vec<ComponentId> {
        self.edges.iter().filter(|e| e.to == id && e.kind == kind).map(|e| e.from).collect()
    }

    /// Edges as `(from name, to name, kind)`, independent of id assignment.
    pub fn named_edges(&self) -> BTreeSet<(String, String, EdgeKind)> {
        self.edges
            .iter()
            .map(|e| (self.get(e.from).name.clone(), self.get(e.to).name.clone(), e.kind))
            .collect()
    }

    /// Fails if power edges contain a cycle.
    pub fn check_power_acyclic(&self) -> Result<(), GraphError> {
        let n = self.components.len();
        let mut adj = vec![Vec::new(); n];
        for e in self.edges.iter().filter(|e| e.kind == EdgeKind::Power) {
            adj[e.from.index()].push(e.to.index());
        }
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut mark = vec![0u8; n];
        for root in 0..n {
            if mark[root] != 0 {
                continue;
            }
            let mut stack = vec![(root, 0usize)];
            mark[root] = 1;
            while let Some(&mut (node, ref mut next)) = stack.last_mut() {
                if let Some(&child) = adj[node].get(*next) {
                    *next += 1;
                    match mark[child] {
                        0 => {
                            mark[child] = 1;
                            stack.push((child, 0));
                        }
                        1 => return Err(GraphError::PowerCycle(self.components[child].name.clone())),
                        _ => {}
                    }
                } else {
                    mark[node] = 2;
                    stack.pop();
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for ComponentGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (from, to, kind) in self.named_edges() {
            writeln!(f, "{from} -> {to} [{kind:?}]")?;
        }
        Ok(())
    }
}

/// Policies active in one run. Disabled techniques are `None`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PolicyConfig {
    pub scheduler: SchedulerConfig,
    pub shifting: Option<ShiftPolicy>,
    pub stopper: Option<ShiftPolicy>,
    pub checkpoint: Option<CheckpointConfig>,
    pub sla: SlaRule,
}

/// Trace inputs of one run: a carbon trace per power source id and the
/// expanded host failures, if any.
#[derive(Clone, Debug, Default)]
pub struct TraceSet {
    pub carbon: BTreeMap<String, Arc<CarbonTrace>>,
    pub failures: Option<Vec<HostFailure>>,
}

pub fn host_name(host: usize) -> String {
    format!("host[{host}]")
}

/// Assembles the component graph of a topology.
///
/// Carbon-aware policies observe the first power source.
pub fn build_graph(topology: &TopologySpec, policies: &PolicyConfig, traces: &TraceSet) -> Result<ComponentGraph, GraphError> {
    use ComponentKind as K;
    use EdgeKind as E;
    let mut g = ComponentGraph::new();
    if topology.power_sources.is_empty() {
        return Err(GraphError::Dangling("topology has no power source".into()));
    }

    let mut sources = BTreeMap::new();
    for (i, s) in topology.power_sources.iter().enumerate() {
        let id = g.add(K::PowerSource, format!("source:{}", s.id), i)?;
        sources.insert(s.id.clone(), id);
    }

    // One carbon model per distinct trace.
    let mut models: Vec<(Arc<CarbonTrace>, ComponentId)> = Vec::new();
    for s in &topology.power_sources {
        let trace = traces
            .carbon
            .get(&s.id)
            .ok_or_else(|| GraphError::Dangling(format!("power source '{}' has no carbon trace", s.id)))?;
        let model = match models.iter().find(|(t, _)| Arc::ptr_eq(t, trace)) {
            Some(&(_, m)) => m,
            None => {
                let idx = models.len();
                let m = g.add(K::CarbonModel, format!("carbon:{}#{idx}", trace.region_id()), idx)?;
                models.push((trace.clone(), m));
                m
            }
        };
        g.connect(model, sources[&s.id], E::Observation)?;
    }

    let mut battery_of = BTreeMap::new();
    for (i, b) in topology.batteries.iter().enumerate() {
        let src = *sources
            .get(&b.power_source)
            .ok_or_else(|| GraphError::Dangling(format!("battery '{}' references unknown power source '{}'", b.id, b.power_source)))?;
        if battery_of.contains_key(&b.power_source) {
            return Err(GraphError::DuplicateId(format!("second battery on power source '{}'", b.power_source)));
        }
        let bat = g.add(K::Battery, format!("battery:{}", b.id), i)?;
        g.connect(src, bat, E::Power)?;
        let mgr = g.add(K::BatteryManager, format!("battery:{}.manager", b.id), i)?;
        g.connect(src, mgr, E::Observation)?;
        g.connect(mgr, bat, E::Control)?;
        battery_of.insert(b.power_source.clone(), bat);
    }

    let scheduler = g.add(K::Scheduler, "scheduler", 0)?;
    let mut host = 0usize;
    for group in &topology.host_groups {
        let src_name = topology.source_of(group);
        let supplier = match battery_of.get(src_name) {
            Some(&b) => b,
            None => *sources
                .get(src_name)
                .ok_or_else(|| GraphError::Dangling(format!("host group '{}' references unknown power source '{src_name}'", group.name)))?,
        };
        for _ in 0..group.count {
            let name = host_name(host);
            let psu = g.add(K::Psu, format!("{name}.psu"), host)?;
            let cpu = g.add(K::Cpu, format!("{name}.cpu"), host)?;
            let gpu = match group.gpu {
                Some(_) => Some(g.add(K::Gpu, format!("{name}.gpu"), host)?),
                None => None,
            };
            let mem = g.add(K::Memory, format!("{name}.memory"), host)?;
            let h = g.add(K::Host, name, host)?;
            g.connect(supplier, psu, E::Power)?;
            g.connect(psu, cpu, E::Power)?;
            g.connect(cpu, h, E::Compute)?;
            if let Some(gpu) = gpu {
                g.connect(psu, gpu, E::Power)?;
                g.connect(gpu, h, E::Compute)?;
            }
            g.connect(mem, h, E::Compute)?;
            g.connect(scheduler, h, E::Control)?;
            g.connect(h, scheduler, E::Control)?;
            host += 1;
        }
    }

    let first_source = sources[&topology.power_sources[0].id];
    if policies.shifting.is_some() {
        g.connect(first_source, scheduler, E::Observation)?;
    }
    if policies.stopper.is_some() {
        let stopper = g.add(K::TaskStopper, "task_stopper", 0)?;
        g.connect(first_source, stopper, E::Observation)?;
        g.connect(stopper, scheduler, E::Control)?;
    }
    if traces.failures.is_some() {
        let fi = g.add(K::FaultInjector, "fault_injector", 0)?;
        for h in g.of_kind(K::Host).map(|c| c.id).collect::<Vec<_>>() {
            g.connect(fi, h, E::Control)?;
        }
    }
    g.check_power_acyclic()?;
    Ok(g)
}

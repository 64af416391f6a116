//! Discrete-event engine over a graph of supplier/consumer components.

mod engine;
mod event;
mod graph;
mod host;

pub use engine::{EnergyBalance, RunConfig, RunReport, SimError, Simulation, ITERATION_CAP};
pub use event::{Event, EventKey, EventQueue, Payload, ReturnReason};
pub use graph::{
    build_graph, host_name, Component, ComponentGraph, ComponentId, ComponentKind, Edge, EdgeKind, GraphError,
    PolicyConfig, TraceSet,
};
pub use host::ExecSegment;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::graph::ComponentId;
use crate::power::BatteryMode;
use crate::time::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReturnReason {
    /// Host failed under the task.
    Interrupted,
    /// Task stopper paused the task.
    Paused,
    /// Placement arrived at a host that was already down.
    Rejected,
}

/// State delta carried by an event.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Init,
    /// Carbon model reads its trace at the event time.
    CarbonSample,
    CarbonIntensity(f64),
    /// Power a consumer needs from its supplier; the sender is the consumer.
    PowerDemand(f64),
    ComputeDemand { utilization: f64, powered: bool },
    MemoryDemand(u64),
    Submit(Vec<usize>),
    SchedulePass,
    /// Maximum-delay deadline of some held task.
    Wake,
    /// Start tasks (task index, retained progress in ms).
    Place(Vec<(usize, i64)>),
    HostTimer(u64),
    Pause(Vec<usize>),
    TasksFinished(Vec<usize>),
    TasksReturned { tasks: Vec<(usize, i64)>, reason: ReturnReason },
    HostDown,
    HostUp,
    FailureStart(usize),
    FailureEnd(usize),
    HostFail,
    HostRecover,
    /// Policy re-evaluation at a carbon-trace sample.
    Tick,
    StopTasks,
    ResumeTasks,
    BatteryCommand(BatteryMode),
    BatteryTimer(u64),
    Sample,
}

impl Payload {
    /// Whether the event can move a task forward. Runs with unfinished tasks
    /// and no such events pending are stuck.
    pub fn drives_tasks(&self) -> bool {
        !matches!(
            self,
            Payload::Init
                | Payload::CarbonSample
                | Payload::CarbonIntensity(_)
                | Payload::PowerDemand(_)
                | Payload::ComputeDemand { .. }
                | Payload::MemoryDemand(_)
                | Payload::Tick
                | Payload::BatteryCommand(_)
                | Payload::BatteryTimer(_)
                | Payload::Sample
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub time: SimTime,
    pub target: ComponentId,
    pub source: Option<ComponentId>,
    pub payload: Payload,
}

impl Event {
    pub fn new(time: SimTime, target: ComponentId, source: Option<ComponentId>, payload: Payload) -> Self {
        Event { time, target, source, payload }
    }
}

/// Ordering key: time, priority class of the target, target id, insertion order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct EventKey {
    pub time: SimTime,
    pub class: u8,
    pub target: ComponentId,
    pub seq: u64,
}

struct Queued {
    key: EventKey,
    event: Event,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        other.key.cmp(&self.key)
    }
}

/// Min-queue of events in deterministic order.
#[derive(Default)]
pub struct EventQueue {
    heap: BinaryHeap<Queued>,
    seq: u64,
    driving: usize,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, event: Event, class: u8) {
        let key = EventKey { time: event.time, class, target: event.target, seq: self.seq };
        self.seq += 1;
        if event.payload.drives_tasks() {
            self.driving += 1;
        }
        self.heap.push(Queued { key, event });
    }

    pub fn pop(&mut self) -> Option<Event> {
        let q = self.heap.pop()?;
        if q.event.payload.drives_tasks() {
            self.driving -= 1;
        }
        Some(q.event)
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|q| q.key.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Pending events that can move a task forward.
    pub fn driving(&self) -> usize {
        self.driving
    }
}

//! Discrete-event execution of a workload against a topology and placement.
//!
//! Each query splits into one work item per node hosting any of its
//! fragments. Items queue FIFO for one of the node's `vm_count` servers, are
//! served for `cpu share / service_rate` seconds, then ship their result bytes
//! to the client over a freshly sampled route. A query completes when its last
//! item's transfer finishes.
//!
//! Events at equal simulated time are ordered by (time, kind, instance id,
//! insertion sequence): service completions first, then capacity changes,
//! then arrivals. Route draws happen at service completion, in that order, so
//! a run is a pure function of its inputs and seed.

mod stats;
mod trace_io;

pub use stats::{
    detect_overload, per_template_stats, rank_demanding_templates, OverloadInterval, TemplateStats,
};
pub use trace_io::{read_trace_csv, write_trace_csv, TraceRow, TRACE_CSV_HEADER};

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::datamodel::{ensure_valid, query_footprint, Catalog, Placement};
use crate::rng::{stream, SimRng, Stream, RNG_ALGORITHM};
use crate::topology::{sample_route, transfer_time, Topology};
use crate::workload::QueryInstance;
use crate::{digest, Error, Result};

/// A scheduled change of one node's VM count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityChange {
    pub time_s: f64,
    pub node_id: String,
    pub vm_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub instance_id: u64,
    pub template_id: String,
    pub client_class: String,
    pub arrival_s: f64,
    /// Service start per participating node.
    pub start_service_s: BTreeMap<String, f64>,
    pub completion_s: f64,
    pub latency_s: f64,
    /// Breakdown of the item that finished last.
    pub queue_wait_s: f64,
    pub service_s: f64,
    pub network_s: f64,
    /// Route used per participating node, in node-id order.
    pub route_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigests {
    pub topology: String,
    pub catalog: String,
    pub placement: String,
    pub workload: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub rng_algorithm: String,
    pub digests: InputDigests,
    /// Capacity changes actually applied, in application order.
    pub capacity_timeline: Vec<CapacityChange>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    /// One record per submitted instance, in arrival order.
    pub records: Vec<QueryRecord>,
    pub manifest: RunManifest,
}

impl Trace {
    pub fn mean_latency(&self) -> f64 {
        mean(self.records.iter().map(|r| r.latency_s))
    }
}

pub(crate) fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Everything a run needs besides the capacity schedule.
#[derive(Debug, Clone, Copy)]
pub struct SimInput<'a> {
    pub topology: &'a Topology,
    pub catalog: &'a Catalog,
    pub placement: &'a Placement,
    pub workload: &'a [QueryInstance],
    pub seed: u64,
}

/// Runs the workload to completion with an optional capacity schedule.
pub fn simulate(input: SimInput<'_>, capacity_schedule: &[CapacityChange]) -> Result<Trace> {
    let mut sim = Simulation::new(input)?;
    for change in capacity_schedule {
        sim.schedule_capacity(change.clone())?;
    }
    Ok(sim.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    ServiceDone = 0,
    Capacity = 1,
    Arrival = 2,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    kind: EventKind,
    instance: usize,
    seq: u64,
    /// Work item index for service completions, capacity-change index otherwise.
    payload: usize,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.kind.cmp(&other.kind))
            .then(self.instance.cmp(&other.instance))
            .then(self.seq.cmp(&other.seq))
    }
}

#[derive(Debug)]
struct WorkItem {
    query: usize,
    node: usize,
    cpu_work: f64,
    bytes: u64,
    start_s: f64,
}

#[derive(Debug)]
struct NodeState {
    capacity: u32,
    busy: u32,
    queue: VecDeque<usize>,
}

#[derive(Debug, Default)]
struct QueryProgress {
    remaining: usize,
    start_service_s: BTreeMap<String, f64>,
    route_ids: Vec<(usize, String)>,
    /// (finish time, queue wait, service, network) of the latest item so far.
    critical: Option<(f64, f64, f64, f64)>,
    completion_s: Option<f64>,
}

/// Entries of the optional execution log, used to audit server occupancy.
#[derive(Debug, Clone, PartialEq)]
pub enum LogEntry {
    Start { time_s: f64, node: usize, instance: usize },
    Finish { time_s: f64, node: usize, instance: usize },
    Capacity { time_s: f64, node: usize, vm_count: u32 },
}

/// A resumable simulation. Use [`simulate`] for one-shot runs; the
/// step-wise API lets a controller observe and actuate at sample instants.
pub struct Simulation<'a> {
    input: SimInput<'a>,
    now: f64,
    seq: u64,
    events: BinaryHeap<Reverse<Event>>,
    nodes: Vec<NodeState>,
    items: Vec<WorkItem>,
    queries: Vec<QueryProgress>,
    capacity_changes: Vec<CapacityChange>,
    timeline: Vec<CapacityChange>,
    /// Query indices in the order their completion time became known.
    finished: Vec<usize>,
    route_rng: SimRng,
    log: Option<Vec<LogEntry>>,
}

impl<'a> Simulation<'a> {
    pub fn new(input: SimInput<'a>) -> Result<Self> {
        ensure_valid(input.placement, input.catalog, input.topology)?;
        let templates: HashMap<&str, usize> = input
            .catalog
            .templates
            .iter()
            .enumerate()
            .map(|(i, t)| (t.template_id.as_str(), i))
            .collect();
        let classes = input.topology.client_classes();
        let mut prev_arrival = f64::NEG_INFINITY;
        for q in input.workload {
            if !templates.contains_key(q.template_id.as_str()) {
                return Err(Error::Validation(format!(
                    "query {} uses unknown template `{}`",
                    q.instance_id, q.template_id
                )));
            }
            if !classes.iter().any(|c| *c == q.client_class) {
                return Err(Error::Validation(format!(
                    "query {} uses unknown client class `{}`",
                    q.instance_id, q.client_class
                )));
            }
            if !(q.arrival_s >= prev_arrival && q.arrival_s.is_finite()) {
                return Err(Error::Validation("workload is not sorted by arrival".into()));
            }
            prev_arrival = q.arrival_s;
        }

        let nodes = input
            .topology
            .nodes()
            .iter()
            .map(|n| NodeState { capacity: n.vm_count, busy: 0, queue: VecDeque::new() })
            .collect();
        let mut sim = Self {
            input,
            now: 0.0,
            seq: 0,
            events: BinaryHeap::new(),
            nodes,
            items: Vec::new(),
            queries: (0..input.workload.len()).map(|_| QueryProgress::default()).collect(),
            capacity_changes: Vec::new(),
            timeline: Vec::new(),
            finished: Vec::new(),
            route_rng: stream(input.seed, Stream::Routes),
            log: None,
        };
        for (i, q) in input.workload.iter().enumerate() {
            sim.push(q.arrival_s, EventKind::Arrival, i, 0);
        }
        Ok(sim)
    }

    /// Keeps an execution log retrievable with [`Simulation::log`].
    pub fn with_log(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn log(&self) -> Option<&[LogEntry]> {
        self.log.as_deref()
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn vm_count(&self, node_id: &str) -> Option<u32> {
        self.input.topology.node_position(node_id).map(|i| self.nodes[i].capacity)
    }

    fn push(&mut self, time: f64, kind: EventKind, instance: usize, payload: usize) {
        self.seq += 1;
        self.events.push(Reverse(Event { time, kind, instance, seq: self.seq, payload }));
    }

    fn check_capacity(&self, change: &CapacityChange) -> Result<usize> {
        let node_pos = self
            .input
            .topology
            .node_position(&change.node_id)
            .ok_or_else(|| Error::Validation(format!("capacity change for unknown node `{}`", change.node_id)))?;
        let node = &self.input.topology.nodes()[node_pos];
        if change.vm_count < node.vm_min || change.vm_count > node.vm_max {
            return Err(Error::CapacityOutOfBounds {
                node_id: change.node_id.clone(),
                vm_count: change.vm_count,
                vm_min: node.vm_min,
                vm_max: node.vm_max,
            });
        }
        if !change.time_s.is_finite() {
            return Err(Error::Validation("capacity change time must be finite".into()));
        }
        Ok(node_pos)
    }

    /// Queues a capacity change. Changes scheduled in the past apply at the
    /// current time. In-service items are never preempted.
    pub fn schedule_capacity(&mut self, change: CapacityChange) -> Result<()> {
        self.check_capacity(&change)?;
        let time = change.time_s.max(self.now);
        let idx = self.capacity_changes.len();
        self.capacity_changes.push(change);
        self.push(time, EventKind::Capacity, 0, idx);
        Ok(())
    }

    /// Processes every event with time ≤ `t` and moves the clock to `t`.
    pub fn advance_to(&mut self, t: f64) {
        while let Some(Reverse(ev)) = self.events.peek() {
            if ev.time > t {
                break;
            }
            let Reverse(ev) = self.events.pop().expect("peeked");
            self.handle(ev);
        }
        self.now = self.now.max(t);
    }

    /// Runs to quiescence and returns the trace.
    pub fn finish(mut self) -> Trace {
        while let Some(Reverse(ev)) = self.events.pop() {
            self.handle(ev);
        }
        self.into_trace()
    }

    pub fn is_idle(&self) -> bool {
        self.events.is_empty()
    }

    fn handle(&mut self, ev: Event) {
        self.now = ev.time;
        match ev.kind {
            EventKind::Arrival => self.on_arrival(ev.instance),
            EventKind::ServiceDone => self.on_service_done(ev.payload),
            EventKind::Capacity => self.on_capacity(ev.payload),
        }
    }

    fn on_arrival(&mut self, query: usize) {
        let instance = &self.input.workload[query];
        let template = self
            .input
            .catalog
            .template(&instance.template_id)
            .expect("templates checked at construction");
        let footprint = query_footprint(template, self.input.placement);
        self.queries[query].remaining = footprint.len();
        for (node_id, share) in footprint {
            let node = self
                .input
                .topology
                .node_position(&node_id)
                .expect("placement validated");
            let item = self.items.len();
            self.items.push(WorkItem {
                query,
                node,
                cpu_work: share.cpu_work,
                bytes: share.bytes_out,
                start_s: f64::NAN,
            });
            self.nodes[node].queue.push_back(item);
            self.try_start(node);
        }
    }

    fn try_start(&mut self, node: usize) {
        let rate = self.input.topology.nodes()[node].service_rate;
        while self.nodes[node].busy < self.nodes[node].capacity {
            let Some(item) = self.nodes[node].queue.pop_front() else {
                break;
            };
            self.nodes[node].busy += 1;
            let now = self.now;
            let it = &mut self.items[item];
            it.start_s = now;
            let (query, done_at) = (it.query, now + it.cpu_work / rate);
            let node_id = self.input.topology.nodes()[node].node_id.clone();
            self.queries[query].start_service_s.insert(node_id, now);
            if let Some(log) = &mut self.log {
                log.push(LogEntry::Start { time_s: now, node, instance: query });
            }
            self.push(done_at, EventKind::ServiceDone, query, item);
        }
    }

    fn on_service_done(&mut self, item: usize) {
        let (query, node, bytes, start_s, cpu_work) = {
            let it = &self.items[item];
            (it.query, it.node, it.bytes, it.start_s, it.cpu_work)
        };
        self.nodes[node].busy -= 1;
        if let Some(log) = &mut self.log {
            log.push(LogEntry::Finish { time_s: self.now, node, instance: query });
        }

        let topology = self.input.topology;
        let node_spec = &topology.nodes()[node];
        let instance = &self.input.workload[query];
        let route = sample_route(topology, &instance.client_class, &node_spec.node_id, &mut self.route_rng)
            .expect("route coverage validated with topology");
        let network = transfer_time(bytes, route, topology);
        let finish = self.now + network;
        let service = cpu_work / node_spec.service_rate;
        let wait = start_s - instance.arrival_s;

        let progress = &mut self.queries[query];
        progress.route_ids.push((node, route.route_id.clone()));
        if progress.critical.is_none_or(|(f, ..)| finish > f) {
            progress.critical = Some((finish, wait, service, network));
        }
        progress.remaining -= 1;
        if progress.remaining == 0 {
            progress.completion_s = progress.critical.map(|c| c.0);
            self.finished.push(query);
        }
        self.try_start(node);
    }

    fn on_capacity(&mut self, idx: usize) {
        let change = self.capacity_changes[idx].clone();
        let node = self
            .input
            .topology
            .node_position(&change.node_id)
            .expect("checked when scheduled");
        self.nodes[node].capacity = change.vm_count;
        if let Some(log) = &mut self.log {
            log.push(LogEntry::Capacity { time_s: self.now, node, vm_count: change.vm_count });
        }
        self.timeline.push(CapacityChange { time_s: self.now, ..change });
        self.try_start(node);
    }

    /// Mean latency of queries completing in `(from, to]` and the
    /// time-averaged number of in-flight queries over the same interval.
    /// Only meaningful once the clock has reached `to`.
    pub fn interval_measurement(&self, from: f64, to: f64) -> IntervalMeasurement {
        let workload = self.input.workload;
        let mut completed = 0usize;
        let mut latency_sum = 0.0;
        for &q in &self.finished {
            let c = self.queries[q].completion_s.expect("finished queries have completion");
            if c > from && c <= to {
                completed += 1;
                latency_sum += c - workload[q].arrival_s;
            }
        }
        let span = to - from;
        let mut busy_time = 0.0;
        for (q, inst) in workload.iter().enumerate() {
            if inst.arrival_s >= to {
                break;
            }
            let end = self.queries[q].completion_s.unwrap_or(to).min(to);
            let start = inst.arrival_s.max(from);
            if end > start {
                busy_time += end - start;
            }
        }
        IntervalMeasurement {
            completed,
            mean_latency_s: (completed > 0).then(|| latency_sum / completed as f64),
            mean_in_flight: if span > 0.0 { busy_time / span } else { 0.0 },
        }
    }

    fn into_trace(self) -> Trace {
        let input = self.input;
        let records = input
            .workload
            .iter()
            .zip(self.queries)
            .map(|(inst, progress)| {
                let (completion_s, queue_wait_s, service_s, network_s) =
                    progress.critical.expect("every query has at least one work item");
                let mut routes = progress.route_ids;
                routes.sort_by_key(|(node, _)| input.topology.nodes()[*node].node_id.clone());
                QueryRecord {
                    instance_id: inst.instance_id,
                    template_id: inst.template_id.clone(),
                    client_class: inst.client_class.clone(),
                    arrival_s: inst.arrival_s,
                    start_service_s: progress.start_service_s,
                    completion_s,
                    latency_s: completion_s - inst.arrival_s,
                    queue_wait_s,
                    service_s,
                    network_s,
                    route_ids: routes.into_iter().map(|(_, r)| r).collect(),
                }
            })
            .collect();
        Trace {
            records,
            manifest: RunManifest {
                seed: input.seed,
                rng_algorithm: RNG_ALGORITHM.to_owned(),
                digests: InputDigests {
                    topology: digest(input.topology),
                    catalog: digest(input.catalog),
                    placement: digest(input.placement),
                    workload: digest(&input.workload),
                },
                capacity_timeline: self.timeline,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalMeasurement {
    pub completed: usize,
    /// `None` when nothing completed in the interval.
    pub mean_latency_s: Option<f64>,
    pub mean_in_flight: f64,
}

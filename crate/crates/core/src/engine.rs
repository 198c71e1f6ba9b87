//! Schedule replay and validation, the exhaustive optimum for small instances,
//! and the per-class queue rate model.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{LedgerError, OccupancyRow, SlotLedger, EPS};
use crate::schedulers::{makespan_of, prefetch_remote_inputs, Assignment, Cluster, Schedule};
use crate::topology::NodeId;
use crate::workload::{Interval, TaskId};

/// Default cap on the number of task-to-node maps the oracle may enumerate.
pub const DEFAULT_ORACLE_BUDGET: u64 = 100_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("infeasible schedule: {0}")]
    InfeasibleSchedule(String),
    #[error("inconsistent schedule: {0}")]
    InconsistentSchedule(String),
    #[error("oracle budget exceeded: {nodes}^{tasks} maps > {budget}")]
    BudgetExceeded { nodes: usize, tasks: usize, budget: u64 },
    #[error("traffic class {0:?} is not mapped to a queue")]
    UnmappedClass(TrafficClass),
    #[error("queue config: {0}")]
    InvalidQueueConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub task: TaskId,
    pub source: Option<NodeId>,
    pub transfer: Option<Interval>,
    pub compute: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTimeline {
    pub node: NodeId,
    pub idle_from: f64,
    pub entries: Vec<TimelineEntry>,
}

/// Replayed schedule: per-node task records plus the link-slot occupancy it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub slot_duration: f64,
    pub nodes: Vec<NodeTimeline>,
    pub occupancy: Vec<OccupancyRow>,
    pub makespan: f64,
}

impl Timeline {
    pub fn makespan(&self) -> f64 {
        makespan(self)
    }

    /// Plain-text Gantt chart: one row per node, one column per slot.
    /// Cells hold the computing task id, `▸` for an inbound transfer, `·` when idle.
    pub fn render_gantt(&self) -> String {
        let d = self.slot_duration;
        let slots = (self.makespan / d - EPS).ceil().max(0.0) as u64;
        let width = self
            .nodes
            .iter()
            .flat_map(|n| n.entries.iter())
            .map(|e| e.task.0.to_string().len())
            .chain(std::iter::once(slots.to_string().len()))
            .max()
            .unwrap_or(1);
        let label_width = self
            .nodes
            .iter()
            .map(|n| n.node.to_string().len())
            .max()
            .unwrap_or(3)
            .max(4);

        let mut out = String::new();
        let _ = write!(out, "{:<label_width$} |", "slot");
        for k in 1..=slots {
            let _ = write!(out, " {k:>width$}");
        }
        out.push('\n');
        for row in &self.nodes {
            let _ = write!(out, "{:<label_width$} |", row.node.to_string());
            for k in 1..=slots {
                let (lo, hi) = ((k - 1) as f64 * d, k as f64 * d);
                let overlaps = |iv: &Interval| iv.start < hi - EPS && iv.end > lo + EPS;
                let cell = if let Some(e) = row.entries.iter().find(|e| overlaps(&e.compute)) {
                    e.task.0.to_string()
                } else if row.entries.iter().any(|e| e.transfer.as_ref().is_some_and(overlaps)) {
                    "▸".to_string()
                } else {
                    "·".to_string()
                };
                let _ = write!(out, " {cell:>width$}");
            }
            out.push('\n');
        }
        out
    }
}

/// Largest compute end of a timeline; zero when no task ran.
pub fn makespan(timeline: &Timeline) -> f64 {
    timeline
        .nodes
        .iter()
        .flat_map(|n| n.entries.iter())
        .map(|e| e.compute.end)
        .fold(0.0, f64::max)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= EPS
}

/// Replay `schedule` on `ledger` (normally fresh) and check every claimed interval.
pub fn execute(schedule: &Schedule, cluster: &Cluster, mut ledger: SlotLedger) -> Result<Timeline, EngineError> {
    let job = &cluster.job;
    if schedule.assignments.len() != job.len() {
        return Err(EngineError::InconsistentSchedule(format!(
            "{} assignments for {} tasks",
            schedule.assignments.len(),
            job.len()
        )));
    }
    let mut seen = vec![false; job.len()];
    let mut per_node: BTreeMap<NodeId, Vec<(usize, &Assignment)>> =
        cluster.node_ids().map(|n| (n, Vec::new())).collect();
    let topo = &cluster.topology;

    for a in &schedule.assignments {
        let idx = job
            .index_of(a.task)
            .ok_or_else(|| EngineError::InconsistentSchedule(format!("unknown task {}", a.task)))?;
        if std::mem::replace(&mut seen[idx], true) {
            return Err(EngineError::InconsistentSchedule(format!("{} assigned twice", a.task)));
        }
        let task = &job.tasks[idx];
        let bucket = per_node.get_mut(&a.node).ok_or_else(|| {
            EngineError::InconsistentSchedule(format!("{} placed on unavailable {}", a.task, a.node))
        })?;
        bucket.push((idx, a));

        match (a.source, &a.reservation, a.transfer) {
            (None, None, None) => {
                if !task.is_local_to(a.node) {
                    return Err(EngineError::InconsistentSchedule(format!(
                        "{} runs on {} without its input",
                        a.task, a.node
                    )));
                }
            }
            (Some(source), Some(r), Some(t)) => {
                if !task.replicas.contains(&source) {
                    return Err(EngineError::InconsistentSchedule(format!(
                        "{} reads from {} which holds no replica",
                        a.task, source
                    )));
                }
                let path = topo
                    .route(source, a.node)
                    .map_err(|e| EngineError::InconsistentSchedule(e.to_string()))?;
                if r.path != path {
                    return Err(EngineError::InconsistentSchedule(format!(
                        "{} reservation path differs from route {source}->{}",
                        a.task, a.node
                    )));
                }
                if !close(r.start, t.start) || !close(r.end(), t.end) {
                    return Err(EngineError::InconsistentSchedule(format!(
                        "{} transfer interval does not match its reservation",
                        a.task
                    )));
                }
                let full = cluster.transfer.full_rate_duration(topo, task.split_size, &path);
                if !close(full / r.fraction, r.duration) {
                    return Err(EngineError::InconsistentSchedule(format!(
                        "{} transfer lasts {} s, share {} implies {} s",
                        a.task,
                        r.duration,
                        r.fraction,
                        full / r.fraction
                    )));
                }
                if t.start < -EPS {
                    return Err(EngineError::InconsistentSchedule(format!(
                        "{} transfer starts before time zero",
                        a.task
                    )));
                }
                ledger
                    .reserve(a.task, &r.path, r.start, r.duration, r.fraction)
                    .map_err(|e: LedgerError| EngineError::InfeasibleSchedule(format!("{}: {e}", a.task)))?;
            }
            _ => {
                return Err(EngineError::InconsistentSchedule(format!(
                    "{} has a partial transfer record",
                    a.task
                )))
            }
        }
    }

    let mut nodes = Vec::with_capacity(per_node.len());
    for (node, mut list) in per_node {
        list.sort_by(|x, y| x.1.compute.start.total_cmp(&y.1.compute.start).then(x.0.cmp(&y.0)));
        let idle_from = cluster.initial_idle(node).unwrap_or(0.0);
        let mut ready = idle_from;
        let mut entries = Vec::with_capacity(list.len());
        for (idx, a) in list {
            let tp = job.tasks[idx].tp(node);
            let start = a.transfer.map_or(ready, |t| ready.max(t.end));
            let compute = Interval::new(start, start + tp);
            if !close(compute.start, a.compute.start) || !close(compute.end, a.compute.end) {
                return Err(EngineError::InconsistentSchedule(format!(
                    "{} on {}: claimed compute [{}, {}], replay gives [{}, {}]",
                    a.task, node, a.compute.start, a.compute.end, compute.start, compute.end
                )));
            }
            ready = compute.end;
            entries.push(TimelineEntry {
                task: a.task,
                source: a.source,
                transfer: a.transfer,
                compute,
            });
        }
        nodes.push(NodeTimeline {
            node,
            idle_from,
            entries,
        });
    }

    let mut timeline = Timeline {
        slot_duration: ledger.slot_duration(),
        nodes,
        occupancy: ledger.occupancy(),
        makespan: 0.0,
    };
    timeline.makespan = makespan(&timeline);
    if !close(timeline.makespan, schedule.makespan) {
        return Err(EngineError::InconsistentSchedule(format!(
            "claimed makespan {} but replay gives {}",
            schedule.makespan, timeline.makespan
        )));
    }
    Ok(timeline)
}

/// Exhaustive minimum-makespan schedule over every task-to-node map.
///
/// Each map is replayed with tasks on a node in job order; a non-local task reads
/// from the replica giving the earliest transfer end, starting when its node becomes
/// idle. That replay is then also tried with every remote input prefetched (see
/// [`prefetch_remote_inputs`]) and the better of the two kept. Ties between maps go
/// to the lexicographically smallest node vector.
pub fn brute_force_optimal(cluster: &Cluster, ledger: &SlotLedger, budget: u64) -> Result<Schedule, EngineError> {
    let nodes: Vec<NodeId> = cluster.node_ids().collect();
    let m = cluster.job.len();
    let n = nodes.len();
    let maps = (n as u64).checked_pow(m as u32).unwrap_or(u64::MAX);
    if maps > budget || n == 0 && m > 0 {
        return Err(EngineError::BudgetExceeded {
            nodes: n,
            tasks: m,
            budget,
        });
    }

    let mut choice = vec![0usize; m];
    let mut best: Option<Schedule> = None;
    loop {
        let map: Vec<NodeId> = choice.iter().map(|&c| nodes[c]).collect();
        let mut replay_ledger = ledger.clone();
        let base = replay_map(cluster, &mut replay_ledger, &map);
        let prefetched = prefetch_remote_inputs(cluster, &mut replay_ledger, base.clone());
        let candidate = if prefetched.makespan < base.makespan - EPS {
            prefetched
        } else {
            base
        };
        if best.as_ref().is_none_or(|b| candidate.makespan < b.makespan - EPS) {
            best = Some(candidate);
        }
        // Odometer increment, last task fastest.
        let mut pos = m;
        loop {
            if pos == 0 {
                return Ok(best.expect("at least one map"));
            }
            pos -= 1;
            choice[pos] += 1;
            if choice[pos] < n {
                break;
            }
            choice[pos] = 0;
        }
    }
}

fn replay_map(cluster: &Cluster, ledger: &mut SlotLedger, map: &[NodeId]) -> Schedule {
    let topo = &cluster.topology;
    let mut idle: BTreeMap<NodeId, f64> = cluster.nodes.iter().map(|s| (s.node, s.idle_at)).collect();
    let mut assignments = Vec::with_capacity(map.len());
    for (task, &node) in cluster.job.tasks.iter().zip(map) {
        let ready = idle[&node];
        let tp = task.tp(node);
        let assignment = if task.is_local_to(node) {
            Assignment {
                task: task.id,
                node,
                source: None,
                reservation: None,
                transfer: None,
                compute: Interval::new(ready, ready + tp),
            }
        } else {
            let mut best = None;
            for &source in &task.replicas {
                let Ok(path) = topo.route(source, node) else {
                    continue;
                };
                let full = cluster.transfer.full_rate_duration(topo, task.split_size, &path);
                if let Some(w) = ledger.earliest_window(&path, full, ready, f64::INFINITY) {
                    if best.as_ref().is_none_or(|(_, _, b): &(_, _, crate::ledger::Window)| w.end < b.end) {
                        best = Some((source, path, w));
                    }
                }
            }
            let (source, path, w) = best.expect("a replica holder is reachable");
            let r = ledger
                .reserve(task.id, &path, w.start, w.duration(), w.fraction)
                .expect("planned window is grantable");
            let start = ready.max(w.end);
            Assignment {
                task: task.id,
                node,
                source: Some(source),
                reservation: Some(r),
                transfer: Some(Interval::new(w.start, w.end)),
                compute: Interval::new(start, start + tp),
            }
        };
        idle.insert(node, assignment.compute.end);
        assignments.push(assignment);
    }
    let makespan = makespan_of(&assignments);
    Schedule {
        assignments,
        makespan,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficClass {
    Shuffle,
    Background,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Queue {
    pub name: String,
    /// Mbps.
    pub rate: f64,
}

/// Static per-class rate caps installed on the switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueConfig {
    /// Switch maximum rate in Mbps.
    pub max_rate: f64,
    pub queues: Vec<Queue>,
    pub class_map: BTreeMap<TrafficClass, String>,
}

impl QueueConfig {
    /// Three queues of 100, 40 and 10 Mbps under a 150 Mbps switch limit;
    /// shuffle traffic to the first, background to the last, the rest in between.
    pub fn example3() -> Self {
        let q = |name: &str, rate| Queue {
            name: name.to_string(),
            rate,
        };
        QueueConfig {
            max_rate: 150.0,
            queues: vec![q("q1", 100.0), q("q2", 40.0), q("q3", 10.0)],
            class_map: BTreeMap::from([
                (TrafficClass::Shuffle, "q1".to_string()),
                (TrafficClass::Other, "q2".to_string()),
                (TrafficClass::Background, "q3".to_string()),
            ]),
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.max_rate > 0.0) {
            return Err(EngineError::InvalidQueueConfig(format!("max_rate {}", self.max_rate)));
        }
        for q in &self.queues {
            if !(q.rate > 0.0) || q.rate > self.max_rate {
                return Err(EngineError::InvalidQueueConfig(format!(
                    "queue {} rate {} outside (0, {}]",
                    q.name, q.rate, self.max_rate
                )));
            }
        }
        for name in self.class_map.values() {
            if !self.queues.iter().any(|q| &q.name == name) {
                return Err(EngineError::InvalidQueueConfig(format!("unknown queue {name}")));
            }
        }
        Ok(())
    }
}

/// Rate available to one traffic class.
pub fn effective_rate(config: &QueueConfig, class: TrafficClass) -> Result<f64, EngineError> {
    let name = config
        .class_map
        .get(&class)
        .ok_or(EngineError::UnmappedClass(class))?;
    config
        .queues
        .iter()
        .find(|q| &q.name == name)
        .map(|q| q.rate)
        .ok_or(EngineError::UnmappedClass(class))
}

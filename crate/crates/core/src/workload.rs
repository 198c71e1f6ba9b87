//! Jobs, tasks, node load state and the completion-time cost model.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub u32);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TK{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorkloadError {
    #[error("progress rate undefined for progress score {0}")]
    UndefinedRate(f64),
    #[error("invalid progress sample: score {score}, elapsed {elapsed}")]
    InvalidSample { score: f64, elapsed: f64 },
    #[error("no available node")]
    NoAvailableNode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: TaskId,
    /// Input split size in megabytes.
    pub split_size: f64,
    /// Nodes holding a replica of the input split.
    pub replicas: BTreeSet<NodeId>,
    /// Computation time per node in seconds.
    pub compute_time: BTreeMap<NodeId, f64>,
}

impl Task {
    /// True when running on `node` needs no input transfer.
    pub fn is_local_to(&self, node: NodeId) -> bool {
        self.split_size == 0.0 || self.replicas.contains(&node)
    }

    /// Computation time on `node`. Panics if the node is unknown to the task;
    /// scenarios are validated so every available node has an entry.
    pub fn tp(&self, node: NodeId) -> f64 {
        self.compute_time[&node]
    }
}

/// Tasks in scheduling order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Job {
    pub tasks: Vec<Task>,
}

impl Job {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn index_of(&self, id: TaskId) -> Option<usize> {
        self.tasks.iter().position(|t| t.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Self {
        Interval { start, end }
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub node: NodeId,
    /// Time the node becomes idle.
    pub idle_at: f64,
    pub assigned: Vec<(TaskId, Option<Interval>, Interval)>,
}

impl NodeState {
    pub fn new(node: NodeId, idle_at: f64) -> Self {
        NodeState {
            node,
            idle_at,
            assigned: Vec::new(),
        }
    }

    /// Append a task; idle time moves to the end of its computation.
    pub fn push(&mut self, task: TaskId, transfer: Option<Interval>, compute: Interval) {
        self.assigned.push((task, transfer, compute));
        self.idle_at = compute.end;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgressSample {
    pub progress_score: f64,
    /// Seconds the task has been running.
    pub elapsed: f64,
}

/// Transfer plus computation time.
pub fn execution_time(tm: f64, tp: f64) -> f64 {
    tp + tm
}

/// Execution time plus the time the node becomes idle.
pub fn completion_time(te: f64, idle_at: f64) -> f64 {
    te + idle_at
}

/// Node minimising completion time; `execution` yields the execution time on a node.
/// Ties go to the smallest node id.
pub fn best_node_for_task<F>(nodes: &[NodeState], mut execution: F) -> Result<NodeId, WorkloadError>
where
    F: FnMut(NodeId) -> f64,
{
    let mut best: Option<(f64, NodeId)> = None;
    for state in nodes {
        let yc = completion_time(execution(state.node), state.idle_at);
        best = match best {
            Some((b, id)) if b < yc || (b == yc && id < state.node) => Some((b, id)),
            _ => Some((yc, state.node)),
        };
    }
    best.map(|(_, id)| id).ok_or(WorkloadError::NoAvailableNode)
}

/// Remaining seconds for a running task: `(1 - score) / (score / elapsed)`.
pub fn remaining_time(sample: ProgressSample) -> Result<f64, WorkloadError> {
    let ProgressSample {
        progress_score: score,
        elapsed,
    } = sample;
    if !(0.0..=1.0).contains(&score) || !(elapsed > 0.0) {
        return Err(WorkloadError::InvalidSample { score, elapsed });
    }
    if score == 0.0 {
        return Err(WorkloadError::UndefinedRate(score));
    }
    let rate = score / elapsed;
    Ok((1.0 - score) / rate)
}

/// Idle estimate for a node: `now` plus the longest remaining time of its running tasks.
pub fn estimate_idle(now: f64, samples: &[ProgressSample]) -> Result<f64, WorkloadError> {
    let mut longest = 0.0f64;
    for s in samples {
        longest = longest.max(remaining_time(*s)?);
    }
    Ok(now + longest)
}

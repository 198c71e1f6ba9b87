//! Task placement policies.
//!
//! * `hds`: node-driven, locality first, random non-local fallback.
//! * `bar`: `hds` allocation, then repeatedly relocates the latest-finishing task
//!   while that strictly lowers its completion time.
//! * `bass`: per task in job order, arbitrates between the least-loaded local
//!   replica holder and the globally least-loaded node, using the ledger to price
//!   and reserve the remote transfer.
//! * `prebass`: `bass`, then pulls every remote transfer as early as the ledger
//!   allows, sourcing from the least-loaded replica holder.
//!
//! Transfers and computation of one task are serialized on its node: computation
//! starts at `max(node idle, transfer end)`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ledger::{Reservation, SlotLedger, Window, EPS};
use crate::topology::{LinkId, NodeId, Topology};
use crate::workload::{Interval, Job, NodeState, Task, TaskId};

/// How long a transfer takes at the full residual rate of its path.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransferModel {
    /// Per-block transfer time that replaces the size/bandwidth arithmetic.
    pub fixed_transfer_time: Option<f64>,
    /// Rate ceiling (Mbps) imposed on task transfers, e.g. by a QoS queue.
    pub rate_cap: Option<f64>,
}

impl TransferModel {
    pub fn path_rate(&self, topology: &Topology, path: &[LinkId]) -> f64 {
        let cap = topology.path_capacity(path);
        match self.rate_cap {
            Some(limit) => cap.min(limit),
            None => cap,
        }
    }

    /// Transfer duration at full share; zero for empty paths and empty splits.
    pub fn full_rate_duration(&self, topology: &Topology, split_mb: f64, path: &[LinkId]) -> f64 {
        if path.is_empty() || split_mb == 0.0 {
            return 0.0;
        }
        match self.fixed_transfer_time {
            Some(t) => t,
            None => split_mb * 8.0 / self.path_rate(topology, path),
        }
    }
}

/// Everything a scheduler reads: graph, workload, initial loads and transfer pricing.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub topology: Topology,
    pub job: Job,
    /// Available nodes with their initial idle times, sorted by id.
    pub nodes: Vec<NodeState>,
    pub transfer: TransferModel,
}

impl Cluster {
    pub fn initial_idle(&self, node: NodeId) -> Option<f64> {
        self.nodes.iter().find(|n| n.node == node).map(|n| n.idle_at)
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().map(|n| n.node)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub task: TaskId,
    pub node: NodeId,
    /// Replica holder the input is read from; `None` for local runs.
    pub source: Option<NodeId>,
    pub reservation: Option<Reservation>,
    pub transfer: Option<Interval>,
    pub compute: Interval,
}

impl Assignment {
    pub fn is_local(&self) -> bool {
        self.source.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// One assignment per task, in job order.
    pub assignments: Vec<Assignment>,
    pub makespan: f64,
}

impl Schedule {
    pub fn assignment(&self, task: TaskId) -> Option<&Assignment> {
        self.assignments.iter().find(|a| a.task == task)
    }

    pub fn tasks_on(&self, node: NodeId) -> Vec<TaskId> {
        let mut on: Vec<&Assignment> = self.assignments.iter().filter(|a| a.node == node).collect();
        on.sort_by(|a, b| a.compute.start.total_cmp(&b.compute.start));
        on.into_iter().map(|a| a.task).collect()
    }

    pub fn locality_ratio(&self) -> f64 {
        if self.assignments.is_empty() {
            return 1.0;
        }
        let local = self.assignments.iter().filter(|a| a.is_local()).count();
        local as f64 / self.assignments.len() as f64
    }
}

/// Largest compute end over all assignments; zero for an empty job.
pub fn makespan_of(assignments: &[Assignment]) -> f64 {
    assignments.iter().map(|a| a.compute.end).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerKind {
    Hds,
    Bar,
    Bass,
    PreBass,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 4] = [
        SchedulerKind::Hds,
        SchedulerKind::Bar,
        SchedulerKind::Bass,
        SchedulerKind::PreBass,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::Hds => "hds",
            SchedulerKind::Bar => "bar",
            SchedulerKind::Bass => "bass",
            SchedulerKind::PreBass => "prebass",
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchedulerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hds" => Ok(SchedulerKind::Hds),
            "bar" => Ok(SchedulerKind::Bar),
            "bass" => Ok(SchedulerKind::Bass),
            "prebass" | "pre-bass" => Ok(SchedulerKind::PreBass),
            other => Err(format!(
                "unknown scheduler '{other}', expected one of hds, bar, bass, prebass"
            )),
        }
    }
}

/// Run one policy. `seed` only affects the random fallback of `hds` (and `bar`'s first phase).
pub fn schedule(kind: SchedulerKind, cluster: &Cluster, ledger: &mut SlotLedger, seed: u64) -> Schedule {
    match kind {
        SchedulerKind::Hds => schedule_hds(cluster, ledger, seed),
        SchedulerKind::Bar => schedule_bar(cluster, ledger, seed),
        SchedulerKind::Bass => schedule_bass(cluster, ledger),
        SchedulerKind::PreBass => schedule_prebass(cluster, ledger),
    }
}

/// Bandwidth (Mbps) a remote transfer needs so the remote node finishes strictly
/// before the local candidate. Infinite when no transfer budget is left.
pub fn required_bandwidth(split_mb: f64, loc_completion: f64, minnow_idle: f64, tp: f64) -> f64 {
    let budget = loc_completion - tp - minnow_idle;
    if budget <= 0.0 {
        return f64::INFINITY;
    }
    if split_mb == 0.0 {
        return 0.0;
    }
    split_mb * 8.0 / budget
}

#[derive(Debug, Clone, PartialEq)]
struct RemotePlan {
    source: NodeId,
    path: Vec<LinkId>,
    window: Window,
}

/// Incremental schedule under construction.
struct Builder<'a> {
    cluster: &'a Cluster,
    ledger: &'a mut SlotLedger,
    idle: BTreeMap<NodeId, f64>,
    queues: BTreeMap<NodeId, Vec<usize>>,
    placed: Vec<Option<Assignment>>,
}

impl<'a> Builder<'a> {
    fn new(cluster: &'a Cluster, ledger: &'a mut SlotLedger) -> Self {
        Builder {
            cluster,
            ledger,
            idle: cluster.nodes.iter().map(|n| (n.node, n.idle_at)).collect(),
            queues: cluster.nodes.iter().map(|n| (n.node, Vec::new())).collect(),
            placed: vec![None; cluster.job.len()],
        }
    }

    fn task(&self, idx: usize) -> &'a Task {
        &self.cluster.job.tasks[idx]
    }

    fn idle(&self, node: NodeId) -> f64 {
        self.idle[&node]
    }

    /// Node with the earliest idle time, smallest id on ties.
    fn least_loaded(&self, mut filter: impl FnMut(NodeId) -> bool) -> Option<NodeId> {
        self.idle
            .iter()
            .filter(|(n, _)| filter(**n))
            .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(b.0)))
            .map(|(n, _)| *n)
    }

    /// Best replica source for moving task `idx` to `node`, starting no earlier
    /// than `not_before`: earliest transfer end, smallest source id on ties.
    fn remote_plan(&self, idx: usize, node: NodeId, not_before: f64) -> Option<RemotePlan> {
        let task = self.task(idx);
        let topo = &self.cluster.topology;
        let mut best: Option<RemotePlan> = None;
        for &source in &task.replicas {
            if source == node {
                continue;
            }
            let Ok(path) = topo.route(source, node) else {
                continue;
            };
            let full = self.cluster.transfer.full_rate_duration(topo, task.split_size, &path);
            let Some(window) = self.ledger.earliest_window(&path, full, not_before, f64::INFINITY)
            else {
                continue;
            };
            if best.as_ref().is_none_or(|b| window.end < b.window.end) {
                best = Some(RemotePlan {
                    source,
                    path,
                    window,
                });
            }
        }
        best
    }

    /// Completion time of task `idx` if appended to `node` now.
    fn candidate(&self, idx: usize, node: NodeId) -> (f64, Option<RemotePlan>) {
        let task = self.task(idx);
        let idle = self.idle(node);
        if task.is_local_to(node) {
            return (idle + task.tp(node), None);
        }
        match self.remote_plan(idx, node, idle) {
            Some(plan) => (plan.window.end.max(idle) + task.tp(node), Some(plan)),
            None => (f64::INFINITY, None),
        }
    }

    fn place_local(&mut self, idx: usize, node: NodeId) {
        let start = self.idle(node);
        let end = start + self.task(idx).tp(node);
        self.push(
            idx,
            Assignment {
                task: self.task(idx).id,
                node,
                source: None,
                reservation: None,
                transfer: None,
                compute: Interval::new(start, end),
            },
        );
    }

    fn place_remote(&mut self, idx: usize, node: NodeId, plan: RemotePlan) {
        let task = self.task(idx);
        let w = plan.window;
        let reservation = self
            .ledger
            .reserve(task.id, &plan.path, w.start, w.duration(), w.fraction)
            .expect("planned window is grantable");
        let start = self.idle(node).max(w.end);
        let end = start + task.tp(node);
        self.push(
            idx,
            Assignment {
                task: task.id,
                node,
                source: Some(plan.source),
                reservation: Some(reservation),
                transfer: Some(Interval::new(w.start, w.end)),
                compute: Interval::new(start, end),
            },
        );
    }

    fn place(&mut self, idx: usize, node: NodeId, plan: Option<RemotePlan>) {
        match plan {
            Some(plan) => self.place_remote(idx, node, plan),
            None => self.place_local(idx, node),
        }
    }

    fn push(&mut self, idx: usize, assignment: Assignment) {
        let node = assignment.node;
        self.idle.insert(node, assignment.compute.end);
        self.queues.get_mut(&node).unwrap().push(idx);
        self.placed[idx] = Some(assignment);
    }

    /// Remove the last task of `node`, returning its assignment and releasing its transfer.
    fn pop(&mut self, node: NodeId) -> Option<(usize, Assignment)> {
        let idx = self.queues.get_mut(&node)?.pop()?;
        let assignment = self.placed[idx].take().expect("queued task is placed");
        if let Some(r) = &assignment.reservation {
            self.ledger.release(r).expect("held reservation");
        }
        let idle = match self.queues[&node].last() {
            Some(&prev) => self.placed[prev].as_ref().unwrap().compute.end,
            None => self.cluster.initial_idle(node).unwrap(),
        };
        self.idle.insert(node, idle);
        Some((idx, assignment))
    }

    /// Put back an assignment previously removed with `pop`.
    fn restore(&mut self, idx: usize, mut assignment: Assignment) {
        if let Some(r) = &assignment.reservation {
            let again = self
                .ledger
                .reserve(r.task, &r.path, r.start, r.duration, r.fraction)
                .expect("released slots are still free");
            assignment.reservation = Some(again);
        }
        self.push(idx, assignment);
    }

    /// Recompute every node's chain from transfer ends and initial idle times.
    fn reflow(&mut self) {
        for (node, queue) in &self.queues {
            let mut ready = self.cluster.initial_idle(*node).unwrap();
            for &idx in queue {
                let a = self.placed[idx].as_mut().unwrap();
                let tp = a.compute.len();
                let start = a.transfer.map_or(ready, |t| ready.max(t.end));
                a.compute = Interval::new(start, start + tp);
                ready = a.compute.end;
            }
            self.idle.insert(*node, ready);
        }
    }

    fn finish(self) -> Schedule {
        let assignments: Vec<Assignment> = self
            .placed
            .into_iter()
            .map(|a| a.expect("every task placed"))
            .collect();
        let makespan = makespan_of(&assignments);
        Schedule {
            assignments,
            makespan,
        }
    }
}

pub fn schedule_hds(cluster: &Cluster, ledger: &mut SlotLedger, seed: u64) -> Schedule {
    let mut b = Builder::new(cluster, ledger);
    run_hds(&mut b, seed);
    b.finish()
}

fn run_hds(b: &mut Builder<'_>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pending: Vec<usize> = (0..b.cluster.job.len()).collect();
    while !pending.is_empty() {
        let Some(node) = b.least_loaded(|_| true) else {
            return;
        };
        match pending.iter().position(|&i| b.task(i).is_local_to(node)) {
            Some(pos) => {
                let idx = pending.remove(pos);
                b.place_local(idx, node);
            }
            None => {
                let idx = pending.remove(rng.gen_range(0..pending.len()));
                let plan = b.remote_plan(idx, node, b.idle(node));
                b.place(idx, node, plan);
            }
        }
    }
}

pub fn schedule_bar(cluster: &Cluster, ledger: &mut SlotLedger, seed: u64) -> Schedule {
    let mut b = Builder::new(cluster, ledger);
    run_hds(&mut b, seed);

    let m = cluster.job.len();
    for _ in 0..m * m {
        // The latest finisher is always the last task on its node.
        let latest = b
            .queues
            .iter()
            .filter_map(|(node, q)| q.last().map(|&i| (*node, b.placed[i].as_ref().unwrap().compute.end)))
            .max_by(|x, y| x.1.total_cmp(&y.1).then(y.0.cmp(&x.0)));
        let Some((from, latest_end)) = latest else {
            break;
        };
        let (idx, original) = b.pop(from).unwrap();

        let mut best: Option<(f64, NodeId, Option<RemotePlan>)> = None;
        for node in cluster.node_ids().filter(|n| *n != from) {
            let (yc, plan) = b.candidate(idx, node);
            if yc + EPS < latest_end && best.as_ref().is_none_or(|(c, _, _)| yc < *c) {
                best = Some((yc, node, plan));
            }
        }
        match best {
            Some((_, node, plan)) => b.place(idx, node, plan),
            None => {
                b.restore(idx, original);
                break;
            }
        }
    }
    b.finish()
}

/// Which branch of the local-versus-remote arbitration fired for a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BassCase {
    /// The local holder is also the least-loaded node (or ties with it).
    LocalOptimal,
    /// Remote node wins with a slot reservation.
    RemoteOptimal,
    /// Remote would not finish strictly earlier with the residual bandwidth.
    BandwidthLimited,
    /// No available node holds a replica.
    LocalityStarvation,
}

/// Record of one arbitration, for inspection and tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BassDecision {
    pub task: TaskId,
    pub case: BassCase,
    pub chosen: NodeId,
    pub local_node: Option<NodeId>,
    pub local_completion: Option<f64>,
    pub minnow: NodeId,
    pub minnow_idle: f64,
    pub remote_completion: Option<f64>,
    pub required_bandwidth: Option<f64>,
    pub available_bandwidth: Option<f64>,
}

pub fn schedule_bass(cluster: &Cluster, ledger: &mut SlotLedger) -> Schedule {
    schedule_bass_traced(cluster, ledger).0
}

pub fn schedule_bass_traced(cluster: &Cluster, ledger: &mut SlotLedger) -> (Schedule, Vec<BassDecision>) {
    let mut b = Builder::new(cluster, ledger);
    let trace = run_bass(&mut b);
    (b.finish(), trace)
}

fn run_bass(b: &mut Builder<'_>) -> Vec<BassDecision> {
    let mut trace = Vec::with_capacity(b.cluster.job.len());
    for idx in 0..b.cluster.job.len() {
        let task = b.task(idx);
        let Some(minnow) = b.least_loaded(|_| true) else {
            break;
        };
        let minnow_idle = b.idle(minnow);
        let local = b.least_loaded(|n| task.is_local_to(n));
        let mut decision = BassDecision {
            task: task.id,
            case: BassCase::LocalOptimal,
            chosen: minnow,
            local_node: local,
            local_completion: local.map(|n| b.idle(n) + task.tp(n)),
            minnow,
            minnow_idle,
            remote_completion: None,
            required_bandwidth: None,
            available_bandwidth: None,
        };

        match local {
            Some(loc) if loc == minnow || b.idle(loc) <= minnow_idle => {
                decision.chosen = loc;
                b.place_local(idx, loc);
            }
            Some(loc) => {
                let loc_completion = b.idle(loc) + task.tp(loc);
                let plan = b.remote_plan(idx, minnow, minnow_idle);
                let remote_completion = plan
                    .as_ref()
                    .map_or(f64::INFINITY, |p| p.window.end.max(minnow_idle) + task.tp(minnow));
                if let Some(p) = &plan {
                    let topo = &b.cluster.topology;
                    let rate = b.cluster.transfer.path_rate(topo, &p.path);
                    let full = b.cluster.transfer.full_rate_duration(topo, task.split_size, &p.path);
                    let budget = loc_completion - task.tp(minnow) - minnow_idle;
                    decision.required_bandwidth = Some(if budget > 0.0 {
                        rate * full / budget
                    } else {
                        f64::INFINITY
                    });
                    decision.available_bandwidth = Some(rate * p.window.fraction);
                }
                decision.remote_completion = Some(remote_completion);
                if remote_completion < loc_completion {
                    decision.case = BassCase::RemoteOptimal;
                    decision.chosen = minnow;
                    b.place(idx, minnow, plan);
                } else {
                    decision.case = BassCase::BandwidthLimited;
                    decision.chosen = loc;
                    b.place_local(idx, loc);
                }
            }
            None => {
                let plan = b.remote_plan(idx, minnow, minnow_idle);
                decision.case = BassCase::LocalityStarvation;
                decision.remote_completion =
                    plan.as_ref().map(|p| p.window.end.max(minnow_idle) + task.tp(minnow));
                b.place(idx, minnow, plan);
            }
        }
        trace.push(decision);
    }
    trace
}

pub fn schedule_prebass(cluster: &Cluster, ledger: &mut SlotLedger) -> Schedule {
    let mut b = Builder::new(cluster, ledger);
    run_bass(&mut b);
    prefetch_pass(&mut b);
    b.finish()
}

/// Move every remote input of `schedule` to its earliest window from time 0,
/// reading from the least-loaded replica holder, then recompute node chains.
/// `ledger` must hold the schedule's reservations.
pub fn prefetch_remote_inputs(cluster: &Cluster, ledger: &mut SlotLedger, schedule: Schedule) -> Schedule {
    let mut b = Builder::new(cluster, ledger);
    let mut order: Vec<Assignment> = schedule.assignments;
    order.sort_by(|x, y| x.compute.start.total_cmp(&y.compute.start));
    for a in order {
        let idx = cluster.job.index_of(a.task).expect("task belongs to the job");
        b.push(idx, a);
    }
    prefetch_pass(&mut b);
    b.finish()
}

fn prefetch_pass(b: &mut Builder<'_>) {
    let cluster = b.cluster;
    let topo = &cluster.topology;
    // Holders not among the available nodes run nothing of ours: load 0.
    let load = |n: NodeId| cluster.initial_idle(n).unwrap_or(0.0);
    for idx in 0..cluster.job.len() {
        let Some(current) = b.placed[idx].clone() else {
            continue;
        };
        let (Some(reservation), Some(transfer)) = (&current.reservation, current.transfer) else {
            continue;
        };
        let task = b.task(idx);
        let Some(source) = task
            .replicas
            .iter()
            .copied()
            .filter(|h| *h != current.node)
            .min_by(|x, y| load(*x).total_cmp(&load(*y)).then(x.cmp(y)))
        else {
            continue;
        };
        let Ok(path) = topo.route(source, current.node) else {
            continue;
        };
        b.ledger.release(reservation).expect("held reservation");
        let full = cluster.transfer.full_rate_duration(topo, task.split_size, &path);
        let prefetch = b.ledger.earliest_window(&path, full, 0.0, transfer.end);
        let updated = match prefetch {
            Some(w) => {
                let r = b
                    .ledger
                    .reserve(task.id, &path, w.start, w.duration(), w.fraction)
                    .expect("planned window is grantable");
                Assignment {
                    source: Some(source),
                    reservation: Some(r),
                    transfer: Some(Interval::new(w.start, w.end)),
                    ..current
                }
            }
            None => {
                let r = b
                    .ledger
                    .reserve(task.id, &reservation.path, reservation.start, reservation.duration, reservation.fraction)
                    .expect("released slots are still free");
                Assignment {
                    reservation: Some(r),
                    ..current
                }
            }
        };
        b.placed[idx] = Some(updated);
    }
    b.reflow();
}

//! Scenario files, runs, comparisons and the random scenario generator.
//!
//! Scenarios are TOML documents with a `schema` version field; the layout is
//! documented in the repository README.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{
    brute_force_optimal, effective_rate, execute, EngineError, QueueConfig, Timeline, TrafficClass,
};
use crate::ledger::SlotLedger;
use crate::schedulers::{schedule, Cluster, Schedule, SchedulerKind, TransferModel};
use crate::topology::{example1_topology_spec, Link, LinkId, NodeId, SwitchVertex, Topology, TopologySpec};
use crate::workload::{estimate_idle, Job, NodeState, ProgressSample, Task, TaskId, WorkloadError};

pub const SCHEMA_VERSION: u32 = 1;

/// Name accepted in place of a path for the built-in worked example.
pub const EXAMPLE1: &str = "example1";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("parse error in {source_name}: {message}")]
    Parse { source_name: String, message: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("io error on {0}: {1}")]
    Io(String, String),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl RunError {
    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Scenario(_) => 2,
            RunError::Engine(EngineError::BudgetExceeded { .. }) => 4,
            RunError::Engine(EngineError::InfeasibleSchedule(_) | EngineError::InconsistentSchedule(_)) => 3,
            RunError::Engine(_) => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub id: TaskId,
    /// Megabytes.
    pub split_size: f64,
    #[serde(default)]
    pub replicas: Vec<NodeId>,
    /// Same computation time on every node; overrides the workload default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compute_time: Option<f64>,
    /// Per-node computation times keyed by node id; overrides the uniform value.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub compute_times: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    /// Job-wide computation time for homogeneous nodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compute_time: Option<f64>,
    #[serde(default)]
    pub tasks: Vec<TaskSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeLoad {
    pub id: NodeId,
    /// Time the node becomes idle. When absent it is estimated from `running`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idle_at: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub now: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub running: Vec<ProgressSample>,
    /// Used when a running task reports zero progress.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_idle: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QosSpec {
    /// Class of input-split transfers; its queue rate caps transfer bandwidth.
    pub task_class: TrafficClass,
    #[serde(flatten)]
    pub config: QueueConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    pub id: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_slot_duration")]
    pub slot_duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_transfer_time: Option<f64>,
    pub topology: TopologySpec,
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub nodes: Vec<NodeLoad>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qos: Option<QosSpec>,
}

fn default_slot_duration() -> f64 {
    1.0
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation(msg.into())
}

impl Scenario {
    /// Four task nodes with initial loads 3/9/20/7 s, nine 64 MB tasks with two
    /// replicas each, 9 s computation, 5 s per-block transfers, 1 s slots.
    pub fn example1() -> Self {
        let replicas: [[u32; 2]; 9] = [[2, 3], [1, 4], [1, 2], [1, 3], [2, 4], [2, 3], [1, 3], [3, 4], [1, 3]];
        Scenario {
            schema: SCHEMA_VERSION,
            id: EXAMPLE1.to_string(),
            seed: 0,
            slot_duration: 1.0,
            fixed_transfer_time: Some(5.0),
            topology: example1_topology_spec(),
            workload: WorkloadSpec {
                compute_time: Some(9.0),
                tasks: replicas
                    .iter()
                    .enumerate()
                    .map(|(i, r)| TaskSpec {
                        id: TaskId(i as u32 + 1),
                        split_size: 64.0,
                        replicas: r.iter().map(|&n| NodeId(n)).collect(),
                        compute_time: None,
                        compute_times: BTreeMap::new(),
                    })
                    .collect(),
            },
            nodes: [3.0, 9.0, 20.0, 7.0]
                .iter()
                .enumerate()
                .map(|(i, &idle)| NodeLoad {
                    id: NodeId(i as u32 + 1),
                    idle_at: Some(idle),
                    now: None,
                    running: vec![],
                    fallback_idle: None,
                })
                .collect(),
            qos: None,
        }
    }

    pub fn from_toml(text: &str, source_name: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse {
            source_name: source_name.to_string(),
            message: e.to_string(),
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes to toml")
    }

    /// Check every cross-reference; `cluster` relies on this.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.cluster().map(|_| ())
    }

    /// Validated scheduler input.
    pub fn cluster(&self) -> Result<Cluster, ScenarioError> {
        if self.schema != SCHEMA_VERSION {
            return Err(invalid(format!(
                "unsupported schema {} (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        if !(self.slot_duration > 0.0) || !self.slot_duration.is_finite() {
            return Err(invalid(format!("slot_duration must be positive, got {}", self.slot_duration)));
        }
        if let Some(t) = self.fixed_transfer_time {
            if !(t > 0.0) || !t.is_finite() {
                return Err(invalid(format!("fixed_transfer_time must be positive, got {t}")));
            }
        }
        let topology = Topology::build(self.topology.clone()).map_err(|e| invalid(format!("topology: {e}")))?;

        let mut nodes = Vec::with_capacity(self.nodes.len());
        for load in &self.nodes {
            if !topology.is_compute(load.id) {
                return Err(invalid(format!("node {} is not a compute vertex", load.id.0)));
            }
            if nodes.iter().any(|n: &NodeState| n.node == load.id) {
                return Err(invalid(format!("node {} listed twice", load.id.0)));
            }
            let idle = node_idle(load)?;
            if !(idle >= 0.0) || !idle.is_finite() {
                return Err(invalid(format!("node {} idle time {idle} must be >= 0", load.id.0)));
            }
            nodes.push(NodeState::new(load.id, idle));
        }
        nodes.sort_by_key(|n| n.node);
        if nodes.is_empty() && !self.workload.tasks.is_empty() {
            return Err(invalid("workload has tasks but no available nodes"));
        }

        let mut seen = BTreeSet::new();
        let mut tasks = Vec::with_capacity(self.workload.tasks.len());
        for spec in &self.workload.tasks {
            if !seen.insert(spec.id) {
                return Err(invalid(format!("task {} listed twice", spec.id.0)));
            }
            if !(spec.split_size >= 0.0) || !spec.split_size.is_finite() {
                return Err(invalid(format!("task {} split_size must be >= 0", spec.id.0)));
            }
            let replicas: BTreeSet<NodeId> = spec.replicas.iter().copied().collect();
            if replicas.len() != spec.replicas.len() {
                return Err(invalid(format!("task {} lists a replica twice", spec.id.0)));
            }
            if let Some(bad) = replicas.iter().find(|r| !topology.is_compute(**r)) {
                return Err(invalid(format!(
                    "task {} replica references unknown node {}",
                    spec.id.0, bad.0
                )));
            }
            if replicas.is_empty() && spec.split_size > 0.0 {
                return Err(invalid(format!("task {} has input but no replicas", spec.id.0)));
            }
            let uniform = spec.compute_time.or(self.workload.compute_time);
            let mut compute_time = BTreeMap::new();
            for state in &nodes {
                let tp = spec
                    .compute_times
                    .get(&state.node.0.to_string())
                    .copied()
                    .or(uniform)
                    .ok_or_else(|| {
                        invalid(format!("task {} has no compute time for node {}", spec.id.0, state.node.0))
                    })?;
                if !(tp >= 0.0) || !tp.is_finite() {
                    return Err(invalid(format!("task {} compute time {tp} must be >= 0", spec.id.0)));
                }
                compute_time.insert(state.node, tp);
            }
            for key in spec.compute_times.keys() {
                let known = key.parse::<u32>().is_ok_and(|n| nodes.iter().any(|s| s.node.0 == n));
                if !known {
                    return Err(invalid(format!("task {} compute time for unknown node {key}", spec.id.0)));
                }
            }
            tasks.push(Task {
                id: spec.id,
                split_size: spec.split_size,
                replicas,
                compute_time,
            });
        }

        let mut transfer = TransferModel {
            fixed_transfer_time: self.fixed_transfer_time,
            rate_cap: None,
        };
        if let Some(qos) = &self.qos {
            qos.config.validate().map_err(|e| invalid(e.to_string()))?;
            transfer.rate_cap = Some(effective_rate(&qos.config, qos.task_class).map_err(|e| invalid(e.to_string()))?);
        }

        Ok(Cluster {
            topology,
            job: Job { tasks },
            nodes,
            transfer,
        })
    }

    pub fn with_slot_duration(mut self, slot_duration: f64) -> Self {
        self.slot_duration = slot_duration;
        self
    }
}

fn node_idle(load: &NodeLoad) -> Result<f64, ScenarioError> {
    if let Some(idle) = load.idle_at {
        return Ok(idle);
    }
    let now = load.now.unwrap_or(0.0);
    match estimate_idle(now, &load.running) {
        Ok(idle) => Ok(idle),
        Err(WorkloadError::UndefinedRate(_)) => Ok(load.fallback_idle.unwrap_or(now)),
        Err(e) => Err(invalid(format!("node {}: {e}", load.id.0))),
    }
}

/// Read a scenario file, or the built-in example by name.
pub fn load_scenario(path: &str) -> Result<Scenario, ScenarioError> {
    if path == EXAMPLE1 {
        return Ok(Scenario::example1());
    }
    let text = fs::read_to_string(path).map_err(|e| ScenarioError::Io(path.to_string(), e.to_string()))?;
    Scenario::from_toml(&text, path)
}

pub fn save_scenario(scenario: &Scenario, path: &Path) -> Result<(), ScenarioError> {
    fs::write(path, scenario.to_toml()).map_err(|e| ScenarioError::Io(path.display().to_string(), e.to_string()))
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: TaskId,
    pub node: NodeId,
    pub source: Option<NodeId>,
    pub local: bool,
    pub transfer_start: Option<f64>,
    pub transfer_end: Option<f64>,
    pub compute_start: f64,
    pub compute_end: f64,
}

/// Result of one scheduler on one scenario. Times are rounded to milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub scheduler: SchedulerKind,
    pub seed: u64,
    pub makespan: f64,
    pub locality_ratio: f64,
    pub assignments: Vec<ReportRow>,
    /// Wall-clock time of the scheduling call; excluded from serialized reports.
    #[serde(skip)]
    pub runtime: Duration,
}

impl RunReport {
    fn new(scenario: &Scenario, kind: SchedulerKind, seed: u64, s: &Schedule, runtime: Duration) -> Self {
        RunReport {
            scenario: scenario.id.clone(),
            scheduler: kind,
            seed,
            makespan: round3(s.makespan),
            locality_ratio: round3(s.locality_ratio()),
            assignments: s
                .assignments
                .iter()
                .map(|a| ReportRow {
                    task: a.task,
                    node: a.node,
                    source: a.source,
                    local: a.is_local(),
                    transfer_start: a.transfer.map(|t| round3(t.start)),
                    transfer_end: a.transfer.map(|t| round3(t.end)),
                    compute_start: round3(a.compute.start),
                    compute_end: round3(a.compute.end),
                })
                .collect(),
            runtime,
        }
    }

    pub fn assignments_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "task",
            "node",
            "source",
            "local",
            "transfer_start",
            "transfer_end",
            "compute_start",
            "compute_end",
        ])?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.assignments {
            w.write_record([
                r.task.0.to_string(),
                r.node.0.to_string(),
                r.source.map(|s| s.0.to_string()).unwrap_or_default(),
                r.local.to_string(),
                opt(r.transfer_start),
                opt(r.transfer_end),
                r.compute_start.to_string(),
                r.compute_end.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Everything produced by one run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub schedule: Schedule,
    pub timeline: Timeline,
}

/// Schedule on a fresh ledger, then replay on another fresh ledger to validate.
pub fn run_detailed(scenario: &Scenario, kind: SchedulerKind, seed: u64) -> Result<RunOutput, RunError> {
    let cluster = scenario.cluster()?;
    let fresh = || SlotLedger::new(scenario.slot_duration).map_err(|e| invalid(e.to_string()));
    let mut ledger = fresh()?;
    let started = Instant::now();
    let schedule = schedule(kind, &cluster, &mut ledger, seed);
    let runtime = started.elapsed();
    let timeline = execute(&schedule, &cluster, fresh()?)?;
    let report = RunReport::new(scenario, kind, seed, &schedule, runtime);
    Ok(RunOutput {
        report,
        schedule,
        timeline,
    })
}

pub fn run(scenario: &Scenario, kind: SchedulerKind, seed: u64) -> Result<RunReport, RunError> {
    run_detailed(scenario, kind, seed).map(|o| o.report)
}

/// Run several schedulers on identical fresh state; reports follow `kinds` order.
pub fn compare(scenario: &Scenario, kinds: &[SchedulerKind], seed: u64) -> Result<Vec<RunReport>, RunError> {
    kinds.iter().map(|&k| run(scenario, k, seed)).collect()
}

/// Side-by-side makespan table.
pub fn comparison_table(reports: &[RunReport]) -> String {
    let mut out = format!("{:<10} {:>10} {:>8}\n", "scheduler", "makespan", "LR");
    for r in reports {
        out.push_str(&format!(
            "{:<10} {:>10.3} {:>8.3}\n",
            r.scheduler.name(),
            r.makespan,
            r.locality_ratio
        ));
    }
    out
}

/// Exhaustive optimum for a small scenario, validated by replay.
pub fn run_oracle(scenario: &Scenario, budget: u64) -> Result<(Schedule, Timeline), RunError> {
    let cluster = scenario.cluster()?;
    let ledger = SlotLedger::new(scenario.slot_duration).map_err(|e| invalid(e.to_string()))?;
    let schedule = brute_force_optimal(&cluster, &ledger, budget)?;
    let timeline = execute(&schedule, &cluster, ledger)?;
    Ok((schedule, timeline))
}

/// Knobs for `generate_scenarios`. Ranges are inclusive integer seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub nodes: u32,
    pub tasks: u32,
    pub replicas: u32,
    pub count: u32,
    pub seed: u64,
    /// Megabytes per input split.
    pub split_size: f64,
    pub link_capacity: f64,
    pub compute_time: (u32, u32),
    pub initial_idle: (u32, u32),
    pub slot_duration: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            nodes: 6,
            tasks: 30,
            replicas: 2,
            count: 100,
            seed: 42,
            split_size: 64.0,
            link_capacity: 100.0,
            compute_time: (6, 12),
            initial_idle: (0, 40),
            slot_duration: 1.0,
        }
    }
}

/// Two-switch tree: nodes split between two switches joined through a router,
/// with master and controller hanging off the router. Four nodes reproduce the
/// worked-example layout exactly.
pub fn two_switch_topology(nodes: u32, capacity: f64) -> TopologySpec {
    let (s1, s2, router, master, controller) = (nodes + 1, nodes + 2, nodes + 3, nodes + 4, nodes + 5);
    let first_half = nodes.div_ceil(2);
    let link = |id, a, b| Link {
        id: LinkId(id),
        endpoints: (NodeId(a), NodeId(b)),
        capacity,
    };
    let mut links: Vec<Link> = (1..=nodes)
        .map(|i| link(i, i, if i <= first_half { s1 } else { s2 }))
        .collect();
    links.push(link(nodes + 1, master, router));
    links.push(link(nodes + 2, controller, router));
    links.push(link(nodes + 3, s1, router));
    links.push(link(nodes + 4, router, s2));
    let named = |id, name: &str| SwitchVertex {
        id: NodeId(id),
        name: Some(name.to_string()),
    };
    TopologySpec {
        compute: (1..=nodes).map(NodeId).collect(),
        switches: vec![
            named(s1, "ofs-1"),
            named(s2, "ofs-2"),
            named(router, "router"),
            named(master, "master"),
            named(controller, "controller"),
        ],
        links,
    }
}

/// Deterministic batch of random scenarios.
pub fn generate_scenarios(params: &GeneratorParams) -> Result<Vec<Scenario>, ScenarioError> {
    let p = params;
    if p.nodes == 0 || p.replicas == 0 {
        return Err(invalid("nodes and replicas must be positive"));
    }
    if p.replicas > p.nodes {
        return Err(invalid(format!(
            "replica count {} exceeds node count {}",
            p.replicas, p.nodes
        )));
    }
    if p.compute_time.0 > p.compute_time.1 || p.initial_idle.0 > p.initial_idle.1 {
        return Err(invalid("empty range"));
    }
    if !(p.split_size >= 0.0) || !(p.link_capacity > 0.0) || !(p.slot_duration > 0.0) {
        return Err(invalid("split_size, link_capacity and slot_duration must be positive"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let topology = two_switch_topology(p.nodes, p.link_capacity);
    let mut out = Vec::with_capacity(p.count as usize);
    for k in 0..p.count {
        let tasks = (1..=p.tasks)
            .map(|i| {
                let mut replicas: Vec<NodeId> = sample(&mut rng, p.nodes as usize, p.replicas as usize)
                    .into_iter()
                    .map(|j| NodeId(j as u32 + 1))
                    .collect();
                replicas.sort();
                TaskSpec {
                    id: TaskId(i),
                    split_size: p.split_size,
                    replicas,
                    compute_time: Some(rng.gen_range(p.compute_time.0..=p.compute_time.1) as f64),
                    compute_times: BTreeMap::new(),
                }
            })
            .collect();
        let nodes = (1..=p.nodes)
            .map(|i| NodeLoad {
                id: NodeId(i),
                idle_at: Some(rng.gen_range(p.initial_idle.0..=p.initial_idle.1) as f64),
                now: None,
                running: vec![],
                fallback_idle: None,
            })
            .collect();
        let scenario = Scenario {
            schema: SCHEMA_VERSION,
            id: format!("gen-{}-{k:03}", p.seed),
            seed: rng.gen_range(0..1_000_000),
            slot_duration: p.slot_duration,
            fixed_transfer_time: None,
            topology: topology.clone(),
            workload: WorkloadSpec {
                compute_time: None,
                tasks,
            },
            nodes,
            qos: None,
        };
        scenario.validate()?;
        out.push(scenario);
    }
    Ok(out)
}

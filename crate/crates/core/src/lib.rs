//! Deterministic simulator for bandwidth-aware task scheduling on an
//! SDN-managed cluster.
//!
//! The pieces, bottom up: [`topology`] routes between compute nodes,
//! [`ledger`] books per-slot link bandwidth, [`workload`] holds jobs and the
//! completion-time cost model, [`schedulers`] implements HDS, BAR, BASS and
//! Pre-BASS, [`engine`] replays and checks schedules, and [`scenario`] loads
//! scenario files and drives runs.

pub mod engine;
pub mod ledger;
pub mod scenario;
pub mod schedulers;
pub mod topology;
pub mod workload;

pub use engine::{brute_force_optimal, execute, EngineError, Timeline};
pub use ledger::{LedgerError, Reservation, SlotLedger};
pub use scenario::{compare, load_scenario, run, RunError, RunReport, Scenario, ScenarioError};
pub use schedulers::{schedule, Assignment, Cluster, Schedule, SchedulerKind};
pub use topology::{LinkId, NodeId, Topology, TopologyError};
pub use workload::{Job, Task, TaskId};

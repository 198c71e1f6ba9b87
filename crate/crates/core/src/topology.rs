//! Cluster graph: compute nodes, switch-like vertices and capacity-limited links.
//!
//! Only links constrain bandwidth. Switches, routers and control-plane hosts are
//! modelled as zero-delay vertices. Routing is single-path: the minimum-hop path,
//! with ties broken by the lexicographically smallest link-id sequence when read
//! from the lower-numbered endpoint. The reverse direction reuses the same path.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Vertex identifier. Compute nodes and switch vertices share one id space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ND{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkId(pub u32);

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Link{}", self.0)
    }
}

/// Ordered list of links from source to destination.
pub type Path = Vec<LinkId>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: LinkId,
    pub endpoints: (NodeId, NodeId),
    /// Megabits per second.
    pub capacity: f64,
}

/// A non-compute vertex (switch, router, controller, master).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchVertex {
    pub id: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

/// Unvalidated description of a topology, as found in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub compute: Vec<NodeId>,
    #[serde(default)]
    pub switches: Vec<SwitchVertex>,
    #[serde(default)]
    pub links: Vec<Link>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("graph is disconnected: {0} unreachable from {1}")]
    DisconnectedGraph(NodeId, NodeId),
    #[error("link {0} has non-positive capacity {1}")]
    NonPositiveCapacity(LinkId, f64),
    #[error("link {0} references unknown vertex {1}")]
    UnknownVertex(LinkId, NodeId),
    #[error("link {0} connects vertex {1} to itself")]
    SelfLoop(LinkId, NodeId),
    #[error("{0} is not a compute node")]
    NotComputeNode(NodeId),
    #[error("no path from {0} to {1}")]
    NoPath(NodeId, NodeId),
}

/// Validated, immutable cluster graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    spec: TopologySpec,
    compute: BTreeSet<NodeId>,
    links: BTreeMap<LinkId, Link>,
    /// vertex -> (link, neighbour), sorted by link id.
    adjacency: BTreeMap<NodeId, Vec<(LinkId, NodeId)>>,
    routes: BTreeMap<(NodeId, NodeId), Path>,
}

impl Topology {
    pub fn build(spec: TopologySpec) -> Result<Self, TopologyError> {
        let mut vertices = BTreeSet::new();
        for v in spec.compute.iter().chain(spec.switches.iter().map(|s| &s.id)) {
            if !vertices.insert(*v) {
                return Err(TopologyError::DuplicateId(format!("vertex {}", v.0)));
            }
        }
        let compute: BTreeSet<NodeId> = spec.compute.iter().copied().collect();

        let mut links = BTreeMap::new();
        let mut adjacency: BTreeMap<NodeId, Vec<(LinkId, NodeId)>> =
            vertices.iter().map(|v| (*v, Vec::new())).collect();
        for link in &spec.links {
            if !(link.capacity > 0.0) || !link.capacity.is_finite() {
                return Err(TopologyError::NonPositiveCapacity(link.id, link.capacity));
            }
            let (a, b) = link.endpoints;
            for v in [a, b] {
                if !vertices.contains(&v) {
                    return Err(TopologyError::UnknownVertex(link.id, v));
                }
            }
            if a == b {
                return Err(TopologyError::SelfLoop(link.id, a));
            }
            if links.insert(link.id, link.clone()).is_some() {
                return Err(TopologyError::DuplicateId(format!("link {}", link.id.0)));
            }
            adjacency.get_mut(&a).unwrap().push((link.id, b));
            adjacency.get_mut(&b).unwrap().push((link.id, a));
        }
        for edges in adjacency.values_mut() {
            edges.sort();
        }

        let mut topo = Topology {
            spec,
            compute,
            links,
            adjacency,
            routes: BTreeMap::new(),
        };

        // Connectivity over compute vertices, then precompute every route.
        if let Some(&first) = topo.compute.iter().next() {
            let dist = topo.hop_distances(first);
            if let Some(&missing) = topo.compute.iter().find(|v| !dist.contains_key(v)) {
                return Err(TopologyError::DisconnectedGraph(missing, first));
            }
        }
        let nodes: Vec<NodeId> = topo.compute.iter().copied().collect();
        for (i, &a) in nodes.iter().enumerate() {
            for &b in &nodes[i + 1..] {
                let path = topo.shortest_path(a, b)?;
                let mut rev = path.clone();
                rev.reverse();
                topo.routes.insert((a, b), path);
                topo.routes.insert((b, a), rev);
            }
        }
        Ok(topo)
    }

    pub fn spec(&self) -> &TopologySpec {
        &self.spec
    }

    pub fn compute_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.compute.iter().copied()
    }

    pub fn is_compute(&self, node: NodeId) -> bool {
        self.compute.contains(&node)
    }

    pub fn link(&self, id: LinkId) -> Option<&Link> {
        self.links.get(&id)
    }

    pub fn links(&self) -> impl Iterator<Item = &Link> {
        self.links.values()
    }

    /// Deterministic route between two compute nodes.
    pub fn route(&self, src: NodeId, dst: NodeId) -> Result<Path, TopologyError> {
        for v in [src, dst] {
            if !self.is_compute(v) {
                return Err(TopologyError::NotComputeNode(v));
            }
        }
        if src == dst {
            return Ok(Vec::new());
        }
        self.routes
            .get(&(src, dst))
            .cloned()
            .ok_or(TopologyError::NoPath(src, dst))
    }

    /// Bottleneck capacity of a path in Mbps; infinite for the empty path.
    pub fn path_capacity(&self, path: &[LinkId]) -> f64 {
        path.iter()
            .filter_map(|l| self.links.get(l))
            .map(|l| l.capacity)
            .fold(f64::INFINITY, f64::min)
    }

    fn hop_distances(&self, from: NodeId) -> BTreeMap<NodeId, usize> {
        let mut dist = BTreeMap::new();
        dist.insert(from, 0usize);
        let mut queue = VecDeque::from([from]);
        while let Some(v) = queue.pop_front() {
            let d = dist[&v];
            for &(_, w) in &self.adjacency[&v] {
                if !dist.contains_key(&w) {
                    dist.insert(w, d + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// Minimum-hop path, greedy on the smallest link id that stays on a shortest path.
    fn shortest_path(&self, src: NodeId, dst: NodeId) -> Result<Path, TopologyError> {
        let to_dst = self.hop_distances(dst);
        let mut remaining = *to_dst.get(&src).ok_or(TopologyError::NoPath(src, dst))?;
        let mut at = src;
        let mut path = Vec::with_capacity(remaining);
        while at != dst {
            let &(link, next) = self.adjacency[&at]
                .iter()
                .find(|(_, w)| to_dst.get(w) == Some(&(remaining - 1)))
                .expect("bfs layer has a predecessor");
            path.push(link);
            at = next;
            remaining -= 1;
        }
        Ok(path)
    }
}

/// The four-node, two-switch cluster used by the worked examples.
///
/// Task nodes 1-4; switches 5 and 6; router 7; master 8; controller 9.
/// Links: 1,2 attach nodes 1,2 to switch 5; 3,4 attach nodes 3,4 to switch 6;
/// 5,6 attach master and controller to the router; 7,8 join the switches to the router.
pub fn example1_topology_spec() -> TopologySpec {
    let n = NodeId;
    let link = |id, a, b| Link {
        id: LinkId(id),
        endpoints: (NodeId(a), NodeId(b)),
        capacity: 100.0,
    };
    let named = |id, name: &str| SwitchVertex {
        id: NodeId(id),
        name: Some(name.to_string()),
    };
    TopologySpec {
        compute: vec![n(1), n(2), n(3), n(4)],
        switches: vec![
            named(5, "ofs-1"),
            named(6, "ofs-2"),
            named(7, "router"),
            named(8, "master"),
            named(9, "controller"),
        ],
        links: vec![
            link(1, 1, 5),
            link(2, 2, 5),
            link(3, 3, 6),
            link(4, 4, 6),
            link(5, 8, 7),
            link(6, 9, 7),
            link(7, 5, 7),
            link(8, 7, 6),
        ],
    }
}

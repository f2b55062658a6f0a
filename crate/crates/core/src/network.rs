// SPDX-License-Identifier: Apache-2.0

//! Road network, all-pairs shortest distances and admissible station sets.
//!
//! Node ids are external labels; everything hot-path uses the dense index
//! given by the order of [`RoadNetwork::nodes`].

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use thiserror::Error;

use crate::demand::PathDemand;
use crate::par;

pub type NodeId = u32;

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub x_m: f64,
    pub y_m: f64,
    pub is_candidate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub u: NodeId,
    pub v: NodeId,
    pub length_m: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("network has no nodes")]
    Empty,
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("node {0} has non-finite coordinates")]
    BadCoordinates(NodeId),
    #[error("edge ({u}, {v}) references unknown node {missing}")]
    UnknownEndpoint {
        u: NodeId,
        v: NodeId,
        missing: NodeId,
    },
    #[error("edge ({u}, {v}) has length {length_m}; lengths must be finite and > 0")]
    BadLength { u: NodeId, v: NodeId, length_m: f64 },
    #[error("edge ({0}, {0}) is a self loop")]
    SelfLoop(NodeId),
    #[error("no candidate station nodes")]
    NoCandidates,
    #[error("network is disconnected; component unreachable from node {anchor}: {component:?}")]
    Disconnected {
        anchor: NodeId,
        component: Vec<NodeId>,
    },
}

/// Undirected, connected road graph with candidate-station flags.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    index: HashMap<NodeId, usize>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl RoadNetwork {
    /// Validates and builds the network. Parallel edges keep the shortest
    /// length for routing; all edges are retained for export.
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self, NetworkError> {
        if nodes.is_empty() {
            return Err(NetworkError::Empty);
        }
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if !(n.x_m.is_finite() && n.y_m.is_finite()) {
                return Err(NetworkError::BadCoordinates(n.id));
            }
            if index.insert(n.id, i).is_some() {
                return Err(NetworkError::DuplicateNode(n.id));
            }
        }
        if !nodes.iter().any(|n| n.is_candidate) {
            return Err(NetworkError::NoCandidates);
        }
        let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nodes.len()];
        for e in &edges {
            let a = *index.get(&e.u).ok_or(NetworkError::UnknownEndpoint {
                u: e.u,
                v: e.v,
                missing: e.u,
            })?;
            let b = *index.get(&e.v).ok_or(NetworkError::UnknownEndpoint {
                u: e.u,
                v: e.v,
                missing: e.v,
            })?;
            if a == b {
                return Err(NetworkError::SelfLoop(e.u));
            }
            if !(e.length_m.is_finite() && e.length_m > 0.0) {
                return Err(NetworkError::BadLength {
                    u: e.u,
                    v: e.v,
                    length_m: e.length_m,
                });
            }
            add_arc(&mut adjacency[a], b, e.length_m);
            add_arc(&mut adjacency[b], a, e.length_m);
        }
        for adj in &mut adjacency {
            adj.sort_by_key(|&(j, _)| nodes[j].id);
        }
        let net = RoadNetwork {
            nodes,
            edges,
            index,
            adjacency,
        };
        net.check_connected()?;
        Ok(net)
    }

    fn check_connected(&self) -> Result<(), NetworkError> {
        let comps = self.components();
        if comps.len() <= 1 {
            return Ok(());
        }
        // Report the smallest component that does not contain the first node.
        let offending = comps[1..].iter().min_by_key(|c| (c.len(), c[0])).unwrap();
        let mut component: Vec<NodeId> = offending.iter().map(|&i| self.nodes[i].id).collect();
        component.sort_unstable();
        Err(NetworkError::Disconnected {
            anchor: self.nodes[0].id,
            component,
        })
    }

    /// Connected components as dense-index lists, the first containing index 0.
    fn components(&self) -> Vec<Vec<usize>> {
        let n = self.nodes.len();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut stack = vec![start];
            let mut comp = Vec::new();
            while let Some(u) = stack.pop() {
                comp.push(u);
                for &(v, _) in &self.adjacency[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            out.push(comp);
        }
        out
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.index_of(id).map(|i| &self.nodes[i])
    }

    pub fn is_candidate(&self, id: NodeId) -> bool {
        self.node(id).is_some_and(|n| n.is_candidate)
    }

    /// Candidate node ids in ascending order.
    pub fn candidates(&self) -> Vec<NodeId> {
        let mut c: Vec<NodeId> = self
            .nodes
            .iter()
            .filter(|n| n.is_candidate)
            .map(|n| n.id)
            .collect();
        c.sort_unstable();
        c
    }

    /// Neighbours of dense index `i` as `(dense index, length)`, sorted by node id.
    pub fn neighbours(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    /// Bounding box `(min_x, min_y, max_x, max_y)` of node coordinates.
    pub fn bounding_box(&self) -> (f64, f64, f64, f64) {
        self.nodes.iter().fold(
            (
                f64::INFINITY,
                f64::INFINITY,
                f64::NEG_INFINITY,
                f64::NEG_INFINITY,
            ),
            |(a, b, c, d), n| (a.min(n.x_m), b.min(n.y_m), c.max(n.x_m), d.max(n.y_m)),
        )
    }
}

fn add_arc(adj: &mut Vec<(usize, f64)>, to: usize, len: f64) {
    if let Some(slot) = adj.iter_mut().find(|(j, _)| *j == to) {
        slot.1 = slot.1.min(len);
    } else {
        adj.push((to, len));
    }
}

/// Dense all-pairs shortest-path distances in meters.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n: usize,
    dist: Vec<f64>,
    index: HashMap<NodeId, usize>,
}

impl DistanceMatrix {
    /// One Dijkstra per source; sources run through [`par::map_range`].
    pub fn build(net: &RoadNetwork) -> Self {
        Self::build_with(par::Execution::default(), net)
    }

    pub fn build_with(exec: par::Execution, net: &RoadNetwork) -> Self {
        let n = net.len();
        let rows = par::map_range(exec, n, |s| dijkstra(net, s));
        let mut dist = Vec::with_capacity(n * n);
        for row in rows {
            dist.extend(row);
        }
        // Runs from either end can round differently; keep the matrix exactly symmetric.
        for i in 0..n {
            for j in (i + 1)..n {
                let m = dist[i * n + j].min(dist[j * n + i]);
                dist[i * n + j] = m;
                dist[j * n + i] = m;
            }
        }
        DistanceMatrix {
            n,
            dist,
            index: net.index.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Distance between dense indices.
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.n + j]
    }

    /// Distance between node ids. Panics on ids not in the network.
    pub fn get(&self, a: NodeId, b: NodeId) -> f64 {
        self.at(self.index[&a], self.index[&b])
    }

    /// Extra distance of visiting `j` on the way from `o` to `d` (dense indices).
    #[inline]
    pub fn detour(&self, o: usize, j: usize, d: usize) -> f64 {
        (self.at(o, j) + self.at(j, d) - self.at(o, d)).max(0.0)
    }

    /// Lexicographically smallest shortest path from `a` to `b` as node ids.
    pub fn shortest_path(&self, net: &RoadNetwork, a: NodeId, b: NodeId) -> Option<Vec<NodeId>> {
        let (mut u, t) = (net.index_of(a)?, net.index_of(b)?);
        let mut path = vec![net.nodes[u].id];
        while u != t {
            let remaining = self.at(u, t);
            let tol = 1e-9 * remaining.max(1.0);
            let next = net
                .neighbours(u)
                .iter()
                .find(|&&(w, len)| (len + self.at(w, t) - remaining).abs() <= tol)?
                .0;
            path.push(net.nodes[next].id);
            u = next;
        }
        Some(path)
    }
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem {
    dist: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra(net: &RoadNetwork, source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; net.len()];
    dist[source] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(HeapItem {
        dist: 0.0,
        node: source,
    });
    while let Some(HeapItem { dist: d, node: u }) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, len) in net.neighbours(u) {
            let nd = d + len;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(HeapItem { dist: nd, node: v });
            }
        }
    }
    dist
}

/// One admissible station for a demand.
#[derive(Debug, Clone, PartialEq)]
pub struct Admissible {
    pub node: NodeId,
    /// Dense index of the station node.
    pub index: usize,
    pub detour_m: f64,
    pub from_origin_m: f64,
    pub to_dest_m: f64,
}

/// Admissible stations for one demand.
///
/// `stations` is the detour-feasible set sorted by distance from the origin,
/// so the battery-feasible set for each level is a prefix of it.
#[derive(Debug, Clone)]
pub struct DemandSets {
    pub origin: NodeId,
    pub dest: NodeId,
    pub stations: Vec<Admissible>,
    /// `(level_kwh, prefix length)` in ascending level order.
    pub level_prefix: Vec<(f64, usize)>,
}

impl DemandSets {
    pub fn an(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.stations.iter().map(|a| a.node)
    }

    /// Battery-and-detour feasible stations for the `k`-th battery level.
    pub fn for_level(&self, k: usize) -> &[Admissible] {
        &self.stations[..self.level_prefix[k].1]
    }
}

/// Detour bound and battery-range parameters for admissible set computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReachLimits {
    pub d_max_m: f64,
    pub consumption_kwh_per_m: f64,
}

/// `AN` and `AN^b` for every demand, indexed like the demand list.
#[derive(Debug, Clone)]
pub struct AdmissibleSets {
    per_demand: Vec<DemandSets>,
}

fn leq(a: f64, b: f64) -> bool {
    a <= b + 1e-9 * b.abs().max(1.0)
}

impl AdmissibleSets {
    pub fn compute(
        net: &RoadNetwork,
        dm: &DistanceMatrix,
        demands: &[PathDemand],
        limits: ReachLimits,
    ) -> Self {
        let candidates: Vec<usize> = (0..net.len())
            .filter(|&i| net.nodes[i].is_candidate)
            .collect();
        let per_demand = demands
            .iter()
            .map(|d| {
                let o = net.index_of(d.origin).expect("demand origin in network");
                let e = net.index_of(d.dest).expect("demand destination in network");
                let direct = dm.at(o, e);
                let mut stations: Vec<Admissible> = candidates
                    .iter()
                    .filter(|&&j| leq(dm.at(o, j) + dm.at(j, e), direct + limits.d_max_m))
                    .map(|&j| Admissible {
                        node: net.nodes[j].id,
                        index: j,
                        detour_m: dm.detour(o, j, e),
                        from_origin_m: dm.at(o, j),
                        to_dest_m: dm.at(j, e),
                    })
                    .collect();
                stations.sort_by(|a, b| {
                    a.from_origin_m
                        .total_cmp(&b.from_origin_m)
                        .then(a.node.cmp(&b.node))
                });
                let level_prefix = d
                    .battery_pmf()
                    .iter()
                    .map(|&(level, _)| {
                        let range = if limits.consumption_kwh_per_m > 0.0 {
                            level / limits.consumption_kwh_per_m
                        } else {
                            f64::INFINITY
                        };
                        let k = stations.partition_point(|a| leq(a.from_origin_m, range));
                        (level, k)
                    })
                    .collect();
                DemandSets {
                    origin: d.origin,
                    dest: d.dest,
                    stations,
                    level_prefix,
                }
            })
            .collect();
        AdmissibleSets { per_demand }
    }

    pub fn demand(&self, k: usize) -> &DemandSets {
        &self.per_demand[k]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, DemandSets> {
        self.per_demand.iter()
    }

    pub fn len(&self) -> usize {
        self.per_demand.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_demand.is_empty()
    }

    fn find(&self, origin: NodeId, dest: NodeId) -> Option<&DemandSets> {
        self.per_demand
            .iter()
            .find(|s| s.origin == origin && s.dest == dest)
    }

    /// `AN_(origin,dest)` in ascending node-id order.
    pub fn an(&self, origin: NodeId, dest: NodeId) -> Option<Vec<NodeId>> {
        self.find(origin, dest).map(|s| sorted(s.an()))
    }

    /// `AN^b_(origin,dest)` in ascending node-id order; `None` if the demand or
    /// the level is unknown.
    pub fn an_b(&self, origin: NodeId, dest: NodeId, level_kwh: f64) -> Option<Vec<NodeId>> {
        let s = self.find(origin, dest)?;
        let k = s.level_prefix.iter().position(|&(l, _)| l == level_kwh)?;
        Some(sorted(s.for_level(k).iter().map(|a| a.node)))
    }

    /// `AI_j`: demands (as OD pairs) whose detour-admissible set contains `j`.
    pub fn ai(&self, j: NodeId) -> Vec<(NodeId, NodeId)> {
        self.per_demand
            .iter()
            .filter(|s| s.stations.iter().any(|a| a.node == j))
            .map(|s| (s.origin, s.dest))
            .collect()
    }
}

fn sorted(it: impl Iterator<Item = NodeId>) -> Vec<NodeId> {
    let mut v: Vec<NodeId> = it.collect();
    v.sort_unstable();
    v
}

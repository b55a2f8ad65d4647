//! Directed road graph with per-edge attributes and shortest/fastest search.
//!
//! Only the two candidate routes the recommender compares are ever
//! computed: minimum total length and minimum expected travel time. Both
//! use the same label-setting search with a deterministic tie-break on the
//! lexicographically smallest edge-id sequence.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fs;
use std::path::Path as FsPath;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::traffic::{TrafficConfig, TrafficStore};
use crate::vehicle::PathFeatures;

pub type NodeId = u64;
pub type EdgeId = u64;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("cannot read network file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed network file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("duplicate edge id {0}")]
    DuplicateEdge(EdgeId),
    #[error("edge {edge} references missing node {node}")]
    DanglingNode { edge: EdgeId, node: NodeId },
    #[error("edge {edge} has non-positive length {length_km} km")]
    NonPositiveLength { edge: EdgeId, length_km: f64 },
    #[error("edge {edge} has non-positive free-flow speed {ffs_kmh} km/h")]
    NonPositiveSpeed { edge: EdgeId, ffs_kmh: f64 },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("no path from {from} to {to}")]
    NoPath { from: NodeId, to: NodeId },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub lat: f64,
    pub lon: f64,
}

/// One directed edge with routing attributes. The neighbour-edge count of
/// [`PathFeatures`] is derived from graph degree at load time, not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub id: EdgeId,
    pub from: NodeId,
    pub to: NodeId,
    pub length_km: f64,
    pub free_flow_kmh: f64,
    pub theta_rad: f64,
    pub features: PathFeatures,
}

impl Edge {
    pub fn free_flow_time_s(&self) -> f64 {
        self.length_km / self.free_flow_kmh * 3600.0
    }
}

/// On-disk edge record; `ts`/`poi` are the stop and point-of-interest
/// counts and `theta` the slope in radians.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub id: EdgeId,
    pub from: NodeId,
    pub to: NodeId,
    pub length_km: f64,
    pub ffs_kmh: f64,
    #[serde(default)]
    pub ts: u32,
    #[serde(default)]
    pub poi: u32,
    #[serde(default)]
    pub theta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkFile {
    pub nodes: Vec<Node>,
    pub edges: Vec<EdgeRecord>,
}

#[derive(Debug, Clone)]
pub struct RoadNetwork {
    nodes: BTreeMap<NodeId, Node>,
    edges: BTreeMap<EdgeId, Edge>,
    /// Outgoing edge ids per node, ascending.
    out_edges: BTreeMap<NodeId, Vec<EdgeId>>,
}

impl RoadNetwork {
    pub fn from_parts(nodes: Vec<Node>, records: Vec<EdgeRecord>) -> Result<Self, NetworkError> {
        let mut node_map = BTreeMap::new();
        for node in nodes {
            if node_map.insert(node.id, node).is_some() {
                return Err(NetworkError::DuplicateNode(node.id));
            }
        }
        let mut edge_map: BTreeMap<EdgeId, Edge> = BTreeMap::new();
        for rec in &records {
            if edge_map.contains_key(&rec.id) {
                return Err(NetworkError::DuplicateEdge(rec.id));
            }
            for node in [rec.from, rec.to] {
                if !node_map.contains_key(&node) {
                    return Err(NetworkError::DanglingNode {
                        edge: rec.id,
                        node,
                    });
                }
            }
            if rec.length_km <= 0.0 {
                return Err(NetworkError::NonPositiveLength {
                    edge: rec.id,
                    length_km: rec.length_km,
                });
            }
            if rec.ffs_kmh <= 0.0 {
                return Err(NetworkError::NonPositiveSpeed {
                    edge: rec.id,
                    ffs_kmh: rec.ffs_kmh,
                });
            }
            edge_map.insert(
                rec.id,
                Edge {
                    id: rec.id,
                    from: rec.from,
                    to: rec.to,
                    length_km: rec.length_km,
                    free_flow_kmh: rec.ffs_kmh,
                    theta_rad: rec.theta,
                    features: PathFeatures::new(rec.ts, 0, rec.poi),
                },
            );
        }

        // Neighbour count: distinct other edges touching either endpoint.
        let mut incident: BTreeMap<NodeId, BTreeSet<EdgeId>> = BTreeMap::new();
        for edge in edge_map.values() {
            incident.entry(edge.from).or_default().insert(edge.id);
            incident.entry(edge.to).or_default().insert(edge.id);
        }
        let neighbor_counts: Vec<(EdgeId, u32)> = edge_map
            .values()
            .map(|edge| {
                let mut neighbors: BTreeSet<EdgeId> = BTreeSet::new();
                for node in [edge.from, edge.to] {
                    if let Some(ids) = incident.get(&node) {
                        neighbors.extend(ids);
                    }
                }
                neighbors.remove(&edge.id);
                (edge.id, neighbors.len() as u32)
            })
            .collect();
        for (id, count) in neighbor_counts {
            if let Some(edge) = edge_map.get_mut(&id) {
                edge.features.neighbor_edges = count;
            }
        }

        let mut out_edges: BTreeMap<NodeId, Vec<EdgeId>> = BTreeMap::new();
        for edge in edge_map.values() {
            out_edges.entry(edge.from).or_default().push(edge.id);
        }
        for ids in out_edges.values_mut() {
            ids.sort_unstable();
        }

        Ok(RoadNetwork {
            nodes: node_map,
            edges: edge_map,
            out_edges,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, NetworkError> {
        let file: NetworkFile = serde_json::from_str(text)?;
        Self::from_parts(file.nodes, file.edges)
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn edge(&self, id: EdgeId) -> Option<&Edge> {
        self.edges.get(&id)
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.values()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn out_edges(&self, node: NodeId) -> &[EdgeId] {
        self.out_edges.get(&node).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Loads and validates a `network.json` file.
pub fn load_network(path: &FsPath) -> Result<RoadNetwork, NetworkError> {
    let text = fs::read_to_string(path)?;
    RoadNetwork::from_json_str(&text)
}

/// An ordered edge walk between two nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub source: NodeId,
    pub destination: NodeId,
    pub edges: Vec<EdgeId>,
    pub total_length_km: f64,
}

impl Path {
    fn from_edges(
        net: &RoadNetwork,
        source: NodeId,
        destination: NodeId,
        edges: Vec<EdgeId>,
    ) -> Path {
        let total_length_km = edges
            .iter()
            .map(|id| net.edge(*id).expect("path edge in network").length_km)
            .sum::<f64>()
            .max(0.0);
        Path {
            source,
            destination,
            edges,
            total_length_km,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

struct HeapEntry {
    dist: f64,
    node: NodeId,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.dist == other.dist && self.node == other.node
    }
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Reversed so the max-heap pops the smallest distance first.
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Label-setting search minimizing `edge_cost` sums. Equal-cost paths
/// resolve to the lexicographically smallest edge-id sequence, which is
/// well-defined because edge costs are strictly positive.
fn dijkstra<F>(
    net: &RoadNetwork,
    source: NodeId,
    destination: NodeId,
    edge_cost: F,
) -> Option<Vec<EdgeId>>
where
    F: Fn(&Edge) -> f64,
{
    let mut labels: BTreeMap<NodeId, (f64, Vec<EdgeId>)> = BTreeMap::new();
    let mut settled: BTreeSet<NodeId> = BTreeSet::new();
    let mut heap = BinaryHeap::new();
    labels.insert(source, (0.0, Vec::new()));
    heap.push(HeapEntry {
        dist: 0.0,
        node: source,
    });

    while let Some(HeapEntry { node, .. }) = heap.pop() {
        if !settled.insert(node) {
            continue;
        }
        if node == destination {
            break;
        }
        let (dist, seq) = labels.get(&node).cloned().expect("settled node has label");
        for &edge_id in net.out_edges(node) {
            let edge = net.edge(edge_id).expect("adjacency edge in network");
            if settled.contains(&edge.to) {
                continue;
            }
            let alt = dist + edge_cost(edge);
            let improves = match labels.get(&edge.to) {
                None => true,
                Some((best, best_seq)) => {
                    alt < *best
                        || (alt == *best && {
                            let mut cand = seq.clone();
                            cand.push(edge_id);
                            cand < *best_seq
                        })
                }
            };
            if improves {
                let mut cand = seq.clone();
                cand.push(edge_id);
                labels.insert(edge.to, (alt, cand));
                heap.push(HeapEntry {
                    dist: alt,
                    node: edge.to,
                });
            }
        }
    }

    labels.remove(&destination).map(|(_, seq)| seq)
}

fn check_endpoints(net: &RoadNetwork, s: NodeId, d: NodeId) -> Result<(), NetworkError> {
    for node in [s, d] {
        if net.node(node).is_none() {
            return Err(NetworkError::UnknownNode(node));
        }
    }
    Ok(())
}

/// Minimum total length route.
pub fn shortest_path(net: &RoadNetwork, s: NodeId, d: NodeId) -> Result<Path, NetworkError> {
    check_endpoints(net, s, d)?;
    if s == d {
        return Ok(Path::from_edges(net, s, d, Vec::new()));
    }
    dijkstra(net, s, d, |edge| edge.length_km)
        .map(|edges| Path::from_edges(net, s, d, edges))
        .ok_or(NetworkError::NoPath { from: s, to: d })
}

/// Expected travel time of one edge at request time: the duration of the
/// representative crowdsensed trajectory when one exists, otherwise the
/// free-flow time.
pub fn edge_travel_time_s(
    edge: &Edge,
    t0: NaiveDateTime,
    store: &TrafficStore,
    traffic_cfg: &TrafficConfig,
) -> f64 {
    match store.representative_trajectory(edge, t0, traffic_cfg) {
        Some(traj) if traj.len() >= 2 && traj.duration_s() > 0.0 => traj.duration_s(),
        _ => edge.free_flow_time_s(),
    }
}

/// Minimum expected travel time route under current traffic.
pub fn fastest_path(
    net: &RoadNetwork,
    s: NodeId,
    d: NodeId,
    t0: NaiveDateTime,
    store: &TrafficStore,
    traffic_cfg: &TrafficConfig,
) -> Result<Path, NetworkError> {
    check_endpoints(net, s, d)?;
    if s == d {
        return Ok(Path::from_edges(net, s, d, Vec::new()));
    }
    dijkstra(net, s, d, |edge| {
        edge_travel_time_s(edge, t0, store, traffic_cfg)
    })
    .map(|edges| Path::from_edges(net, s, d, edges))
    .ok_or(NetworkError::NoPath { from: s, to: d })
}

/// Component-wise feature sums along a path.
pub fn path_features(net: &RoadNetwork, path: &Path) -> PathFeatures {
    path.edges
        .iter()
        .map(|id| net.edge(*id).expect("path edge in network").features)
        .fold(PathFeatures::default(), |acc, f| acc + f)
}

/// Total expected travel time along a path.
pub fn path_travel_time_s(
    net: &RoadNetwork,
    path: &Path,
    t0: NaiveDateTime,
    store: &TrafficStore,
    traffic_cfg: &TrafficConfig,
) -> f64 {
    path.edges
        .iter()
        .map(|id| {
            let edge = net.edge(*id).expect("path edge in network");
            edge_travel_time_s(edge, t0, store, traffic_cfg)
        })
        .sum::<f64>()
        .max(0.0)
}

//! Room-to-room shortest paths over the pose graph.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::clustering::RoomCluster;
use crate::error::{Error, Result};
use crate::graph::{GraphSnapshot, NodeId};
use crate::semantics::RoomLabel;

const MIN_WEIGHT: f64 = 1e-9;

/// Undirected weighted graph; each edge is stored once with `a < b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyGraph {
    n: usize,
    edges: BTreeMap<(NodeId, NodeId), f64>,
    adj: Vec<Vec<(NodeId, f64)>>,
}

impl AdjacencyGraph {
    pub fn new(n: usize) -> Self {
        Self { n, edges: BTreeMap::new(), adj: vec![Vec::new(); n] }
    }

    /// Adds or overwrites an edge. Self-loops are ignored.
    pub fn add_edge(&mut self, a: NodeId, b: NodeId, w: f64) {
        if a == b || a >= self.n || b >= self.n {
            return;
        }
        let w = w.max(MIN_WEIGHT);
        self.edges.insert((a.min(b), a.max(b)), w);
        self.adj[a].retain(|&(x, _)| x != b);
        self.adj[b].retain(|&(x, _)| x != a);
        self.adj[a].push((b, w));
        self.adj[b].push((a, w));
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId, f64)> + '_ {
        self.edges.iter().map(|(&(a, b), &w)| (a, b, w))
    }

    pub fn weight(&self, a: NodeId, b: NodeId) -> Option<f64> {
        self.edges.get(&(a.min(b), a.max(b))).copied()
    }

    pub fn neighbors(&self, v: NodeId) -> &[(NodeId, f64)] {
        &self.adj[v]
    }
}

/// Chain edges between consecutive keyframes plus a clique per cluster.
pub fn build_adjacency(snapshot: &GraphSnapshot, clusters: &[RoomCluster], unit_weights: bool) -> AdjacencyGraph {
    let kfs = snapshot.keyframes();
    let mut g = AdjacencyGraph::new(kfs.len());
    let weight = |a: NodeId, b: NodeId| {
        if unit_weights {
            1.0
        } else {
            (kfs[a].position() - kfs[b].position()).norm()
        }
    };
    for i in 1..kfs.len() {
        g.add_edge(i - 1, i, weight(i - 1, i));
    }
    for c in clusters {
        for (k, &a) in c.members.iter().enumerate() {
            for &b in &c.members[k + 1..] {
                g.add_edge(a, b, weight(a, b));
            }
        }
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry(f64, NodeId);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source Dijkstra returning distances and predecessors. Among
/// equal-cost routes the predecessor with the lower id is kept.
pub fn dijkstra(g: &AdjacencyGraph, source: NodeId) -> (Vec<f64>, Vec<Option<NodeId>>) {
    let mut dist = vec![f64::INFINITY; g.n];
    let mut prev = vec![None; g.n];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Entry(0.0, source));
    while let Some(Entry(d, v)) = heap.pop() {
        if d > dist[v] {
            continue;
        }
        for &(u, w) in g.neighbors(v) {
            let nd = d + w;
            if nd < dist[u] || (nd == dist[u] && prev[u].is_some_and(|p| v < p)) {
                let improved = nd < dist[u];
                dist[u] = nd;
                prev[u] = Some(v);
                if improved {
                    heap.push(Entry(nd, u));
                }
            }
        }
    }
    (dist, prev)
}

/// Member nearest the cluster mean, lower id on ties.
pub fn cluster_endpoint(cluster: &RoomCluster, snapshot: &GraphSnapshot) -> Result<NodeId> {
    let mut best: Option<(f64, NodeId)> = None;
    for &m in &cluster.members {
        let d = (snapshot.node(m)?.position() - cluster.mean_pos).norm_squared();
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, m));
        }
    }
    best.map(|(_, m)| m)
        .ok_or_else(|| Error::InvalidScene(format!("cluster {} has no members", cluster.id)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum PlanOutcome {
    Found { nodes: Vec<NodeId>, cost: f64 },
    Unreachable,
}

impl PlanOutcome {
    pub fn nodes(&self) -> Option<&[NodeId]> {
        match self {
            PlanOutcome::Found { nodes, .. } => Some(nodes),
            PlanOutcome::Unreachable => None,
        }
    }

    pub fn cost(&self) -> Option<f64> {
        match self {
            PlanOutcome::Found { cost, .. } => Some(*cost),
            PlanOutcome::Unreachable => None,
        }
    }
}

/// Cheapest path between the endpoints of any start-labelled cluster and
/// any goal-labelled cluster. Ties go to the lower `(start, goal)` pair.
pub fn plan(
    adj: &AdjacencyGraph,
    snapshot: &GraphSnapshot,
    clusters: &[RoomCluster],
    start: &RoomLabel,
    goal: &RoomLabel,
) -> Result<PlanOutcome> {
    let endpoints = |label: &RoomLabel| -> Result<Vec<NodeId>> {
        let mut v = clusters
            .iter()
            .filter(|c| &c.label == label)
            .map(|c| cluster_endpoint(c, snapshot))
            .collect::<Result<Vec<_>>>()?;
        if v.is_empty() {
            return Err(Error::UnknownLabel(label.to_string()));
        }
        v.sort_unstable();
        v.dedup();
        Ok(v)
    };
    let starts = endpoints(start)?;
    let goals = endpoints(goal)?;

    let mut best: Option<(f64, NodeId, NodeId, Vec<Option<NodeId>>)> = None;
    for &s in &starts {
        let (dist, prev) = dijkstra(adj, s);
        for &t in &goals {
            let d = dist[t];
            if d.is_finite() && best.as_ref().is_none_or(|b| d < b.0) {
                best = Some((d, s, t, prev.clone()));
            }
        }
    }
    let Some((cost, s, t, prev)) = best else {
        return Ok(PlanOutcome::Unreachable);
    };
    let mut nodes = vec![t];
    let mut v = t;
    while v != s {
        v = prev[v].expect("reachable node has a predecessor");
        nodes.push(v);
    }
    nodes.reverse();
    Ok(PlanOutcome::Found { nodes, cost })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::FloorId;
    use crate::graph::Keyframe;
    use crate::se3::SE3Pose;
    use nalgebra::Vector3;

    fn snapshot(xs: &[(f64, f64)]) -> GraphSnapshot {
        let kfs = xs
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| Keyframe {
                id: i,
                stamp: i as f64,
                pose: SE3Pose::from_translation(x, y, 0.0),
                embedding_row: 0,
                features: None,
                label: None,
                label_score: 0.0,
            })
            .collect();
        GraphSnapshot::from_parts(kfs, Vec::new(), 0).unwrap()
    }

    fn cluster(id: usize, label: &str, members: Vec<NodeId>, snap: &GraphSnapshot) -> RoomCluster {
        let mean = members.iter().map(|&m| snap.keyframes()[m].position()).sum::<Vector3<f64>>() / members.len() as f64;
        RoomCluster { id, label: RoomLabel::new(label).unwrap(), members, mean_pos: mean, floor: FloorId(0) }
    }

    fn label(s: &str) -> RoomLabel {
        RoomLabel::new(s).unwrap()
    }

    #[test]
    fn edge_counting() {
        let two = snapshot(&[(0.0, 0.0), (1.0, 0.0)]);
        assert_eq!(build_adjacency(&two, &[], false).edge_count(), 1);

        let three = snapshot(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        let c = vec![cluster(0, "office", vec![0, 1, 2], &three)];
        assert_eq!(build_adjacency(&three, &c, false).edge_count(), 3);

        let pts: Vec<_> = (0..10).map(|i| (i as f64, 0.0)).collect();
        let ten = snapshot(&pts);
        let c = vec![cluster(0, "a", vec![0, 1, 2, 3, 4], &ten), cluster(1, "b", vec![5, 6, 7, 8, 9], &ten)];
        // 9 chain + 20 clique - 8 chain edges inside clusters
        assert_eq!(build_adjacency(&ten, &c, false).edge_count(), 21);
    }

    #[test]
    fn same_cluster_gives_single_node() {
        let s = snapshot(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        let c = vec![cluster(0, "office", vec![0, 1, 2], &s)];
        let adj = build_adjacency(&s, &c, false);
        let p = plan(&adj, &s, &c, &label("office"), &label("office")).unwrap();
        assert_eq!(p, PlanOutcome::Found { nodes: vec![1], cost: 0.0 });
    }

    #[test]
    fn bathroom_to_garden_chain() {
        let s = snapshot(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]);
        let c = vec![
            cluster(0, "bathroom", vec![0], &s),
            cluster(1, "corridor", vec![1, 2], &s),
            cluster(2, "garden", vec![3], &s),
        ];
        let adj = build_adjacency(&s, &c, false);
        let p = plan(&adj, &s, &c, &label("bathroom"), &label("garden")).unwrap();
        assert_eq!(p.nodes().unwrap(), &[0, 1, 2, 3]);
        assert!((p.cost().unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_label_and_unreachable() {
        let s = snapshot(&[(0.0, 0.0), (1.0, 0.0)]);
        let c = vec![cluster(0, "a", vec![0], &s), cluster(1, "b", vec![1], &s)];
        let adj = build_adjacency(&s, &c, false);
        assert!(matches!(plan(&adj, &s, &c, &label("a"), &label("zzz")), Err(Error::UnknownLabel(_))));
        let empty = AdjacencyGraph::new(2);
        assert_eq!(plan(&empty, &s, &c, &label("a"), &label("b")).unwrap(), PlanOutcome::Unreachable);
    }

    #[test]
    fn unit_weights_count_hops() {
        let s = snapshot(&[(0.0, 0.0), (5.0, 0.0), (9.0, 0.0)]);
        let adj = build_adjacency(&s, &[], true);
        assert!(adj.edges().all(|(_, _, w)| w == 1.0));
    }
}

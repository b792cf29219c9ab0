//! Room instances and floors derived from a labelled pose graph.
//!
//! Clusters are recomputed from scratch whenever labels change; they are a
//! view over a snapshot, not incrementally maintained state.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeKind, GraphSnapshot, NodeId};
use crate::semantics::RoomLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FloorId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct RoomCluster {
    pub id: usize,
    pub label: RoomLabel,
    /// Sorted ascending.
    pub members: Vec<NodeId>,
    pub mean_pos: Vector3<f64>,
    pub floor: FloorId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub cluster_radius_m: f64,
    /// Labels that count as "space between rooms" when deciding merges.
    pub connector_labels: Vec<RoomLabel>,
    /// Chain segments whose mean heights differ by less than this share a
    /// floor.
    pub floor_z_tol_m: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            cluster_radius_m: 3.0,
            connector_labels: vec![
                RoomLabel::new("corridor").expect("valid"),
                RoomLabel::stairs(),
            ],
            floor_z_tol_m: 1.0,
        }
    }
}

/// Centroid of the members' positions, summed in member order.
pub fn mean_of(snapshot: &GraphSnapshot, members: &[NodeId]) -> Vector3<f64> {
    let sum: Vector3<f64> = members
        .iter()
        .map(|&m| snapshot.keyframes()[m].position())
        .sum();
    sum / members.len() as f64
}

/// Greedy assignment in node-id order: a node joins the nearest same-label
/// cluster whose running mean lies within `radius`, else opens a new one.
pub fn assign_clusters(snapshot: &GraphSnapshot, radius: f64) -> Result<Vec<RoomCluster>> {
    let mut clusters: Vec<RoomCluster> = Vec::new();
    for kf in snapshot.keyframes() {
        let label = kf.label.as_ref().ok_or(Error::Unlabeled(kf.id))?;
        let p = kf.position();
        let best = clusters
            .iter()
            .enumerate()
            .filter(|(_, c)| &c.label == label)
            .map(|(i, c)| (i, (c.mean_pos - p).norm()))
            .filter(|&(_, d)| d <= radius)
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        match best {
            Some((i, _)) => {
                let c = &mut clusters[i];
                c.members.push(kf.id);
                c.mean_pos += (p - c.mean_pos) / c.members.len() as f64;
            }
            None => clusters.push(RoomCluster {
                id: clusters.len(),
                label: label.clone(),
                members: vec![kf.id],
                mean_pos: p,
                floor: FloorId(0),
            }),
        }
    }
    Ok(clusters)
}

/// Merges same-label clusters that touch (an odometry edge between them, or
/// means within twice the radius) unless the trajectory between their
/// closest members crosses a connector space. Repeats to a fixed point and
/// renumbers clusters by their smallest member.
pub fn merge_clusters(clusters: Vec<RoomCluster>, snapshot: &GraphSnapshot, cfg: &ClusterConfig) -> Vec<RoomCluster> {
    let mut clusters = clusters;
    loop {
        let owner = owner_map(&clusters);
        let mut touching = vec![vec![false; clusters.len()]; clusters.len()];
        for e in snapshot.edges().iter().filter(|e| e.kind == EdgeKind::Odometry) {
            if let (Some(&a), Some(&b)) = (owner.get(&e.from), owner.get(&e.to)) {
                touching[a][b] = true;
                touching[b][a] = true;
            }
        }
        let mut pair = None;
        'search: for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let (a, b) = (&clusters[i], &clusters[j]);
                if a.label != b.label {
                    continue;
                }
                let near = (a.mean_pos - b.mean_pos).norm() <= 2.0 * cfg.cluster_radius_m;
                if (touching[i][j] || near) && !separated(a, b, snapshot, cfg) {
                    pair = Some((i, j));
                    break 'search;
                }
            }
        }
        let Some((i, j)) = pair else { break };
        let absorbed = clusters.remove(j);
        let keep = &mut clusters[i];
        keep.members.extend(absorbed.members);
        keep.members.sort_unstable();
        keep.mean_pos = mean_of(snapshot, &keep.members);
    }
    clusters.sort_by_key(|c| c.members[0]);
    for (i, c) in clusters.iter_mut().enumerate() {
        c.id = i;
    }
    clusters
}

fn owner_map(clusters: &[RoomCluster]) -> BTreeMap<NodeId, usize> {
    clusters
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.members.iter().map(move |&m| (m, i)))
        .collect()
}

/// True when the trajectory between the closest pair of members passes
/// through a connector-labelled node of a different class.
fn separated(a: &RoomCluster, b: &RoomCluster, snapshot: &GraphSnapshot, cfg: &ClusterConfig) -> bool {
    let kfs = snapshot.keyframes();
    let mut best: Option<(f64, NodeId, NodeId)> = None;
    for &m in &a.members {
        for &n in &b.members {
            let d = (kfs[m].position() - kfs[n].position()).norm_squared();
            if best.is_none_or(|(bd, _, _)| d < bd) {
                best = Some((d, m, n));
            }
        }
    }
    let Some((_, m, n)) = best else { return false };
    let (lo, hi) = (m.min(n), m.max(n));
    kfs[lo + 1..hi].iter().any(|k| {
        k.label
            .as_ref()
            .is_some_and(|l| l != &a.label && cfg.connector_labels.contains(l))
    })
}

/// Splits the trajectory at stair clusters and numbers the remaining
/// stretches by height. Stretches whose mean heights agree within
/// `floor_z_tol_m` are one floor. Stair clusters take the lower of the
/// floors they connect.
pub fn segment_floors(
    clusters: &[RoomCluster],
    snapshot: &GraphSnapshot,
    floor_z_tol_m: f64,
) -> BTreeMap<usize, FloorId> {
    let owner = owner_map(clusters);
    let is_stair = |node: NodeId| owner.get(&node).is_some_and(|&c| clusters[c].label.is_stairs());

    // segments: maximal runs of non-stair nodes along the chain
    let mut segment_of: BTreeMap<NodeId, usize> = BTreeMap::new();
    let mut seg_z: Vec<(f64, usize)> = Vec::new();
    // per stair cluster, the segments adjacent to its runs
    let mut stair_adjacent: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut pending_stairs: Vec<usize> = Vec::new();
    let mut last_segment: Option<usize> = None;
    let mut in_segment = false;

    for kf in snapshot.keyframes() {
        let Some(&c) = owner.get(&kf.id) else { continue };
        if is_stair(kf.id) {
            in_segment = false;
            if let Some(s) = last_segment {
                stair_adjacent.entry(c).or_default().push(s);
            }
            pending_stairs.push(c);
            continue;
        }
        if !in_segment {
            seg_z.push((0.0, 0));
            in_segment = true;
            let s = seg_z.len() - 1;
            for c in pending_stairs.drain(..) {
                stair_adjacent.entry(c).or_default().push(s);
            }
            last_segment = Some(s);
        }
        let s = seg_z.len() - 1;
        seg_z[s].0 += kf.position().z;
        seg_z[s].1 += 1;
        segment_of.insert(kf.id, s);
    }

    let means: Vec<f64> = seg_z.iter().map(|&(sum, n)| sum / n as f64).collect();
    let mut order: Vec<usize> = (0..means.len()).collect();
    order.sort_by(|&a, &b| means[a].total_cmp(&means[b]).then(a.cmp(&b)));
    let mut floor_of_segment = vec![FloorId(0); means.len()];
    let mut floor = 0usize;
    let mut group: Option<(f64, usize)> = None;
    for &s in &order {
        match group {
            Some((sum, n)) if (means[s] - sum / n as f64).abs() <= floor_z_tol_m => {
                group = Some((sum + means[s], n + 1));
            }
            Some(_) => {
                floor += 1;
                group = Some((means[s], 1));
            }
            None => group = Some((means[s], 1)),
        }
        floor_of_segment[s] = FloorId(floor);
    }

    let mut out = BTreeMap::new();
    for (ci, c) in clusters.iter().enumerate() {
        let floor = if c.label.is_stairs() {
            stair_adjacent
                .get(&ci)
                .and_then(|segs| segs.iter().map(|&s| floor_of_segment[s]).min())
                .unwrap_or(FloorId(0))
        } else {
            let mut votes: BTreeMap<FloorId, usize> = BTreeMap::new();
            for m in &c.members {
                if let Some(&s) = segment_of.get(m) {
                    *votes.entry(floor_of_segment[s]).or_default() += 1;
                }
            }
            votes
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .map_or(FloorId(0), |(f, _)| f)
        };
        out.insert(c.id, floor);
    }
    out
}

/// assign → merge → floors in one call.
pub fn build_clusters(snapshot: &GraphSnapshot, cfg: &ClusterConfig) -> Result<Vec<RoomCluster>> {
    let clusters = assign_clusters(snapshot, cfg.cluster_radius_m)?;
    let mut clusters = merge_clusters(clusters, snapshot, cfg);
    // the greedy pass keeps running means; settle them exactly
    for c in &mut clusters {
        c.mean_pos = mean_of(snapshot, &c.members);
    }
    let floors = segment_floors(&clusters, snapshot, cfg.floor_z_tol_m);
    for c in &mut clusters {
        c.floor = floors[&c.id];
    }
    Ok(clusters)
}

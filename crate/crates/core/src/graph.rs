//! Incremental pose graph with distance-gated keyframe admission.
//!
//! The graph has a single writer. Downstream stages work on
//! [`GraphSnapshot`]s, which are immutable and cheap to share between
//! threads, and hand their results back to the writer.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::SE3Pose;
use crate::semantics::RoomLabel;

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct LocalFeature {
    /// `(u, v)` in pixels.
    pub pixel: [f64; 2],
    /// Metric point in the camera optical frame (z forward).
    pub point_cam: Vector3<f64>,
    pub descriptor: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub id: NodeId,
    pub stamp: f64,
    pub pose: SE3Pose,
    pub embedding_row: usize,
    pub features: Option<Arc<[LocalFeature]>>,
    pub label: Option<RoomLabel>,
    pub label_score: f64,
}

impl Keyframe {
    pub fn position(&self) -> Vector3<f64> {
        self.pose.translation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Odometry,
    Loop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphEdge {
    pub from: NodeId,
    pub to: NodeId,
    pub kind: EdgeKind,
    /// Measured `T_from⁻¹ · T_to`.
    pub rel_pose: SE3Pose,
    pub info_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeighborMetric {
    /// Distance between current position estimates.
    #[default]
    Euclidean,
    /// Distance in keyframe index along the trajectory.
    Temporal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphConfig {
    pub keyframe_gate_m: f64,
    pub odom_info_weight: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            keyframe_gate_m: 0.5,
            odom_info_weight: 1.0,
        }
    }
}

/// Frozen view of the graph. Cloning shares the underlying storage.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSnapshot {
    keyframes: Arc<[Keyframe]>,
    edges: Arc<[GraphEdge]>,
    version: u64,
}

impl GraphSnapshot {
    /// Assembles a snapshot from parts, checking that every edge endpoint
    /// exists and node ids are their indices.
    pub fn from_parts(keyframes: Vec<Keyframe>, edges: Vec<GraphEdge>, version: u64) -> Result<Self> {
        for (i, kf) in keyframes.iter().enumerate() {
            if kf.id != i {
                return Err(Error::InvalidBundle(format!(
                    "keyframe at index {i} has id {}",
                    kf.id
                )));
            }
        }
        for e in &edges {
            for id in [e.from, e.to] {
                if id >= keyframes.len() {
                    return Err(Error::UnknownNode(id));
                }
            }
        }
        Ok(Self {
            keyframes: keyframes.into(),
            edges: edges.into(),
            version,
        })
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        &self.keyframes
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Result<&Keyframe> {
        self.keyframes.get(id).ok_or(Error::UnknownNode(id))
    }

    pub fn label(&self, id: NodeId) -> Result<&RoomLabel> {
        self.node(id)?.label.as_ref().ok_or(Error::Unlabeled(id))
    }

    pub fn poses(&self) -> BTreeMap<NodeId, SE3Pose> {
        self.keyframes.iter().map(|k| (k.id, k.pose)).collect()
    }

    /// The `count` nearest other nodes, nearest first, ties by lower id.
    pub fn neighbors(&self, node: NodeId, count: usize, metric: NeighborMetric) -> Result<Vec<NodeId>> {
        let query = self.node(node)?;
        let mut scored: Vec<(f64, NodeId)> = self
            .keyframes
            .iter()
            .filter(|k| k.id != node)
            .map(|k| {
                let d = match metric {
                    NeighborMetric::Euclidean => (k.position() - query.position()).norm_squared(),
                    NeighborMetric::Temporal => (k.id as f64 - node as f64).abs(),
                };
                (d, k.id)
            })
            .collect();
        let cmp = |a: &(f64, NodeId), b: &(f64, NodeId)| -> Ordering {
            a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
        };
        let count = count.min(scored.len());
        if count == 0 {
            return Ok(Vec::new());
        }
        if count < scored.len() {
            scored.select_nth_unstable_by(count - 1, cmp);
            scored.truncate(count);
        }
        scored.sort_unstable_by(cmp);
        Ok(scored.into_iter().map(|(_, id)| id).collect())
    }

    /// Copy with labels replaced for the listed nodes.
    pub fn with_labels(&self, labels: &BTreeMap<NodeId, RoomLabel>) -> Self {
        let keyframes: Vec<Keyframe> = self
            .keyframes
            .iter()
            .map(|k| {
                let mut k = k.clone();
                if let Some(l) = labels.get(&k.id) {
                    k.label = Some(l.clone());
                }
                k
            })
            .collect();
        Self {
            keyframes: keyframes.into(),
            edges: self.edges.clone(),
            version: self.version,
        }
    }

    /// Copy with poses replaced for the listed nodes.
    pub fn with_poses(&self, poses: &BTreeMap<NodeId, SE3Pose>) -> Self {
        let keyframes: Vec<Keyframe> = self
            .keyframes
            .iter()
            .map(|k| {
                let mut k = k.clone();
                if let Some(p) = poses.get(&k.id) {
                    k.pose = *p;
                }
                k
            })
            .collect();
        Self {
            keyframes: keyframes.into(),
            edges: self.edges.clone(),
            version: self.version,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PoseGraph {
    config: GraphConfig,
    embedding_rows: usize,
    keyframes: Vec<Keyframe>,
    edges: Vec<GraphEdge>,
    version: u64,
}

impl PoseGraph {
    /// `embedding_rows` is the size of the image embedding bank that
    /// keyframes index into.
    pub fn new(config: GraphConfig, embedding_rows: usize) -> Self {
        Self {
            config,
            embedding_rows,
            keyframes: Vec::new(),
            edges: Vec::new(),
            version: 0,
        }
    }

    pub fn config(&self) -> &GraphConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        &self.keyframes
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    /// Admits a keyframe if it is at least `keyframe_gate_m` from the last
    /// accepted one (the first is always accepted). Returns the new node id,
    /// or `None` when gated out.
    pub fn add_keyframe(
        &mut self,
        pose: SE3Pose,
        stamp: f64,
        embedding_row: usize,
        features: Option<Vec<LocalFeature>>,
    ) -> Result<Option<NodeId>> {
        if embedding_row >= self.embedding_rows {
            return Err(Error::InvalidEmbeddingRow {
                row: embedding_row,
                rows: self.embedding_rows,
            });
        }
        let prev = self.keyframes.last();
        if let Some(prev) = prev {
            if !(stamp > prev.stamp) {
                return Err(Error::NonMonotonicStamp {
                    stamp,
                    last: prev.stamp,
                });
            }
            if prev.pose.translation_distance(&pose) < self.config.keyframe_gate_m {
                return Ok(None);
            }
        }
        let id = self.keyframes.len();
        if let Some(prev) = prev {
            self.edges.push(GraphEdge {
                from: prev.id,
                to: id,
                kind: EdgeKind::Odometry,
                rel_pose: prev.pose.between(&pose),
                info_weight: self.config.odom_info_weight,
            });
        }
        self.keyframes.push(Keyframe {
            id,
            stamp,
            pose,
            embedding_row,
            features: features.map(Into::into),
            label: None,
            label_score: 0.0,
        });
        Ok(Some(id))
    }

    pub fn snapshot(&mut self) -> GraphSnapshot {
        self.version += 1;
        GraphSnapshot {
            keyframes: self.keyframes.clone().into(),
            edges: self.edges.clone().into(),
            version: self.version,
        }
    }

    pub fn set_label(&mut self, node: NodeId, label: RoomLabel, score: f64) -> Result<()> {
        let kf = self.keyframes.get_mut(node).ok_or(Error::UnknownNode(node))?;
        kf.label = Some(label);
        kf.label_score = score;
        Ok(())
    }

    /// Overwrites labels, leaving scores untouched.
    pub fn apply_labels(&mut self, labels: &BTreeMap<NodeId, RoomLabel>) -> Result<()> {
        if let Some((&bad, _)) = labels.iter().find(|(&id, _)| id >= self.keyframes.len()) {
            return Err(Error::UnknownNode(bad));
        }
        for (&id, label) in labels {
            self.keyframes[id].label = Some(label.clone());
        }
        Ok(())
    }

    pub fn add_edge(&mut self, edge: GraphEdge) -> Result<()> {
        for id in [edge.from, edge.to] {
            if id >= self.keyframes.len() {
                return Err(Error::UnknownNode(id));
            }
        }
        if edge.kind == EdgeKind::Odometry && edge.from >= edge.to {
            return Err(Error::InvalidBundle(format!(
                "odometry edge {} -> {} runs backwards",
                edge.from, edge.to
            )));
        }
        if !(edge.info_weight > 0.0) {
            return Err(Error::InvalidBundle(format!(
                "edge {} -> {} has non-positive weight {}",
                edge.from, edge.to, edge.info_weight
            )));
        }
        self.edges.push(edge);
        Ok(())
    }

    /// Merges optimizer output computed on the snapshot `base_version`.
    ///
    /// Listed nodes take their optimized pose. Nodes newer than the newest
    /// listed node are moved rigidly by that node's correction
    /// `T_new · T_old⁻¹`.
    pub fn apply_optimized_poses(
        &mut self,
        poses: &BTreeMap<NodeId, SE3Pose>,
        base_version: u64,
    ) -> Result<()> {
        if base_version > self.version {
            return Err(Error::StaleVersion {
                base: base_version,
                current: self.version,
            });
        }
        let Some((&newest, newest_pose)) = poses.iter().next_back() else {
            return Ok(());
        };
        if newest >= self.keyframes.len() {
            return Err(Error::UnknownNode(newest));
        }
        let correction = newest_pose.compose(&self.keyframes[newest].pose.inverse());
        for (&id, pose) in poses {
            self.keyframes[id].pose = *pose;
        }
        for kf in &mut self.keyframes[newest + 1..] {
            kf.pose = correction.compose(&kf.pose);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn graph() -> PoseGraph {
        PoseGraph::new(GraphConfig::default(), 100)
    }

    #[test]
    fn first_keyframe_always_accepted() {
        let mut g = graph();
        let id = g.add_keyframe(SE3Pose::from_translation(5.0, 1.0, 0.0), 0.0, 0, None).unwrap();
        assert_eq!(id, Some(0));
        assert!(g.edges().is_empty());
    }

    #[test]
    fn gate_rejects_short_moves() {
        let mut g = graph();
        g.add_keyframe(SE3Pose::identity(), 0.0, 0, None).unwrap();
        let id = g.add_keyframe(SE3Pose::from_translation(0.3, 0.0, 0.0), 1.0, 1, None).unwrap();
        assert_eq!(id, None);
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn gate_accepts_and_links_odometry() {
        let mut g = graph();
        g.add_keyframe(SE3Pose::identity(), 0.0, 0, None).unwrap();
        let id = g.add_keyframe(SE3Pose::from_translation(0.6, 0.0, 0.0), 1.0, 1, None).unwrap();
        assert_eq!(id, Some(1));
        let e = &g.edges()[0];
        assert_eq!((e.from, e.to, e.kind), (0, 1, EdgeKind::Odometry));
        assert!((e.rel_pose.translation - Vector3::new(0.6, 0.0, 0.0)).norm() < 1e-15);
        assert_eq!(e.info_weight, 1.0);
    }

    #[test]
    fn stamp_and_row_errors() {
        let mut g = graph();
        g.add_keyframe(SE3Pose::identity(), 1.0, 0, None).unwrap();
        assert!(matches!(
            g.add_keyframe(SE3Pose::from_translation(1.0, 0.0, 0.0), 1.0, 0, None),
            Err(Error::NonMonotonicStamp { .. })
        ));
        assert!(matches!(
            g.add_keyframe(SE3Pose::from_translation(1.0, 0.0, 0.0), 2.0, 100, None),
            Err(Error::InvalidEmbeddingRow { .. })
        ));
    }

    fn line(n: usize) -> PoseGraph {
        let mut g = graph();
        for i in 0..n {
            g.add_keyframe(SE3Pose::from_translation(i as f64, 0.0, 0.0), i as f64, 0, None)
                .unwrap();
        }
        g
    }

    #[test]
    fn neighbors_on_a_line() {
        let mut g = line(4);
        let s = g.snapshot();
        assert_eq!(s.neighbors(0, 2, NeighborMetric::Euclidean).unwrap(), vec![1, 2]);
        // 1 and 3 are equidistant from 2; lower id first
        assert_eq!(s.neighbors(2, 2, NeighborMetric::Euclidean).unwrap(), vec![1, 3]);
        assert!(matches!(
            s.neighbors(9, 2, NeighborMetric::Euclidean),
            Err(Error::UnknownNode(9))
        ));
    }

    #[test]
    fn neighbors_of_singleton_is_empty() {
        let mut g = line(1);
        let s = g.snapshot();
        assert!(s.neighbors(0, 3, NeighborMetric::Euclidean).unwrap().is_empty());
    }

    #[test]
    fn snapshot_versions() {
        let mut g = graph();
        let s0 = g.snapshot();
        assert_eq!((s0.len(), s0.version()), (0, 1));
        g.add_keyframe(SE3Pose::identity(), 0.0, 0, None).unwrap();
        let s1 = g.snapshot();
        let s2 = g.snapshot();
        assert_eq!((s1.len(), s1.edges().len()), (1, 0));
        assert_eq!(s1.keyframes(), s2.keyframes());
        assert_ne!(s1.version(), s2.version());
    }

    #[test]
    fn snapshot_unaffected_by_mutation() {
        let mut g = line(5);
        let s = g.snapshot();
        let before = format!("{s:?}");
        g.add_keyframe(SE3Pose::from_translation(10.0, 0.0, 0.0), 10.0, 0, None).unwrap();
        g.set_label(0, RoomLabel::new("office").unwrap(), 0.5).unwrap();
        let mut shifted = BTreeMap::new();
        shifted.insert(2, SE3Pose::from_translation(0.0, 9.0, 0.0));
        g.apply_optimized_poses(&shifted, s.version()).unwrap();
        assert_eq!(before, format!("{s:?}"));
    }

    #[test]
    fn identity_merge_is_noop() {
        let mut g = line(5);
        let s = g.snapshot();
        let before = g.keyframes().to_vec();
        g.apply_optimized_poses(&s.poses(), s.version()).unwrap();
        assert_eq!(before, g.keyframes());
    }

    #[test]
    fn merge_shift_moves_everything() {
        let mut g = line(4);
        let s = g.snapshot();
        let shift = SE3Pose::from_translation(1.0, 0.0, 0.0);
        let poses: BTreeMap<_, _> = s.poses().into_iter().map(|(k, p)| (k, shift * p)).collect();
        g.apply_optimized_poses(&poses, s.version()).unwrap();
        for (i, kf) in g.keyframes().iter().enumerate() {
            assert!((kf.pose.translation.x - (i as f64 + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn merge_corrects_trailing_nodes() {
        let mut g = line(3);
        let s = g.snapshot();
        g.add_keyframe(SE3Pose::from_xyz_yaw(3.0, 0.5, 0.0, 0.3), 3.0, 0, None).unwrap();
        // newest optimized node 2 moves by a yaw-and-shift correction
        let corr = SE3Pose::from_xyz_yaw(0.2, -0.1, 0.0, 0.1);
        let mut poses = s.poses();
        let p2 = corr * poses[&2];
        poses.insert(2, p2);
        g.apply_optimized_poses(&poses, s.version()).unwrap();
        // hand-composed: the trailing pose premultiplied by the same correction
        let expected = corr * SE3Pose::from_xyz_yaw(3.0, 0.5, 0.0, 0.3);
        assert!(g.keyframes()[3].pose.approx_eq(&expected, 1e-12));
        assert!(g.keyframes()[0].pose.approx_eq(&SE3Pose::identity(), 0.0));
    }

    #[test]
    fn merge_rejects_unknown_or_future() {
        let mut g = line(2);
        let s = g.snapshot();
        let mut poses = BTreeMap::new();
        poses.insert(7, SE3Pose::identity());
        assert!(matches!(
            g.apply_optimized_poses(&poses, s.version()),
            Err(Error::UnknownNode(7))
        ));
        assert!(matches!(
            g.apply_optimized_poses(&BTreeMap::new(), s.version() + 1),
            Err(Error::StaleVersion { .. })
        ));
    }

    proptest! {
        #[test]
        fn gating_spacing_and_chain(steps in prop::collection::vec((-0.4f64..0.4, -0.4f64..0.4, -0.1f64..0.1), 1..200)) {
            let mut g = graph();
            let mut p = Vector3::zeros();
            for (i, (dx, dy, dz)) in steps.iter().enumerate() {
                p += Vector3::new(*dx, *dy, *dz);
                g.add_keyframe(SE3Pose::new(p, Default::default()), i as f64, 0, None).unwrap();
            }
            let kfs = g.keyframes();
            for w in kfs.windows(2) {
                prop_assert!(w[0].pose.translation_distance(&w[1].pose) >= 0.5);
            }
            prop_assert_eq!(g.edges().len(), kfs.len() - 1);
            for (i, e) in g.edges().iter().enumerate() {
                prop_assert_eq!((e.from, e.to), (i, i + 1));
            }
        }

        #[test]
        fn neighbors_match_brute_force(
            pts in prop::collection::vec((0i32..20, 0i32..20, 0i32..3), 1..120),
            c in 1usize..10,
            q in 0usize..1000,
        ) {
            // integer coordinates force plenty of distance ties
            let kfs: Vec<Keyframe> = pts.iter().enumerate().map(|(i, &(x, y, z))| Keyframe {
                id: i,
                stamp: i as f64,
                pose: SE3Pose::from_translation(x as f64, y as f64, z as f64),
                embedding_row: 0,
                features: None,
                label: None,
                label_score: 0.0,
            }).collect();
            let snap = GraphSnapshot::from_parts(kfs, vec![], 1).unwrap();
            let q = q % snap.len();
            let got = snap.neighbors(q, c, NeighborMetric::Euclidean).unwrap();
            let mut all: Vec<(i64, usize)> = pts.iter().enumerate().filter(|(i, _)| *i != q).map(|(i, &(x, y, z))| {
                let (qx, qy, qz) = pts[q];
                let d = ((x - qx) as i64).pow(2) + ((y - qy) as i64).pow(2) + ((z - qz) as i64).pow(2);
                (d, i)
            }).collect();
            all.sort();
            let want: Vec<usize> = all.into_iter().take(c).map(|(_, i)| i).collect();
            prop_assert_eq!(got, want);
        }
    }
}

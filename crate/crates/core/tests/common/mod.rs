#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use toposem::eval::sim::{preset, simulate_scene, SquareLoop};
use toposem::graph::{EdgeKind, GraphEdge, GraphSnapshot, Keyframe, LocalFeature, NeighborMetric, NodeId};
use toposem::io::bundle::DatasetBundle;
use toposem::io::config::PipelineConfig;
use toposem::io::pipeline::{run_pipeline, PlanRequest, RunOutput};
use toposem::planner::AdjacencyGraph;
use toposem::pnp::{body_from_camera, CameraIntrinsics};
use toposem::semantics::RoomLabel;
use toposem::SE3Pose;

pub fn label(name: &str) -> RoomLabel {
    RoomLabel::new(name).unwrap()
}

pub fn keyframe(id: NodeId, pose: SE3Pose, label: Option<RoomLabel>) -> Keyframe {
    Keyframe { id, stamp: id as f64, pose, embedding_row: id, features: None, label, label_score: 0.0 }
}

pub fn odometry_chain(poses: &[SE3Pose]) -> Vec<GraphEdge> {
    (1..poses.len())
        .map(|i| GraphEdge {
            from: i - 1,
            to: i,
            kind: EdgeKind::Odometry,
            rel_pose: poses[i - 1].between(&poses[i]),
            info_weight: 1.0,
        })
        .collect()
}

/// Labelled nodes at the given positions, chained by exact odometry.
pub fn labelled_snapshot(points: &[[f64; 3]], labels: &[&str]) -> GraphSnapshot {
    let poses: Vec<SE3Pose> = points.iter().map(|p| SE3Pose::from_translation(p[0], p[1], p[2])).collect();
    let kfs = poses.iter().zip(labels).enumerate().map(|(i, (p, l))| keyframe(i, *p, Some(label(l)))).collect();
    GraphSnapshot::from_parts(kfs, odometry_chain(&poses), 1).unwrap()
}

pub fn camera() -> CameraIntrinsics {
    CameraIntrinsics { fx: 300.0, fy: 300.0, cx: 320.0, cy: 240.0, width: 640, height: 480 }
}

/// World landmarks in front of a body at the origin looking along +x.
pub fn landmarks(rng: &mut ChaCha8Rng, n: usize) -> Vec<(Vector3<f64>, Vec<u8>)> {
    (0..n)
        .map(|_| {
            let p = Vector3::new(rng.random_range(3.0..6.0), rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.5));
            (p, (0..32).map(|_| rng.random()).collect())
        })
        .collect()
}

/// Features of the landmarks visible from a body pose.
pub fn observe(pose: &SE3Pose, landmarks: &[(Vector3<f64>, Vec<u8>)]) -> Vec<LocalFeature> {
    let to_cam = pose.compose(&body_from_camera()).inverse();
    let cam = camera();
    landmarks
        .iter()
        .filter_map(|(p, d)| {
            let pc = to_cam.transform_point(p);
            let px = cam.project(&pc)?;
            cam.contains(&px).then(|| LocalFeature { pixel: px, point_cam: pc, descriptor: d.clone() })
        })
        .collect()
}

pub fn brute_neighbors(snap: &GraphSnapshot, node: NodeId, count: usize, metric: NeighborMetric) -> Vec<NodeId> {
    let q = snap.keyframes()[node].position();
    let mut all: Vec<(f64, NodeId)> = snap
        .keyframes()
        .iter()
        .filter(|k| k.id != node)
        .map(|k| {
            let d = match metric {
                NeighborMetric::Euclidean => (k.position() - q).norm_squared(),
                NeighborMetric::Temporal => (k.id as f64 - node as f64).abs(),
            };
            (d, k.id)
        })
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(count).map(|(_, id)| id).collect()
}

/// Vote oracle: every node counts the pre-pass labels of its neighbours and
/// takes the modal label only when it is unique.
pub fn oracle_refine(snap: &GraphSnapshot, count: usize, metric: NeighborMetric) -> BTreeMap<NodeId, RoomLabel> {
    let mut out = BTreeMap::new();
    for kf in snap.keyframes() {
        let mut votes: Vec<(RoomLabel, usize)> = Vec::new();
        for n in brute_neighbors(snap, kf.id, count, metric) {
            let l = snap.keyframes()[n].label.clone().unwrap();
            match votes.iter_mut().find(|(v, _)| *v == l) {
                Some(e) => e.1 += 1,
                None => votes.push((l, 1)),
            }
        }
        let top = votes.iter().map(|v| v.1).max().unwrap_or(0);
        let winners: Vec<&RoomLabel> = votes.iter().filter(|v| v.1 == top).map(|v| &v.0).collect();
        let new = if winners.len() == 1 { winners[0].clone() } else { kf.label.clone().unwrap() };
        out.insert(kf.id, new);
    }
    out
}

/// Cheapest simple path cost by exhaustive depth-first enumeration, summing
/// weights from `s` outwards.
pub fn brute_force_cost(g: &AdjacencyGraph, s: NodeId, t: NodeId) -> Option<f64> {
    fn dfs(g: &AdjacencyGraph, v: NodeId, t: NodeId, acc: f64, seen: &mut Vec<bool>, best: &mut Option<f64>) {
        if v == t {
            if best.is_none_or(|b| acc < b) {
                *best = Some(acc);
            }
            return;
        }
        for &(w, c) in g.neighbors(v) {
            if !seen[w] {
                seen[w] = true;
                dfs(g, w, t, acc + c, seen, best);
                seen[w] = false;
            }
        }
    }
    let mut seen = vec![false; g.node_count()];
    seen[s] = true;
    let mut best = None;
    dfs(g, s, t, 0.0, &mut seen, &mut best);
    best
}

/// Pose graph of a square benchmark with the chosen loop sets.
pub fn square_snapshot(sq: &SquareLoop, true_loops: bool, false_loops: bool) -> GraphSnapshot {
    let kfs = sq.odometry.iter().enumerate().map(|(i, p)| keyframe(i, *p, None)).collect();
    let mut edges = odometry_chain(&sq.odometry);
    for e in &mut edges {
        e.info_weight = sq.info_weight;
    }
    let loops = sq
        .true_loops
        .iter()
        .filter(|_| true_loops)
        .chain(sq.false_loops.iter().filter(|_| false_loops));
    for &(from, to, rel) in loops {
        edges.push(GraphEdge { from, to, kind: EdgeKind::Loop, rel_pose: rel, info_weight: sq.info_weight });
    }
    GraphSnapshot::from_parts(kfs, edges, 1).unwrap()
}

pub fn scene(name: &str, seed: Option<u64>) -> DatasetBundle {
    let mut spec = preset(name).unwrap();
    if let Some(s) = seed {
        spec.seed = s;
    }
    simulate_scene(&spec).unwrap()
}

pub fn run_scene(name: &str, seed: Option<u64>, plan: Option<&str>) -> (DatasetBundle, RunOutput) {
    let bundle = scene(name, seed);
    let req: Option<PlanRequest> = plan.map(|p| p.parse().unwrap());
    let out = run_pipeline(&bundle, &PipelineConfig::default(), req.as_ref()).unwrap();
    (bundle, out)
}

pub fn metric(out: &RunOutput, name: &str) -> f64 {
    out.metrics.iter().find(|m| m.metric == name).unwrap_or_else(|| panic!("no metric {name}")).value
}

pub fn by_record(out: &RunOutput) -> BTreeMap<usize, SE3Pose> {
    out.records.iter().copied().zip(out.snapshot.keyframes().iter().map(|k| k.pose)).collect()
}

//! Run outputs.
//!
//! * `graph.jsonl`: a header line, one `node` line per keyframe, then one
//!   `edge` line per constraint.
//! * `clusters.json`, `trajectory_optimized.jsonl`, `metrics.json`.
//! * `plan.jsonl` when a plan was requested: a header line then one line per
//!   path node.
//! * `manifest.json`: schema version, dataset path, file list and config.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::{mean_of, FloorId, RoomCluster};
use crate::error::{Error, Result};
use crate::graph::{EdgeKind, GraphEdge, GraphSnapshot, Keyframe, NodeId};
use crate::io::bundle::{parse_json, parse_jsonl, to_jsonl, write_atomic};
use crate::io::config::PipelineConfig;
use crate::io::pipeline::{Metric, PlanResult, RunOutput};
use crate::planner::PlanOutcome;
use crate::se3::SE3Pose;
use crate::semantics::RoomLabel;

pub const SCHEMA_VERSION: u32 = 1;
pub const GRAPH_FILE: &str = "graph.jsonl";
pub const CLUSTERS_FILE: &str = "clusters.json";
pub const TRAJECTORY_FILE: &str = "trajectory_optimized.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const PLAN_FILE: &str = "plan.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum GraphLine {
    Header {
        schema: u32,
        nodes: usize,
        edges: usize,
        optimizations: usize,
    },
    Node {
        id: NodeId,
        record: usize,
        t: f64,
        pose: [f64; 7],
        odom_pose: [f64; 7],
        label: RoomLabel,
        score: f64,
        raw_label: RoomLabel,
        raw_score: f64,
        cluster: usize,
        floor: FloorId,
    },
    Edge {
        from: NodeId,
        to: NodeId,
        kind: EdgeKind,
        rel_pose: [f64; 7],
        info_weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ClusterJson {
    id: usize,
    label: RoomLabel,
    floor: FloorId,
    mean_pos: [f64; 3],
    members: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrajectoryLine {
    id: NodeId,
    record: usize,
    t: f64,
    pose: [f64; 7],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum PlanLine {
    Header {
        schema: u32,
        from: RoomLabel,
        to: RoomLabel,
        status: String,
        cost: Option<f64>,
        length: usize,
    },
    Step {
        step: usize,
        node: NodeId,
        record: usize,
        label: RoomLabel,
        cluster: usize,
        floor: FloorId,
        position: [f64; 3],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    schema: u32,
    dataset: String,
    files: Vec<String>,
    config: PipelineConfig,
}

fn pretty<T: Serialize + ?Sized>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

fn graph_lines(run: &RunOutput) -> Vec<GraphLine> {
    let owner = run.cluster_of();
    let floor: BTreeMap<usize, FloorId> = run.clusters.iter().map(|c| (c.id, c.floor)).collect();
    let snap = &run.snapshot;
    let mut lines = vec![GraphLine::Header {
        schema: SCHEMA_VERSION,
        nodes: snap.len(),
        edges: snap.edges().len(),
        optimizations: run.optimizations,
    }];
    for kf in snap.keyframes() {
        let cluster = owner[&kf.id];
        lines.push(GraphLine::Node {
            id: kf.id,
            record: run.records[kf.id],
            t: kf.stamp,
            pose: kf.pose.to_array(),
            odom_pose: run.odometry[kf.id].to_array(),
            label: kf.label.clone().expect("labelled after run"),
            score: kf.label_score,
            raw_label: run.raw_labels[kf.id].0.clone(),
            raw_score: run.raw_labels[kf.id].1,
            cluster,
            floor: floor[&cluster],
        });
    }
    for e in snap.edges() {
        lines.push(GraphLine::Edge {
            from: e.from,
            to: e.to,
            kind: e.kind,
            rel_pose: e.rel_pose.to_array(),
            info_weight: e.info_weight,
        });
    }
    lines
}

fn plan_lines(run: &RunOutput, plan: &PlanResult) -> Vec<PlanLine> {
    let owner = run.cluster_of();
    let floor: BTreeMap<usize, FloorId> = run.clusters.iter().map(|c| (c.id, c.floor)).collect();
    let nodes = plan.outcome.nodes().unwrap_or(&[]);
    let status = match plan.outcome {
        PlanOutcome::Found { .. } => "found",
        PlanOutcome::Unreachable => "unreachable",
    };
    let mut lines = vec![PlanLine::Header {
        schema: SCHEMA_VERSION,
        from: plan.request.from.clone(),
        to: plan.request.to.clone(),
        status: status.to_owned(),
        cost: plan.outcome.cost(),
        length: nodes.len(),
    }];
    for (step, &n) in nodes.iter().enumerate() {
        let kf = &run.snapshot.keyframes()[n];
        let cluster = owner[&n];
        lines.push(PlanLine::Step {
            step,
            node: n,
            record: run.records[n],
            label: kf.label.clone().expect("labelled after run"),
            cluster,
            floor: floor[&cluster],
            position: kf.position().into(),
        });
    }
    lines
}

/// Writes every output file of a run into `dir`, creating it if needed.
pub fn export_outputs(run: &RunOutput, dir: &Path, dataset: &str, cfg: &PipelineConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    write_atomic(&dir.join(GRAPH_FILE), to_jsonl(graph_lines(run)).as_bytes())?;
    let clusters: Vec<ClusterJson> = run
        .clusters
        .iter()
        .map(|c| ClusterJson {
            id: c.id,
            label: c.label.clone(),
            floor: c.floor,
            mean_pos: c.mean_pos.into(),
            members: c.members.clone(),
        })
        .collect();
    write_atomic(&dir.join(CLUSTERS_FILE), &pretty(&clusters))?;
    let traj = run.snapshot.keyframes().iter().map(|k| TrajectoryLine {
        id: k.id,
        record: run.records[k.id],
        t: k.stamp,
        pose: k.pose.to_array(),
    });
    write_atomic(&dir.join(TRAJECTORY_FILE), to_jsonl(traj).as_bytes())?;
    write_metrics(&run.metrics, dir)?;
    let mut files = vec![GRAPH_FILE, CLUSTERS_FILE, TRAJECTORY_FILE, METRICS_FILE];
    if let Some(plan) = &run.plan {
        write_plan(run, plan, dir)?;
        files.push(PLAN_FILE);
    }
    files.push(MANIFEST_FILE);
    let manifest = Manifest {
        schema: SCHEMA_VERSION,
        dataset: dataset.to_owned(),
        files: files.into_iter().map(str::to_owned).collect(),
        config: cfg.clone(),
    };
    write_atomic(&dir.join(MANIFEST_FILE), &pretty(&manifest))
}

pub fn write_metrics(metrics: &[Metric], dir: &Path) -> Result<()> {
    write_atomic(&dir.join(METRICS_FILE), &pretty(metrics))
}

/// `plan.jsonl` contents for a plan over `run`.
pub fn plan_jsonl(run: &RunOutput, plan: &PlanResult) -> String {
    to_jsonl(plan_lines(run, plan))
}

pub fn write_plan(run: &RunOutput, plan: &PlanResult, dir: &Path) -> Result<()> {
    write_atomic(&dir.join(PLAN_FILE), plan_jsonl(run, plan).as_bytes())
}

pub fn read_metrics(dir: &Path) -> Result<Vec<Metric>> {
    parse_json(&dir.join(METRICS_FILE))
}

/// Dataset path and config recorded by a run.
pub fn read_manifest(dir: &Path) -> Result<(String, PipelineConfig)> {
    let m: Manifest = parse_json(&dir.join(MANIFEST_FILE))?;
    if m.schema != SCHEMA_VERSION {
        return Err(Error::InvalidBundle(format!("manifest schema {} is not {SCHEMA_VERSION}", m.schema)));
    }
    Ok((m.dataset, m.config))
}

/// Rebuilds a run from `graph.jsonl`. Clusters are reassembled from the
/// per-node cluster ids; features, loop details and the plan are not
/// stored and come back empty.
pub fn read_graph(path: &Path) -> Result<RunOutput> {
    let lines: Vec<GraphLine> = parse_jsonl(path)?;
    let bad = |m: String| Error::InvalidBundle(format!("{}: {m}", path.display()));
    let mut it = lines.into_iter();
    let Some(GraphLine::Header { schema, nodes, edges: n_edges, optimizations }) = it.next() else {
        return Err(bad("missing header line".into()));
    };
    if schema != SCHEMA_VERSION {
        return Err(bad(format!("schema {schema} is not {SCHEMA_VERSION}")));
    }
    let mut keyframes = Vec::with_capacity(nodes);
    let mut edges = Vec::with_capacity(n_edges);
    let mut records = Vec::new();
    let mut raw = Vec::new();
    let mut odometry = Vec::new();
    let mut groups: BTreeMap<usize, (RoomLabel, FloorId, Vec<NodeId>)> = BTreeMap::new();
    for line in it {
        match line {
            GraphLine::Header { .. } => return Err(bad("repeated header".into())),
            GraphLine::Node { id, record, t, pose, odom_pose, label, score, raw_label, raw_score, cluster, floor } => {
                if id != keyframes.len() {
                    return Err(bad(format!("node {id} out of order")));
                }
                let g = groups.entry(cluster).or_insert_with(|| (label.clone(), floor, Vec::new()));
                if g.0 != label || g.1 != floor {
                    return Err(bad(format!("node {id} disagrees with cluster {cluster}")));
                }
                g.2.push(id);
                keyframes.push(Keyframe {
                    id,
                    stamp: t,
                    pose: SE3Pose::from_array(pose)?,
                    embedding_row: 0,
                    features: None,
                    label: Some(label),
                    label_score: score,
                });
                records.push(record);
                raw.push((raw_label, raw_score));
                odometry.push(SE3Pose::from_array(odom_pose)?);
            }
            GraphLine::Edge { from, to, kind, rel_pose, info_weight } => {
                edges.push(GraphEdge { from, to, kind, rel_pose: SE3Pose::from_array(rel_pose)?, info_weight });
            }
        }
    }
    if keyframes.len() != nodes || edges.len() != n_edges {
        return Err(bad("counts disagree with header".into()));
    }
    let snapshot = GraphSnapshot::from_parts(keyframes, edges, 0)?;
    let clusters = groups
        .into_iter()
        .map(|(id, (label, floor, members))| {
            let mean_pos = mean_of(&snapshot, &members);
            RoomCluster { id, label, members, mean_pos, floor }
        })
        .collect();
    Ok(RunOutput {
        snapshot,
        clusters,
        records,
        raw_labels: raw,
        odometry,
        loops: Vec::new(),
        optimizations,
        metrics: Vec::new(),
        plan: None,
    })
}

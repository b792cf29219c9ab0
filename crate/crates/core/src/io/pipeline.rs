//! Replays a bundle through the full mapping pipeline.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::clustering::{build_clusters, RoomCluster};
use crate::error::{Error, Result};
use crate::eval::metrics::{ate, classification_accuracy, pr_counts, Accuracy, GroundTruth, PrCounts};
use crate::graph::{EdgeKind, GraphSnapshot, NodeId, PoseGraph};
use crate::io::bundle::DatasetBundle;
use crate::io::config::PipelineConfig;
use crate::loopclosure::{close_loops, LoopResult};
use crate::optimizer::optimize;
use crate::planner::{build_adjacency, plan, PlanOutcome};
use crate::se3::SE3Pose;
use crate::semantics::{detect_stairs, refine_pass, RoomLabel};

/// Place-recognition thresholds used to score loop closures.
pub const LOOP_TP_DIST_M: f64 = 1.0;
pub const LOOP_TP_ANGLE_RAD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct PlanRequest {
    pub from: RoomLabel,
    pub to: RoomLabel,
}

impl std::str::FromStr for PlanRequest {
    type Err = Error;

    /// `FROM:TO`
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("plan request `{s}` is not FROM:TO")))?;
        Ok(Self { from: RoomLabel::new(a)?, to: RoomLabel::new(b)? })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub request: PlanRequest,
    pub outcome: PlanOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub metric: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub detail: BTreeMap<String, f64>,
}

impl Metric {
    fn new(name: &str, value: f64) -> Self {
        Self { metric: name.to_owned(), value, detail: BTreeMap::new() }
    }

    fn with(mut self, key: &str, v: f64) -> Self {
        self.detail.insert(key.to_owned(), v);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub snapshot: GraphSnapshot,
    pub clusters: Vec<RoomCluster>,
    /// Bundle record id of each node.
    pub records: Vec<usize>,
    pub raw_labels: Vec<(RoomLabel, f64)>,
    /// Poses as first admitted, before any optimization.
    pub odometry: Vec<SE3Pose>,
    pub loops: Vec<LoopResult>,
    pub optimizations: usize,
    pub metrics: Vec<Metric>,
    pub plan: Option<PlanResult>,
}

impl RunOutput {
    pub fn cluster_of(&self) -> BTreeMap<NodeId, usize> {
        self.clusters
            .iter()
            .flat_map(|c| c.members.iter().map(move |&m| (m, c.id)))
            .collect()
    }
}

struct Runner<'a> {
    bundle: &'a DatasetBundle,
    cfg: &'a PipelineConfig,
    graph: PoseGraph,
    raw: Vec<(RoomLabel, f64)>,
    clusters: Vec<RoomCluster>,
    optimizations: usize,
}

impl Runner<'_> {
    /// Refinement always starts from the raw classification so that each
    /// round is a single pass from the same baseline; stair detection then
    /// overrides.
    fn relabel(&mut self) -> Result<()> {
        let raw: BTreeMap<NodeId, RoomLabel> =
            self.raw.iter().enumerate().map(|(i, (l, _))| (i, l.clone())).collect();
        let snap = self.graph.snapshot().with_labels(&raw);
        let mut labels = refine_pass(&snap, self.cfg.refine_neighbors, self.cfg.neighbor_metric)
            .map_err(|e| e.in_stage("refinement"))?;
        for id in detect_stairs(&snap, self.cfg.stair_window, self.cfg.stair_dz_m) {
            labels.insert(id, RoomLabel::stairs());
        }
        self.graph.apply_labels(&labels)?;
        self.clusters = build_clusters(&self.graph.snapshot(), &self.cfg.clusters())
            .map_err(|e| e.in_stage("clustering"))?;
        Ok(())
    }

    fn optimize(&mut self) -> Result<()> {
        let snap = self.graph.snapshot();
        let out = optimize(&snap, &self.cfg.dcs()?, &self.cfg.optimize()).map_err(|e| e.in_stage("optimization"))?;
        self.graph.apply_optimized_poses(&out.poses, snap.version())?;
        self.optimizations += 1;
        Ok(())
    }
}

/// Runs gating, classification, periodic refinement and clustering, loop
/// closure with optimization, and (when ground truth is present) metrics.
pub fn run_pipeline(bundle: &DatasetBundle, cfg: &PipelineConfig, plan_request: Option<&PlanRequest>) -> Result<RunOutput> {
    cfg.validate()?;
    let mut run = Runner {
        bundle,
        cfg,
        graph: PoseGraph::new(cfg.graph(), bundle.embeddings.rows()),
        raw: Vec::new(),
        clusters: Vec::new(),
        optimizations: 0,
    };
    let loop_cfg = cfg.loops();
    let mut records = Vec::new();
    let mut odometry = Vec::new();
    let mut loops = Vec::new();
    // maps raw odometry into the corrected frame of the newest node
    let mut correction = SE3Pose::identity();

    for rec in &bundle.keyframes {
        let pose = correction.compose(&rec.pose);
        let features = rec.features.clone();
        let Some(id) = run
            .graph
            .add_keyframe(pose, rec.stamp, rec.embedding_row, features)
            .map_err(|e| e.in_stage(format!("keyframe record {}", rec.id)))?
        else {
            continue;
        };
        records.push(rec.id);
        odometry.push(rec.pose);

        let (label, score) = run.bundle.prompts.classify(run.bundle.embeddings.row(rec.embedding_row)?)?;
        run.graph.set_label(id, label.clone(), score)?;
        run.raw.push((label, score));

        if !run.clusters.is_empty() {
            let snap = run.graph.snapshot();
            let accepted = close_loops(id, &snap, &run.clusters, &mut run.graph, &bundle.embeddings, &bundle.camera, &loop_cfg)
                .map_err(|e| e.in_stage(format!("loop closure at node {id}")))?;
            if !accepted.is_empty() {
                loops.extend(accepted);
                run.optimize()?;
            }
        }
        if (id + 1) % cfg.refine_every == 0 {
            run.relabel()?;
        }
        let newest = &run.graph.keyframes()[id];
        correction = newest.pose.compose(&rec.pose.inverse());
    }

    if run.graph.is_empty() {
        return Err(Error::InvalidBundle("no keyframes".into()));
    }
    if !loops.is_empty() {
        run.optimize()?;
    }
    run.relabel()?;

    let snapshot = run.graph.snapshot();
    let plan = match plan_request {
        Some(req) => {
            let adj = build_adjacency(&snapshot, &run.clusters, cfg.unit_weights);
            let outcome = plan(&adj, &snapshot, &run.clusters, &req.from, &req.to)?;
            Some(PlanResult { request: req.clone(), outcome })
        }
        None => None,
    };
    let mut out = RunOutput {
        snapshot,
        clusters: run.clusters,
        records,
        raw_labels: run.raw,
        odometry,
        loops,
        optimizations: run.optimizations,
        metrics: Vec::new(),
        plan,
    };
    out.metrics = compute_metrics(&out, bundle.ground_truth.as_ref())?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub baseline: Option<Accuracy>,
    pub refined: Option<Accuracy>,
    pub ate_odometry: Option<f64>,
    pub ate_optimized: Option<f64>,
    pub loops: Option<PrCounts>,
}

/// Scores a run against ground truth keyed by record id.
pub fn score_run(out: &RunOutput, gt: &GroundTruth) -> Result<RunMetrics> {
    let by_record = |labels: Vec<RoomLabel>| -> BTreeMap<usize, RoomLabel> {
        out.records.iter().copied().zip(labels).collect()
    };
    let raw = by_record(out.raw_labels.iter().map(|(l, _)| l.clone()).collect());
    let refined = by_record(out.snapshot.keyframes().iter().map(|k| k.label.clone().expect("labelled")).collect());
    let has_truth = !gt.labels.is_empty() || !gt.boxes.is_empty();
    let baseline = has_truth.then(|| classification_accuracy(&raw, gt)).transpose()?;
    let refined = has_truth.then(|| classification_accuracy(&refined, gt)).transpose()?;

    let poses = |ps: Vec<SE3Pose>| -> BTreeMap<usize, SE3Pose> { out.records.iter().copied().zip(ps).collect() };
    let enough = out.records.iter().filter(|r| gt.trajectory.contains_key(r)).count() >= 3;
    let (ate_odometry, ate_optimized) = if enough {
        (
            Some(ate(&poses(out.odometry.clone()), &gt.trajectory)?),
            Some(ate(&poses(out.snapshot.keyframes().iter().map(|k| k.pose).collect()), &gt.trajectory)?),
        )
    } else {
        (None, None)
    };

    let loops = if gt.trajectory.is_empty() {
        None
    } else {
        let mut per_query: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for e in out.snapshot.edges().iter().filter(|e| e.kind == EdgeKind::Loop) {
            per_query.entry(out.records[e.from]).or_default().push(out.records[e.to]);
        }
        let queries: Vec<(usize, Vec<usize>)> = per_query.into_iter().collect();
        let n = queries.iter().map(|(_, m)| m.len()).max().unwrap_or(0);
        Some(pr_counts(&queries, n, &gt.trajectory, LOOP_TP_DIST_M, LOOP_TP_ANGLE_RAD)?)
    };
    Ok(RunMetrics { baseline, refined, ate_odometry, ate_optimized, loops })
}

fn compute_metrics(out: &RunOutput, gt: Option<&GroundTruth>) -> Result<Vec<Metric>> {
    let floors: BTreeSet<usize> = out.clusters.iter().map(|c| c.floor.0).collect();
    let loop_edges = out.snapshot.edges().iter().filter(|e| e.kind == EdgeKind::Loop).count();
    let mut metrics = vec![
        Metric::new("nodes", out.snapshot.len() as f64),
        Metric::new("clusters", out.clusters.len() as f64),
        Metric::new("floors", floors.len() as f64),
        Metric::new("loop_edges", loop_edges as f64),
        Metric::new("optimizations", out.optimizations as f64),
    ];
    let Some(gt) = gt else {
        return Ok(metrics);
    };
    let m = score_run(out, gt)?;
    let acc = |name: &str, a: Accuracy| {
        Metric::new(name, a.accuracy)
            .with("correct", a.correct as f64)
            .with("total", a.total as f64)
            .with("excluded", a.excluded as f64)
    };
    if let Some(a) = m.baseline {
        metrics.push(acc("accuracy_baseline", a));
    }
    if let Some(a) = m.refined {
        metrics.push(acc("accuracy_refined", a));
    }
    if let Some(v) = m.ate_odometry {
        metrics.push(Metric::new("ate_odometry_m", v));
    }
    if let Some(v) = m.ate_optimized {
        metrics.push(Metric::new("ate_optimized_m", v));
    }
    if let Some(c) = m.loops {
        metrics.push(Metric::new("loop_true_positives", c.true_positives as f64));
        metrics.push(Metric::new("loop_false_positives", c.false_positives as f64));
    }
    Ok(metrics)
}

/// Recomputes the metric report of an existing run.
pub fn recompute_metrics(out: &RunOutput, gt: Option<&GroundTruth>) -> Result<Vec<Metric>> {
    compute_metrics(out, gt)
}

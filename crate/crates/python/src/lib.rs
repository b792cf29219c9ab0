//! Python bindings: poses, datasets, pipeline runs, planning and the
//! robust optimizer.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use toposem::eval::sim::{load_spec, simulate_scene};
use toposem::graph::{EdgeKind, GraphEdge, GraphSnapshot, Keyframe};
use toposem::io::bundle::{load_bundle, write_bundle, DatasetBundle};
use toposem::io::config::PipelineConfig;
use toposem::io::export::{export_outputs, read_graph as read_graph_file, write_plan};
use toposem::io::pipeline::{run_pipeline, PlanRequest, RunOutput};
use toposem::optimizer::{dcs_scale as dcs, optimize as solve, DcsParams, OptimizeOptions};
use toposem::planner::{build_adjacency, plan as plan_route, PlanOutcome};
use toposem::semantics::{cosine_similarity as cosine, RoomLabel};
use toposem::SE3Pose;

create_exception!(toposem, ToposemError, PyException);

fn err(e: toposem::Error) -> PyErr {
    ToposemError::new_err(e.to_string())
}

/// Rigid transform with a unit-quaternion rotation.
#[pyclass(name = "Pose", module = "toposem", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct Pose(SE3Pose);

#[pymethods]
impl Pose {
    /// `translation` is `[x, y, z]`, `quaternion` is `[qx, qy, qz, qw]`.
    #[new]
    #[pyo3(signature = (translation = [0.0; 3], quaternion = [0.0, 0.0, 0.0, 1.0]))]
    fn new(translation: [f64; 3], quaternion: [f64; 4]) -> PyResult<Self> {
        let t = translation;
        let q = quaternion;
        SE3Pose::from_array([t[0], t[1], t[2], q[0], q[1], q[2], q[3]]).map(Pose).map_err(err)
    }

    #[staticmethod]
    fn from_xyz_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Pose(SE3Pose::from_xyz_yaw(x, y, z, yaw))
    }

    /// Exponential map of a tangent vector `[rho, theta]`.
    #[staticmethod]
    fn exp(xi: [f64; 6]) -> Self {
        Pose(SE3Pose::exp(&xi.into()))
    }

    fn log(&self) -> [f64; 6] {
        self.0.log().into()
    }

    #[getter]
    fn translation(&self) -> [f64; 3] {
        self.0.translation.into()
    }

    #[getter]
    fn quaternion(&self) -> [f64; 4] {
        let a = self.0.to_array();
        [a[3], a[4], a[5], a[6]]
    }

    /// Homogeneous 4x4 matrix, row-major.
    fn matrix(&self) -> [[f64; 4]; 4] {
        let r = self.0.rotation_matrix();
        let t = self.0.translation;
        let mut m = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = r[(i, j)];
            }
            m[i][3] = t[i];
        }
        m[3][3] = 1.0;
        m
    }

    fn inverse(&self) -> Self {
        Pose(self.0.inverse())
    }

    fn compose(&self, other: &Pose) -> Self {
        Pose(self.0.compose(&other.0))
    }

    /// `self⁻¹ · other`
    fn between(&self, other: &Pose) -> Self {
        Pose(self.0.between(&other.0))
    }

    fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        self.0.transform_point(&p.into()).into()
    }

    #[pyo3(signature = (other, tol = 1e-9))]
    fn approx_eq(&self, other: &Pose, tol: f64) -> bool {
        self.0.approx_eq(&other.0, tol)
    }

    fn __mul__(&self, other: &Pose) -> Self {
        self.compose(other)
    }

    fn __repr__(&self) -> String {
        let t = self.translation();
        let q = self.quaternion();
        format!("Pose(translation={t:?}, quaternion={q:?})")
    }
}

/// Pipeline parameters; round-trips through TOML.
#[pyclass(name = "Config", module = "toposem", from_py_object)]
#[derive(Clone, Default)]
struct Config(PipelineConfig);

#[pymethods]
impl Config {
    #[new]
    fn new() -> Self {
        Self::default()
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        PipelineConfig::from_toml(text).map(Config).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        PipelineConfig::load(&path).map(Config).map_err(err)
    }

    fn to_toml(&self) -> String {
        self.0.to_toml()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.0.seed = v;
    }

    #[getter]
    fn phi(&self) -> f64 {
        self.0.phi
    }

    #[setter]
    fn set_phi(&mut self, v: f64) {
        self.0.phi = v;
    }

    #[getter]
    fn refine_neighbors(&self) -> usize {
        self.0.refine_neighbors
    }

    #[setter]
    fn set_refine_neighbors(&mut self, v: usize) {
        self.0.refine_neighbors = v;
    }

    #[getter]
    fn cluster_radius_m(&self) -> f64 {
        self.0.cluster_radius_m
    }

    #[setter]
    fn set_cluster_radius_m(&mut self, v: f64) {
        self.0.cluster_radius_m = v;
    }

    #[getter]
    fn pnp_min_inliers(&self) -> usize {
        self.0.pnp_min_inliers
    }

    #[setter]
    fn set_pnp_min_inliers(&mut self, v: usize) {
        self.0.pnp_min_inliers = v;
    }

    #[getter]
    fn unit_weights(&self) -> bool {
        self.0.unit_weights
    }

    #[setter]
    fn set_unit_weights(&mut self, v: bool) {
        self.0.unit_weights = v;
    }
}

/// A loaded or simulated dataset bundle.
#[pyclass(name = "Dataset", module = "toposem", frozen)]
struct Dataset {
    bundle: DatasetBundle,
    #[pyo3(get)]
    warnings: Vec<String>,
}

#[pymethods]
impl Dataset {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let loaded = load_bundle(&path).map_err(err)?;
        Ok(Dataset { bundle: loaded.bundle, warnings: loaded.warnings })
    }

    /// `spec` is a preset name or a scene JSON file.
    #[staticmethod]
    #[pyo3(signature = (spec, seed = None))]
    fn simulate(spec: &str, seed: Option<u64>) -> PyResult<Self> {
        let mut spec = load_spec(spec).map_err(err)?;
        if let Some(s) = seed {
            spec.seed = s;
        }
        Ok(Dataset { bundle: simulate_scene(&spec).map_err(err)?, warnings: Vec::new() })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        write_bundle(&self.bundle, &path).map_err(err)
    }

    #[getter]
    fn embedding_dim(&self) -> usize {
        self.bundle.embeddings.dim()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.bundle.prompts.labels().map(|l| l.to_string()).collect()
    }

    #[getter]
    fn has_ground_truth(&self) -> bool {
        self.bundle.ground_truth.is_some()
    }

    fn poses(&self) -> Vec<Pose> {
        self.bundle.keyframes.iter().map(|k| Pose(k.pose)).collect()
    }

    fn __len__(&self) -> usize {
        self.bundle.keyframes.len()
    }
}

fn outcome_dict<'py>(py: Python<'py>, outcome: &PlanOutcome) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    match outcome {
        PlanOutcome::Found { nodes, cost } => {
            d.set_item("status", "found")?;
            d.set_item("cost", cost)?;
            d.set_item("nodes", nodes.clone())?;
        }
        PlanOutcome::Unreachable => {
            d.set_item("status", "unreachable")?;
            d.set_item("cost", py.None())?;
            d.set_item("nodes", Vec::<usize>::new())?;
        }
    }
    Ok(d)
}

/// Output of a pipeline run or of a graph file read back from disk.
#[pyclass(name = "Run", module = "toposem", frozen)]
struct Run(RunOutput);

#[pymethods]
impl Run {
    /// One dict per node with id, record, pose, label, raw label, cluster
    /// and floor.
    fn nodes<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let cluster_of = self.0.cluster_of();
        let floor_of: BTreeMap<usize, usize> = self.0.clusters.iter().map(|c| (c.id, c.floor.0)).collect();
        self.0
            .snapshot
            .keyframes()
            .iter()
            .map(|k| {
                let d = PyDict::new(py);
                d.set_item("id", k.id)?;
                d.set_item("record", self.0.records[k.id])?;
                d.set_item("pose", Pose(k.pose))?;
                d.set_item("label", k.label.as_ref().map(RoomLabel::to_string))?;
                d.set_item("raw_label", self.0.raw_labels[k.id].0.to_string())?;
                let c = cluster_of.get(&k.id).copied();
                d.set_item("cluster", c)?;
                d.set_item("floor", c.map(|c| floor_of[&c]))?;
                Ok(d)
            })
            .collect()
    }

    fn clusters<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.0
            .clusters
            .iter()
            .map(|c| {
                let d = PyDict::new(py);
                d.set_item("id", c.id)?;
                d.set_item("label", c.label.to_string())?;
                d.set_item("members", c.members.clone())?;
                d.set_item("mean_pos", <[f64; 3]>::from(c.mean_pos))?;
                d.set_item("floor", c.floor.0)?;
                Ok(d)
            })
            .collect()
    }

    /// `(from, to, kind)` for every constraint.
    fn edges(&self) -> Vec<(usize, usize, &'static str)> {
        self.0
            .snapshot
            .edges()
            .iter()
            .map(|e| (e.from, e.to, if e.kind == EdgeKind::Loop { "loop" } else { "odometry" }))
            .collect()
    }

    fn metrics(&self) -> BTreeMap<String, f64> {
        self.0.metrics.iter().map(|m| (m.metric.clone(), m.value)).collect()
    }

    #[getter]
    fn loop_count(&self) -> usize {
        self.0.snapshot.edges().iter().filter(|e| e.kind == EdgeKind::Loop).count()
    }

    #[getter]
    fn optimizations(&self) -> usize {
        self.0.optimizations
    }

    /// Cheapest route between two room labels.
    #[pyo3(signature = (start, goal, unit_weights = false))]
    fn plan<'py>(&self, py: Python<'py>, start: &str, goal: &str, unit_weights: bool) -> PyResult<Bound<'py, PyDict>> {
        let (a, b) = (RoomLabel::new(start).map_err(err)?, RoomLabel::new(goal).map_err(err)?);
        let adj = build_adjacency(&self.0.snapshot, &self.0.clusters, unit_weights);
        let outcome = plan_route(&adj, &self.0.snapshot, &self.0.clusters, &a, &b).map_err(err)?;
        outcome_dict(py, &outcome)
    }

    /// Plan requested at run time, if any.
    fn requested_plan<'py>(&self, py: Python<'py>) -> PyResult<Option<Bound<'py, PyDict>>> {
        self.0.plan.as_ref().map(|p| outcome_dict(py, &p.outcome)).transpose()
    }

    /// Writes the output directory; `dataset` is recorded in the manifest.
    #[pyo3(signature = (out, dataset = "", config = None))]
    fn export(&self, out: PathBuf, dataset: &str, config: Option<&Config>) -> PyResult<()> {
        let cfg = config.map(|c| c.0.clone()).unwrap_or_default();
        export_outputs(&self.0, &out, dataset, &cfg).map_err(err)?;
        if let Some(p) = &self.0.plan {
            write_plan(&self.0, p, &out).map_err(err)?;
        }
        Ok(())
    }

    fn __len__(&self) -> usize {
        self.0.snapshot.len()
    }
}

/// Runs the full pipeline; `plan` is `"FROM:TO"`.
#[pyfunction]
#[pyo3(signature = (dataset, config = None, plan = None))]
fn run(py: Python<'_>, dataset: &Dataset, config: Option<&Config>, plan: Option<&str>) -> PyResult<Run> {
    let cfg = config.map(|c| c.0.clone()).unwrap_or_default();
    let req: Option<PlanRequest> = plan.map(str::parse).transpose().map_err(err)?;
    let out = py.detach(|| run_pipeline(&dataset.bundle, &cfg, req.as_ref())).map_err(err)?;
    Ok(Run(out))
}

/// Reads a `graph.jsonl` written by an earlier run.
#[pyfunction]
fn read_graph(path: PathBuf) -> PyResult<Run> {
    read_graph_file(&path).map(Run).map_err(err)
}

#[pyfunction]
fn cosine_similarity(a: Vec<f32>, b: Vec<f32>) -> PyResult<f64> {
    cosine(&a, &b).map_err(err)
}

/// Switch factor for a constraint with the given chi-square.
#[pyfunction]
#[pyo3(signature = (chi2, phi = 1.0))]
fn dcs_scale(chi2: f64, phi: f64) -> PyResult<f64> {
    dcs(chi2, &DcsParams::new(phi).map_err(err)?).map_err(err)
}

/// Robust pose-graph optimization with node 0 held fixed. Each edge is
/// `(from, to, measurement, info_weight, is_loop)`; loops get the switch
/// factor. Returns the optimized poses and the final robust cost.
#[pyfunction]
#[pyo3(signature = (poses, edges, phi = 1.0, max_iters = 100))]
fn optimize(
    py: Python<'_>,
    poses: Vec<Pose>,
    edges: Vec<(usize, usize, Pose, f64, bool)>,
    phi: f64,
    max_iters: usize,
) -> PyResult<(Vec<Pose>, f64)> {
    let kfs = poses
        .iter()
        .enumerate()
        .map(|(i, p)| Keyframe {
            id: i,
            stamp: i as f64,
            pose: p.0,
            embedding_row: 0,
            features: None,
            label: None,
            label_score: 0.0,
        })
        .collect();
    let edges = edges
        .into_iter()
        .map(|(from, to, z, info_weight, is_loop)| GraphEdge {
            from,
            to,
            kind: if is_loop { EdgeKind::Loop } else { EdgeKind::Odometry },
            rel_pose: z.0,
            info_weight,
        })
        .collect();
    let snap = GraphSnapshot::from_parts(kfs, edges, 0).map_err(err)?;
    let params = DcsParams::new(phi).map_err(err)?;
    let opts = OptimizeOptions { max_iters, ..Default::default() };
    let out = py.detach(|| solve(&snap, &params, &opts)).map_err(err)?;
    Ok((out.poses.values().map(|p| Pose(*p)).collect(), out.final_cost()))
}

#[pymodule]
#[pyo3(name = "toposem")]
fn toposem_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ToposemError", m.py().get_type::<ToposemError>())?;
    m.add_class::<Pose>()?;
    m.add_class::<Config>()?;
    m.add_class::<Dataset>()?;
    m.add_class::<Run>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(read_graph, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(dcs_scale, m)?)?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    Ok(())
}

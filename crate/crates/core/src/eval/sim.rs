//! Deterministic synthetic indoor scenes.
//!
//! A scene is a set of labelled boxes and a waypoint path. The simulator
//! samples keyframes along the path, assigns each the embedding archetype of
//! the room it is in (plus Gaussian noise), drifts the odometry, and renders
//! wall landmarks into pinhole features. Every random draw comes from a
//! ChaCha stream derived from the scene seed.

use std::collections::BTreeMap;

use nalgebra::{DVector, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::{GroundTruth, LabeledBox};
use crate::graph::LocalFeature;
use crate::io::bundle::{DatasetBundle, KeyframeRecord};
use crate::pnp::{body_from_camera, CameraIntrinsics};
use crate::se3::SE3Pose;
use crate::semantics::{EmbeddingBank, PromptBank, PromptEntry, RoomLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSpec {
    pub label: RoomLabel,
    pub min: [f64; 3],
    pub max: [f64; 3],
    /// Selects the archetype stream of the room's label; the first room of
    /// each label decides.
    #[serde(default)]
    pub archetype_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    /// Body positions; heading follows the direction of travel.
    pub waypoints: Vec<[f64; 3]>,
    /// Arc length between consecutive keyframes.
    #[serde(default = "default_step")]
    pub step_m: f64,
    #[serde(default = "default_speed")]
    pub speed_mps: f64,
}

fn default_step() -> f64 {
    0.6
}

fn default_speed() -> f64 {
    0.5
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub embedding_sigma: f64,
    /// Vertical bias per metre travelled.
    pub drift_z_per_m: f64,
    /// Heading bias per metre travelled.
    pub drift_yaw_per_m: f64,
    /// Random-walk strengths, per square-root metre.
    pub odom_sigma_xy: f64,
    pub odom_sigma_yaw: f64,
    pub pixel_sigma: f64,
    /// Probability that a room with an earlier same-label room copies that
    /// room's landmark layout, producing look-alike false loops.
    pub outlier_loop_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub name: String,
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_max_cos")]
    pub max_archetype_cosine: f64,
    pub rooms: Vec<RoomSpec>,
    pub trajectory: TrajectorySpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default = "default_landmarks")]
    pub landmarks_per_room: usize,
    #[serde(default = "default_camera")]
    pub camera: CameraIntrinsics,
    #[serde(default = "default_range")]
    pub max_range_m: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_dim() -> usize {
    64
}

fn default_max_cos() -> f64 {
    0.3
}

fn default_landmarks() -> usize {
    160
}

fn default_range() -> f64 {
    10.0
}

pub fn default_camera() -> CameraIntrinsics {
    CameraIntrinsics { fx: 300.0, fy: 300.0, cx: 320.0, cy: 240.0, width: 640, height: 480 }
}

const PRESETS: &[(&str, &str)] = &[
    ("four_rooms", include_str!("../../scenes/four_rooms.json")),
    ("home", include_str!("../../scenes/home.json")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

/// Built-in scene by name.
pub fn preset(name: &str) -> Result<SceneSpec> {
    let (_, text) = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::InvalidScene(format!("no preset named `{name}`")))?;
    serde_json::from_str(text).map_err(|e| Error::InvalidScene(format!("preset {name}: {e}")))
}

/// A scene from a JSON file path or, failing that, a preset name.
pub fn load_spec(spec: &str) -> Result<SceneSpec> {
    let path = std::path::Path::new(spec);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(spec, e))?;
        return serde_json::from_str(&text).map_err(|e| Error::InvalidScene(format!("{spec}: {e}")));
    }
    preset(spec).map_err(|_| {
        let names: Vec<_> = preset_names().collect();
        Error::InvalidScene(format!("`{spec}` is neither a file nor a preset ({})", names.join(", ")))
    })
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScene(m));
        if self.rooms.is_empty() {
            return bad("no rooms".into());
        }
        for r in &self.rooms {
            LabeledBox::new(r.label.clone(), r.min, r.max)?;
        }
        if self.trajectory.waypoints.len() < 2 {
            return bad("trajectory needs at least two waypoints".into());
        }
        if !(self.trajectory.step_m > 0.0) || !(self.trajectory.speed_mps > 0.0) {
            return bad("step and speed must be positive".into());
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive".into());
        }
        let n = &self.noise;
        let rates = [n.embedding_sigma, n.odom_sigma_xy, n.odom_sigma_yaw, n.pixel_sigma];
        if rates.iter().any(|v| !(*v >= 0.0)) {
            return bad("noise magnitudes must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&n.outlier_loop_fraction) {
            return bad("outlier_loop_fraction must lie in [0, 1]".into());
        }
        self.camera.validate()
    }

    pub fn boxes(&self) -> Vec<LabeledBox> {
        self.rooms
            .iter()
            .map(|r| LabeledBox { label: r.label.clone(), min: r.min, max: r.max })
            .collect()
    }

    /// Distinct labels in order of first appearance.
    pub fn labels(&self) -> Vec<RoomLabel> {
        let mut out: Vec<RoomLabel> = Vec::new();
        for r in &self.rooms {
            if !out.contains(&r.label) {
                out.push(r.label.clone());
            }
        }
        out
    }
}

// Independent random streams.
const STREAM_ARCHETYPE: u64 = 1;
const STREAM_EMBEDDING: u64 = 2;
const STREAM_ODOMETRY: u64 = 3;
const STREAM_LANDMARKS: u64 = 4;
const STREAM_ALIAS: u64 = 5;
const STREAM_PIXELS: u64 = 6;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    loop {
        let v: DVector<f64> = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

const ARCHETYPE_ATTEMPTS: usize = 1000;

/// One unit vector per label with pairwise cosine at most `max_cos`.
pub fn archetypes(spec: &SceneSpec) -> Result<Vec<(RoomLabel, DVector<f64>)>> {
    let labels = spec.labels();
    let mut out: Vec<(RoomLabel, DVector<f64>)> = Vec::new();
    for (k, label) in labels.iter().enumerate() {
        let seed = spec.rooms.iter().find(|r| &r.label == label).map_or(0, |r| r.archetype_seed);
        let mut rng = stream(spec.seed ^ seed.rotate_left(17), STREAM_ARCHETYPE + ((k as u64) << 8));
        let found = (0..ARCHETYPE_ATTEMPTS)
            .map(|_| random_unit(&mut rng, spec.embedding_dim))
            .find(|v| out.iter().all(|(_, a)| a.dot(v) <= spec.max_archetype_cosine));
        match found {
            Some(v) => out.push((label.clone(), v)),
            None => {
                return Err(Error::ArchetypeRejection {
                    labels: labels.len(),
                    dim: spec.embedding_dim,
                    max_cosine: spec.max_archetype_cosine,
                })
            }
        }
    }
    Ok(out)
}

/// Poses sampled every `step_m` of arc length along the waypoint path,
/// with their arc-length positions.
pub fn sample_path(traj: &TrajectorySpec) -> Vec<(f64, SE3Pose)> {
    let w: Vec<Vector3<f64>> = traj.waypoints.iter().map(|p| Vector3::from(*p)).collect();
    let mut lengths = vec![0.0];
    for s in w.windows(2) {
        lengths.push(lengths.last().copied().unwrap_or(0.0) + (s[1] - s[0]).norm());
    }
    let total = *lengths.last().unwrap_or(&0.0);
    let mut yaw = 0.0;
    let headings: Vec<f64> = w
        .windows(2)
        .map(|s| {
            let d = s[1] - s[0];
            if d.xy().norm() > 1e-9 {
                yaw = d.y.atan2(d.x);
            }
            yaw
        })
        .collect();
    let first_yaw = headings.iter().copied().next().unwrap_or(0.0);
    let mut out = Vec::new();
    let mut seg = 0;
    let mut k = 0usize;
    loop {
        let s = k as f64 * traj.step_m;
        if s > total + 1e-9 {
            break;
        }
        while seg + 1 < headings.len() && s > lengths[seg + 1] {
            seg += 1;
        }
        let len = lengths[seg + 1] - lengths[seg];
        let f = if len > 0.0 { ((s - lengths[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        let p = w[seg] + (w[seg + 1] - w[seg]) * f;
        let yaw = if headings.is_empty() { first_yaw } else { headings[seg] };
        out.push((s, SE3Pose::from_xyz_yaw(p.x, p.y, p.z, yaw)));
        k += 1;
    }
    out
}

fn yaw_rotation(yaw: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw)
}

/// Odometry from truth: accumulated heading error rotates each true
/// increment, plus vertical bias and random walks.
pub fn drift_odometry(truth: &[(f64, SE3Pose)], noise: &NoiseSpec, rng: &mut ChaCha8Rng) -> Vec<SE3Pose> {
    let mut out: Vec<SE3Pose> = Vec::with_capacity(truth.len());
    let mut yaw_err = 0.0;
    for (k, (_, pose)) in truth.iter().enumerate() {
        if k == 0 {
            out.push(*pose);
            continue;
        }
        let prev = &truth[k - 1].1;
        let step = pose.translation - prev.translation;
        let d = step.norm();
        let sq = d.sqrt();
        let g = |rng: &mut ChaCha8Rng, s: f64| -> f64 {
            if s > 0.0 {
                Normal::new(0.0, s).expect("positive sigma").sample(rng)
            } else {
                0.0
            }
        };
        yaw_err += noise.drift_yaw_per_m * d + g(rng, noise.odom_sigma_yaw * sq);
        let rot = yaw_rotation(yaw_err);
        let walk = Vector3::new(g(rng, noise.odom_sigma_xy * sq), g(rng, noise.odom_sigma_xy * sq), noise.drift_z_per_m * d);
        let last = &out[k - 1];
        let translation = last.translation + rot * step + walk;
        out.push(SE3Pose::new(translation, rot * pose.rotation));
    }
    out
}

fn room_of(boxes: &[LabeledBox], p: &Vector3<f64>) -> usize {
    if let Some(i) = boxes.iter().position(|b| b.contains(p)) {
        return i;
    }
    (0..boxes.len())
        .min_by(|&a, &b| boxes[a].distance(p).total_cmp(&boxes[b].distance(p)))
        .expect("at least one room")
}

type Landmark = (Vector3<f64>, Vec<u8>);

/// Points on the four vertical walls of a box.
fn wall_landmarks(b: &LabeledBox, n: usize, rng: &mut ChaCha8Rng) -> Vec<Landmark> {
    let (lx, ly) = (b.max[0] - b.min[0], b.max[1] - b.min[1]);
    let perimeter = 2.0 * (lx + ly);
    (0..n)
        .map(|_| {
            let t = rng.random_range(0.0..perimeter);
            let z = rng.random_range(b.min[2]..b.max[2]);
            let p = if t < lx {
                Vector3::new(b.min[0] + t, b.min[1], z)
            } else if t - lx < ly {
                Vector3::new(b.max[0], b.min[1] + (t - lx), z)
            } else if t - lx - ly < lx {
                Vector3::new(b.max[0] - (t - lx - ly), b.max[1], z)
            } else {
                Vector3::new(b.min[0], b.max[1] - (t - lx - ly - lx), z)
            };
            let d: Vec<u8> = (0..32).map(|_| rng.random()).collect();
            (p, d)
        })
        .collect()
}

fn render(
    pose: &SE3Pose,
    landmarks: &[Landmark],
    cam: &CameraIntrinsics,
    max_range: f64,
    pixel_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<LocalFeature> {
    let to_cam = pose.compose(&body_from_camera()).inverse();
    let mut out = Vec::new();
    for (p, d) in landmarks {
        let pc = to_cam.transform_point(p);
        if pc.z < 0.2 || pc.norm() > max_range {
            continue;
        }
        let Some(mut px) = cam.project(&pc) else { continue };
        if pixel_sigma > 0.0 {
            let n = Normal::new(0.0, pixel_sigma).expect("positive sigma");
            px[0] += n.sample(rng);
            px[1] += n.sample(rng);
        }
        if cam.contains(&px) {
            out.push(LocalFeature { pixel: px, point_cam: pc, descriptor: d.clone() });
        }
    }
    out
}

/// Generates a complete bundle, ground truth included.
pub fn simulate_scene(spec: &SceneSpec) -> Result<DatasetBundle> {
    spec.validate()?;
    let boxes = spec.boxes();
    let arche = archetypes(spec)?;
    let label_index: BTreeMap<&RoomLabel, usize> = arche.iter().enumerate().map(|(i, (l, _))| (l, i)).collect();

    let truth = sample_path(&spec.trajectory);
    let mut odo_rng = stream(spec.seed, STREAM_ODOMETRY);
    let odometry = drift_odometry(&truth, &spec.noise, &mut odo_rng);

    // landmarks, with look-alike copies for aliased rooms
    let mut lm_rng = stream(spec.seed, STREAM_LANDMARKS);
    let mut alias_rng = stream(spec.seed, STREAM_ALIAS);
    let mut landmarks: Vec<Vec<Landmark>> = Vec::new();
    for (i, b) in boxes.iter().enumerate() {
        let own = wall_landmarks(b, spec.landmarks_per_room, &mut lm_rng);
        let twin = (0..i).find(|&j| boxes[j].label == b.label);
        let alias = alias_rng.random::<f64>() < spec.noise.outlier_loop_fraction;
        match twin {
            Some(j) if alias => {
                let shift = b.center() - boxes[j].center();
                landmarks.push(landmarks[j].iter().map(|(p, d)| (p + shift, d.clone())).collect());
            }
            _ => landmarks.push(own),
        }
    }

    let mut emb_rng = stream(spec.seed, STREAM_EMBEDDING);
    let mut px_rng = stream(spec.seed, STREAM_PIXELS);
    let sigma = spec.noise.embedding_sigma;
    let mut rows: Vec<f32> = Vec::with_capacity(truth.len() * spec.embedding_dim);
    let mut keyframes = Vec::with_capacity(truth.len());
    let mut gt = GroundTruth { boxes: boxes.clone(), ..Default::default() };
    for (k, ((s, pose), odom)) in truth.iter().zip(&odometry).enumerate() {
        let p = pose.translation;
        let room = room_of(&boxes, &p);
        let inside = boxes[room].contains(&p);
        let a = &arche[label_index[&boxes[room].label]].1;
        let mut e = a.clone();
        if sigma > 0.0 {
            for v in e.iter_mut() {
                let n: f64 = StandardNormal.sample(&mut emb_rng);
                *v += sigma * n;
            }
        }
        let e = &e / e.norm();
        rows.extend(e.iter().map(|&v| v as f32));

        let features = render(pose, &landmarks[room], &spec.camera, spec.max_range_m, spec.noise.pixel_sigma, &mut px_rng);
        let gt_label = inside.then(|| boxes[room].label.clone());
        if let Some(l) = &gt_label {
            gt.labels.insert(k, l.clone());
        }
        gt.trajectory.insert(k, *pose);
        keyframes.push(KeyframeRecord {
            id: k,
            stamp: s / spec.trajectory.speed_mps,
            pose: *odom,
            embedding_row: k,
            features: Some(features),
            gt_label,
        });
    }
    let (embeddings, _) = EmbeddingBank::normalized(spec.embedding_dim, rows)?;

    let text_rows: Vec<Vec<f32>> = arche.iter().map(|(_, a)| a.iter().map(|&v| v as f32).collect()).collect();
    let text = EmbeddingBank::from_rows(&text_rows)?;
    let entries = arche
        .iter()
        .enumerate()
        .map(|(i, (l, _))| PromptEntry { label: l.clone(), prompt: format!("a photo of a {l}"), row: i })
        .collect();
    let prompts = PromptBank::new(entries, text)?;

    Ok(DatasetBundle { keyframes, embeddings, prompts, camera: spec.camera, ground_truth: Some(gt) })
}

/// A pose graph benchmark: two laps of a square with noisy odometry, true
/// loop closures between laps, and optionally false loops.
#[derive(Debug, Clone)]
pub struct SquareLoop {
    pub truth: BTreeMap<usize, SE3Pose>,
    pub odometry: Vec<SE3Pose>,
    /// `(from, to, measured T_from⁻¹ T_to)`
    pub true_loops: Vec<(usize, usize, SE3Pose)>,
    pub false_loops: Vec<(usize, usize, SE3Pose)>,
    /// Information weight for every edge: unit χ² at half a metre of
    /// residual, about the drift accumulated by the time a loop closes, so
    /// true loops start inside the robust kernel's unit region and the
    /// false loops (at least 3 m off) far outside it.
    pub info_weight: f64,
}

pub fn square_loop(seed: u64, side_m: f64, outlier_fraction: f64) -> SquareLoop {
    let per_side = side_m.round() as usize;
    let mut waypoints = Vec::new();
    for _ in 0..2 {
        waypoints.extend([[0.0, 0.0, 0.0], [side_m, 0.0, 0.0], [side_m, side_m, 0.0], [0.0, side_m, 0.0]]);
    }
    waypoints.push([0.0, 0.0, 0.0]);
    let traj = TrajectorySpec { waypoints, step_m: 1.0, speed_mps: 1.0 };
    // the waypoint list changes heading in place at the corners
    let samples = sample_path(&traj);
    let noise = NoiseSpec { odom_sigma_xy: 0.03, odom_sigma_yaw: 0.01, drift_yaw_per_m: 0.004, ..Default::default() };
    let mut rng = stream(seed, STREAM_ODOMETRY);
    let odometry = drift_odometry(&samples, &noise, &mut rng);
    let truth: BTreeMap<usize, SE3Pose> = samples.iter().enumerate().map(|(i, (_, p))| (i, *p)).collect();

    let lap = 4 * per_side;
    let n = samples.len();
    let mut loop_rng = stream(seed, STREAM_ALIAS);
    let mut true_loops = Vec::new();
    for j in (lap + 1..n).step_by(2) {
        let i = j - lap;
        true_loops.push((j, i, truth[&j].between(&truth[&i])));
    }
    let n_false = ((outlier_fraction / (1.0 - outlier_fraction)) * true_loops.len() as f64).round() as usize;
    let mut false_loops = Vec::new();
    while false_loops.len() < n_false {
        let a = loop_rng.random_range(0..n);
        let b = loop_rng.random_range(0..n);
        if a.abs_diff(b) < 5 || truth[&a].translation_distance(&truth[&b]) < 3.0 {
            continue;
        }
        let meas = SE3Pose::from_xyz_yaw(
            loop_rng.random_range(-1.0..1.0),
            loop_rng.random_range(-1.0..1.0),
            0.0,
            loop_rng.random_range(-0.3..0.3),
        );
        false_loops.push((a.max(b), a.min(b), meas));
    }
    SquareLoop { truth, odometry, true_loops, false_loops, info_weight: 4.0 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_validate() {
        for name in preset_names() {
            let spec = preset(name).unwrap();
            spec.validate().unwrap();
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn archetypes_respect_cosine_bound() {
        let spec = preset("home").unwrap();
        let a = archetypes(&spec).unwrap();
        for i in 0..a.len() {
            assert!((a[i].1.norm() - 1.0).abs() < 1e-12);
            for j in 0..i {
                assert!(a[i].1.dot(&a[j].1) <= spec.max_archetype_cosine);
            }
        }
    }

    #[test]
    fn archetype_rejection_fails_when_crowded() {
        let mut spec = preset("home").unwrap();
        spec.embedding_dim = 2;
        spec.max_archetype_cosine = -0.9;
        assert!(matches!(simulate_scene(&spec), Err(Error::ArchetypeRejection { .. })));
    }

    #[test]
    fn path_sampling_spacing() {
        let traj = TrajectorySpec { waypoints: vec![[0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [3.0, 3.0, 0.0]], step_m: 0.5, speed_mps: 1.0 };
        let s = sample_path(&traj);
        assert_eq!(s.len(), 13);
        assert!(s[6].1.translation_distance(&SE3Pose::from_translation(3.0, 0.0, 0.0)) < 1e-12);
        assert!((s[12].1.translation.y - 3.0).abs() < 1e-12);
        assert!(s[3].1.rotation_angle_to(&SE3Pose::identity()) < 1e-12);
        assert!((s[9].1.rotation_angle_to(&SE3Pose::identity()) - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn pure_vertical_drift_accumulates_linearly() {
        let traj = TrajectorySpec { waypoints: vec![[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]], step_m: 1.0, speed_mps: 1.0 };
        let s = sample_path(&traj);
        let noise = NoiseSpec { drift_z_per_m: 0.02, ..Default::default() };
        let odo = drift_odometry(&s, &noise, &mut stream(0, 0));
        for (k, p) in odo.iter().enumerate() {
            assert!((p.translation.z - 0.02 * k as f64).abs() < 1e-12);
            assert!((p.translation.x - k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let spec = preset("four_rooms").unwrap();
        let a = simulate_scene(&spec).unwrap();
        let b = simulate_scene(&spec).unwrap();
        assert_eq!(a, b);
        let mut other = spec.clone();
        other.seed += 1;
        assert_ne!(simulate_scene(&other).unwrap().embeddings, a.embeddings);
    }

    #[test]
    fn rendered_features_reproject() {
        let spec = preset("home").unwrap();
        let b = simulate_scene(&spec).unwrap();
        let with_feats = b.keyframes.iter().filter(|k| k.features.as_ref().is_some_and(|f| f.len() >= 12)).count();
        assert!(with_feats * 2 > b.keyframes.len(), "{with_feats} of {}", b.keyframes.len());
        for k in &b.keyframes {
            for f in k.features.iter().flatten() {
                let px = b.camera.project(&f.point_cam).unwrap();
                assert!((px[0] - f.pixel[0]).abs() < 1e-9 && (px[1] - f.pixel[1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn square_loop_counts() {
        let s = square_loop(3, 10.0, 0.3);
        assert_eq!(s.truth.len(), 81);
        let total = s.true_loops.len() + s.false_loops.len();
        let frac = s.false_loops.len() as f64 / total as f64;
        assert!((frac - 0.3).abs() < 0.05, "{frac}");
        for (a, b, m) in &s.true_loops {
            assert!(s.truth[a].between(&s.truth[b]).approx_eq(m, 1e-12));
        }
    }
}

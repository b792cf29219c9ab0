//! On-disk dataset bundles.
//!
//! ```text
//! DIR/
//!   keyframes.jsonl        one record per line
//!   embeddings.bin         image embeddings
//!   text_embeddings.bin    prompt embeddings
//!   prompts.json           [{label, prompt, row}]
//!   camera.json            {fx, fy, cx, cy, width, height}
//!   gt/                    optional
//!     gt_labels.jsonl      {id, label}
//!     gt_trajectory.jsonl  {id, t, pose}
//!     gt_boxes.json        [{label, min, max}]
//! ```
//!
//! Embedding files: magic `LEXE`, then little-endian `u32` version (1),
//! row count and dimension, then row-major little-endian `f32` values.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::{GroundTruth, LabeledBox};
use crate::graph::LocalFeature;
use crate::pnp::CameraIntrinsics;
use crate::se3::SE3Pose;
use crate::semantics::{EmbeddingBank, PromptBank, PromptEntry, RoomLabel};

pub const EMBEDDING_MAGIC: [u8; 4] = *b"LEXE";
pub const EMBEDDING_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

pub const KEYFRAMES_FILE: &str = "keyframes.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const TEXT_EMBEDDINGS_FILE: &str = "text_embeddings.bin";
pub const PROMPTS_FILE: &str = "prompts.json";
pub const CAMERA_FILE: &str = "camera.json";
pub const GT_DIR: &str = "gt";
pub const GT_LABELS_FILE: &str = "gt_labels.jsonl";
pub const GT_TRAJECTORY_FILE: &str = "gt_trajectory.jsonl";
pub const GT_BOXES_FILE: &str = "gt_boxes.json";

/// A keyframe as stored in the bundle, before gating.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeRecord {
    pub id: usize,
    pub stamp: f64,
    pub pose: SE3Pose,
    pub embedding_row: usize,
    pub features: Option<Vec<LocalFeature>>,
    pub gt_label: Option<RoomLabel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub keyframes: Vec<KeyframeRecord>,
    pub embeddings: EmbeddingBank,
    pub prompts: PromptBank,
    pub camera: CameraIntrinsics,
    pub ground_truth: Option<GroundTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedBundle {
    pub bundle: DatasetBundle,
    pub warnings: Vec<String>,
}

// ---------------------------------------------------------------------------
// embedding files

pub fn encode_embeddings(bank: &EmbeddingBank) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + bank.as_slice().len() * 4);
    out.extend_from_slice(&EMBEDDING_MAGIC);
    out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    out.extend_from_slice(&(bank.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(bank.dim() as u32).to_le_bytes());
    for v in bank.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses an embedding file into `(dim, row-major values)`.
pub fn decode_embeddings(path: &Path, bytes: &[u8]) -> Result<(usize, Vec<f32>)> {
    if bytes.len() < 4 || bytes[..4] != EMBEDDING_MAGIC {
        let mut found = [0u8; 4];
        let n = bytes.len().min(4);
        found[..n].copy_from_slice(&bytes[..n]);
        return Err(Error::BadMagic { path: path.to_owned(), found });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::SizeMismatch { path: path.to_owned(), expected: HEADER_LEN, actual: bytes.len() });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != EMBEDDING_VERSION {
        return Err(Error::VersionMismatch { path: path.to_owned(), found: version });
    }
    let (rows, dim) = (word(8) as usize, word(12) as usize);
    let expected = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::InvalidBundle(format!("{}: header overflows", path.display())))?;
    if bytes.len() != expected {
        return Err(Error::SizeMismatch { path: path.to_owned(), expected, actual: bytes.len() });
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((dim, data))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_owned()));
    }
    fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read(path)?)
        .map_err(|e| Error::Parse { path: path.to_owned(), line: 0, msg: e.to_string() })
}

/// Loads and normalizes an embedding file; returns flagged row indices.
pub fn read_embeddings(path: &Path) -> Result<(EmbeddingBank, Vec<usize>)> {
    let (dim, data) = decode_embeddings(path, &read(path)?)?;
    EmbeddingBank::normalized(dim, data).map_err(|e| e.in_stage(path.display().to_string()))
}

// ---------------------------------------------------------------------------
// JSON records

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct FeatureJson {
    u: f64,
    v: f64,
    X: f64,
    Y: f64,
    Z: f64,
    desc_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyframeJson {
    id: usize,
    t: f64,
    pose: [f64; 7],
    embedding_row: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<FeatureJson>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_label: Option<RoomLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelJson {
    id: usize,
    label: RoomLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct PoseJson {
    pub id: usize,
    pub t: f64,
    pub pose: [f64; 7],
}

impl KeyframeRecord {
    fn to_json(&self) -> KeyframeJson {
        KeyframeJson {
            id: self.id,
            t: self.stamp,
            pose: self.pose.to_array(),
            embedding_row: self.embedding_row,
            features: self.features.as_ref().map(|fs| {
                fs.iter()
                    .map(|f| FeatureJson {
                        u: f.pixel[0],
                        v: f.pixel[1],
                        X: f.point_cam.x,
                        Y: f.point_cam.y,
                        Z: f.point_cam.z,
                        desc_b64: B64.encode(&f.descriptor),
                    })
                    .collect()
            }),
            gt_label: self.gt_label.clone(),
        }
    }

    fn from_json(j: KeyframeJson) -> Result<Self> {
        let features = match j.features {
            None => None,
            Some(fs) => Some(
                fs.into_iter()
                    .map(|f| {
                        let descriptor = B64
                            .decode(&f.desc_b64)
                            .map_err(|e| Error::InvalidBundle(format!("keyframe {}: bad descriptor: {e}", j.id)))?;
                        Ok(LocalFeature { pixel: [f.u, f.v], point_cam: Vector3::new(f.X, f.Y, f.Z), descriptor })
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        Ok(Self {
            id: j.id,
            stamp: j.t,
            pose: SE3Pose::from_array(j.pose)?,
            embedding_row: j.embedding_row,
            features,
            gt_label: j.gt_label,
        })
    }
}

pub(crate) fn parse_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse { path: path.to_owned(), line: i + 1, msg: e.to_string() })
        })
        .collect()
}

pub(crate) fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.to_owned(), line: e.line(), msg: e.to_string() })
}

pub(crate) fn to_jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item).expect("serializable"));
        out.push('\n');
    }
    out
}

/// Writes through a temporary sibling and renames into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let ctx = || path.display().to_string();
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(ctx(), e))?;
    f.write_all(bytes).map_err(|e| Error::io(ctx(), e))?;
    f.sync_all().map_err(|e| Error::io(ctx(), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(ctx(), e))
}

// ---------------------------------------------------------------------------
// bundle

fn validate_features(rec: &KeyframeRecord, cam: &CameraIntrinsics) -> Result<()> {
    for f in rec.features.iter().flatten() {
        if !(f.point_cam.z > 0.0) {
            return Err(Error::InvalidBundle(format!("keyframe {}: feature depth {} not positive", rec.id, f.point_cam.z)));
        }
        if !cam.contains(&f.pixel) {
            return Err(Error::InvalidBundle(format!("keyframe {}: pixel {:?} outside the image", rec.id, f.pixel)));
        }
    }
    Ok(())
}

fn load_ground_truth(dir: &Path) -> Result<GroundTruth> {
    let mut gt = GroundTruth::default();
    let labels = dir.join(GT_LABELS_FILE);
    if labels.exists() {
        for l in parse_jsonl::<LabelJson>(&labels)? {
            gt.labels.insert(l.id, l.label);
        }
    }
    let traj = dir.join(GT_TRAJECTORY_FILE);
    if traj.exists() {
        for p in parse_jsonl::<PoseJson>(&traj)? {
            gt.trajectory.insert(p.id, SE3Pose::from_array(p.pose)?);
        }
    }
    let boxes = dir.join(GT_BOXES_FILE);
    if boxes.exists() {
        let raw: Vec<LabeledBox> = parse_json(&boxes)?;
        gt.boxes = raw
            .into_iter()
            .map(|b| LabeledBox::new(b.label, b.min, b.max))
            .collect::<Result<_>>()?;
    }
    Ok(gt)
}

/// Reads and validates a bundle. Embedding rows are normalized; every row
/// whose norm was off by more than 1e-3 produces one warning.
pub fn load_bundle(dir: &Path) -> Result<LoadedBundle> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_owned()));
    }
    let mut warnings = Vec::new();
    let (embeddings, flagged) = read_embeddings(&dir.join(EMBEDDINGS_FILE))?;
    for r in flagged {
        warnings.push(format!("{EMBEDDINGS_FILE}: row {r} renormalized"));
    }
    let (text, flagged) = read_embeddings(&dir.join(TEXT_EMBEDDINGS_FILE))?;
    for r in flagged {
        warnings.push(format!("{TEXT_EMBEDDINGS_FILE}: row {r} renormalized"));
    }
    if text.dim() != embeddings.dim() {
        return Err(Error::DimensionMismatch(text.dim(), embeddings.dim()));
    }

    let prompts: Vec<PromptEntry> = parse_json(&dir.join(PROMPTS_FILE))?;
    for (i, p) in prompts.iter().enumerate() {
        if p.row >= text.rows() {
            return Err(Error::DanglingRow { record: i, row: p.row, rows: text.rows() });
        }
    }
    let prompts = PromptBank::new(prompts, text)?;

    let camera: CameraIntrinsics = parse_json(&dir.join(CAMERA_FILE))?;
    camera.validate()?;

    let kf_path = dir.join(KEYFRAMES_FILE);
    let mut keyframes = Vec::new();
    for j in parse_jsonl::<KeyframeJson>(&kf_path)? {
        let rec = KeyframeRecord::from_json(j)?;
        if rec.embedding_row >= embeddings.rows() {
            return Err(Error::DanglingRow { record: rec.id, row: rec.embedding_row, rows: embeddings.rows() });
        }
        if let Some(prev) = keyframes.last() {
            let prev: &KeyframeRecord = prev;
            if !(rec.stamp > prev.stamp) {
                return Err(Error::NonMonotonicStamp { stamp: rec.stamp, last: prev.stamp });
            }
        }
        validate_features(&rec, &camera)?;
        keyframes.push(rec);
    }

    let gt_dir = dir.join(GT_DIR);
    let ground_truth = if gt_dir.is_dir() { Some(load_ground_truth(&gt_dir)?) } else { None };

    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(LoadedBundle {
        bundle: DatasetBundle { keyframes, embeddings, prompts, camera, ground_truth },
        warnings,
    })
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

pub fn write_bundle(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    write_atomic(&dir.join(EMBEDDINGS_FILE), &encode_embeddings(&bundle.embeddings))?;
    write_atomic(&dir.join(TEXT_EMBEDDINGS_FILE), &encode_embeddings(bundle.prompts.text_bank()))?;
    write_atomic(&dir.join(PROMPTS_FILE), &pretty(&bundle.prompts.entries()))?;
    write_atomic(&dir.join(CAMERA_FILE), &pretty(&bundle.camera))?;
    write_atomic(
        &dir.join(KEYFRAMES_FILE),
        to_jsonl(bundle.keyframes.iter().map(KeyframeRecord::to_json)).as_bytes(),
    )?;
    if let Some(gt) = &bundle.ground_truth {
        let gdir: PathBuf = dir.join(GT_DIR);
        fs::create_dir_all(&gdir).map_err(|e| Error::io(gdir.display().to_string(), e))?;
        let labels = gt.labels.iter().map(|(&id, l)| LabelJson { id, label: l.clone() });
        write_atomic(&gdir.join(GT_LABELS_FILE), to_jsonl(labels).as_bytes())?;
        let stamps: BTreeMap<usize, f64> = bundle.keyframes.iter().map(|k| (k.id, k.stamp)).collect();
        let traj = gt.trajectory.iter().map(|(&id, p)| PoseJson {
            id,
            t: stamps.get(&id).copied().unwrap_or(0.0),
            pose: p.to_array(),
        });
        write_atomic(&gdir.join(GT_TRAJECTORY_FILE), to_jsonl(traj).as_bytes())?;
        write_atomic(&gdir.join(GT_BOXES_FILE), &pretty(&gt.boxes))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_codec_round_trip() {
        let bank = EmbeddingBank::from_rows(&[vec![0.6, 0.8], vec![1.0, 0.0]]).unwrap();
        let bytes = encode_embeddings(&bank);
        assert_eq!(&bytes[..4], b"LEXE");
        assert_eq!(bytes.len(), 16 + 2 * 2 * 4);
        let (dim, data) = decode_embeddings(Path::new("x"), &bytes).unwrap();
        assert_eq!(dim, 2);
        assert_eq!(data, bank.as_slice());
    }

    #[test]
    fn embedding_codec_errors_are_distinct() {
        let bank = EmbeddingBank::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let good = encode_embeddings(&bank);
        let p = Path::new("x");

        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(matches!(decode_embeddings(p, &magic), Err(Error::BadMagic { found, .. }) if &found == b"XEXE"));

        let mut version = good.clone();
        version[4] = 2;
        assert!(matches!(decode_embeddings(p, &version), Err(Error::VersionMismatch { found: 2, .. })));

        let short = &good[..good.len() - 1];
        assert!(matches!(
            decode_embeddings(p, short),
            Err(Error::SizeMismatch { expected: 24, actual: 23, .. })
        ));
    }
}

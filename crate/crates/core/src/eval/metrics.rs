//! Classification accuracy, place-recognition counts and trajectory error.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pnp::rigid_align;
use crate::se3::SE3Pose;
use crate::semantics::RoomLabel;

/// Axis-aligned, labelled region; bounds are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub label: RoomLabel,
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl LabeledBox {
    pub fn new(label: RoomLabel, min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        if (0..3).any(|i| !(min[i] < max[i])) {
            return Err(Error::InvalidScene(format!("degenerate box for {label}: {min:?} {max:?}")));
        }
        Ok(Self { label, min, max })
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::from_fn(|i, _| 0.5 * (self.min[i] + self.max[i]))
    }

    /// Euclidean distance from `p` to the box (0 inside).
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        Vector3::from_fn(|i, _| (self.min[i] - p[i]).max(0.0).max(p[i] - self.max[i])).norm()
    }
}

/// Keyed by keyframe record id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub labels: BTreeMap<usize, RoomLabel>,
    pub trajectory: BTreeMap<usize, SE3Pose>,
    pub boxes: Vec<LabeledBox>,
}

impl GroundTruth {
    /// True label of a node: from the boxes when they exist and a true pose
    /// is known, otherwise from the per-node labels. `Ok(None)` excludes
    /// the node.
    pub fn label_of(&self, id: usize) -> Result<Option<&RoomLabel>> {
        if !self.boxes.is_empty() {
            if let Some(pose) = self.trajectory.get(&id) {
                let p = pose.translation;
                let mut hit = None;
                for (i, b) in self.boxes.iter().enumerate() {
                    if b.contains(&p) {
                        if let Some(first) = hit {
                            return Err(Error::OverlappingBoxes { node: id, first, second: i });
                        }
                        hit = Some(i);
                    }
                }
                return Ok(hit.map(|i| &self.boxes[i].label));
            }
        }
        Ok(self.labels.get(&id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub excluded: usize,
}

/// Fraction of evaluated nodes whose label matches the truth. An empty
/// evaluation set scores 0.
pub fn classification_accuracy(labels: &BTreeMap<usize, RoomLabel>, gt: &GroundTruth) -> Result<Accuracy> {
    let (mut correct, mut total, mut excluded) = (0, 0, 0);
    for (&id, label) in labels {
        match gt.label_of(id)? {
            Some(truth) => {
                total += 1;
                if truth == label {
                    correct += 1;
                }
            }
            None => excluded += 1,
        }
    }
    let accuracy = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
    Ok(Accuracy { accuracy, correct, total, excluded })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PrCounts {
    pub true_positives: usize,
    pub false_positives: usize,
}

/// Any-of-N rule: a query is a true positive when one of its first `n`
/// matches lies within `dist_m` and `ang_rad` of it in the ground truth.
/// Queries with no matches are not counted; matches without a true pose
/// never qualify.
pub fn pr_counts(
    queries: &[(usize, Vec<usize>)],
    n: usize,
    gt: &BTreeMap<usize, SE3Pose>,
    dist_m: f64,
    ang_rad: f64,
) -> Result<PrCounts> {
    let mut out = PrCounts::default();
    for (q, matches) in queries {
        if matches.is_empty() || n == 0 {
            continue;
        }
        let qp = gt.get(q).ok_or(Error::MissingGroundTruth(*q))?;
        let hit = matches.iter().take(n).any(|m| {
            gt.get(m).is_some_and(|mp| {
                qp.translation_distance(mp) <= dist_m && qp.rotation_angle_to(mp) <= ang_rad
            })
        });
        if hit {
            out.true_positives += 1;
        } else {
            out.false_positives += 1;
        }
    }
    Ok(out)
}

/// RMSE of translational error after least-squares rigid alignment of the
/// estimated positions onto the ground truth, over ids present in both.
pub fn ate(estimated: &BTreeMap<usize, SE3Pose>, gt: &BTreeMap<usize, SE3Pose>) -> Result<f64> {
    let (est, truth): (Vec<_>, Vec<_>) = estimated
        .iter()
        .filter_map(|(id, e)| gt.get(id).map(|g| (e.translation, g.translation)))
        .unzip();
    if est.len() < 3 {
        return Err(Error::TooFewPoses { needed: 3, got: est.len() });
    }
    let align = rigid_align(&est, &truth);
    let sq: f64 = est
        .iter()
        .zip(&truth)
        .map(|(e, g)| (align.transform_point(e) - g).norm_squared())
        .sum();
    Ok((sq / est.len() as f64).sqrt())
}

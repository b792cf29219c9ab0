//! Open-vocabulary room classification and neighbourhood refinement.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphSnapshot, NeighborMetric, NodeId};

/// Label reserved for staircases; it drives floor segmentation.
pub const STAIRS: &str = "stairs";

/// A room class such as `office` or `living room`. Always non-empty,
/// lowercase, and free of surrounding whitespace.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RoomLabel(String);

impl RoomLabel {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() || name.trim() != name || name.to_lowercase() != name {
            return Err(Error::InvalidLabel(name));
        }
        Ok(Self(name))
    }

    pub fn stairs() -> Self {
        Self(STAIRS.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_stairs(&self) -> bool {
        self.0 == STAIRS
    }
}

impl TryFrom<String> for RoomLabel {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Self::new(s)
    }
}

impl From<RoomLabel> for String {
    fn from(l: RoomLabel) -> String {
        l.0
    }
}

impl fmt::Display for RoomLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Row-major matrix of unit-length `f32` embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBank {
    dim: usize,
    data: Vec<f32>,
}

/// Rows whose norm is already this close to one are left bit-identical.
const NORM_EXACT_TOL: f64 = 1e-6;
/// Rows further than this from unit norm are reported.
pub const NORM_WARN_TOL: f64 = 1e-3;

impl EmbeddingBank {
    /// Builds a bank, normalizing every row. Returns the bank and the
    /// indices of rows whose input norm was off by more than
    /// [`NORM_WARN_TOL`].
    pub fn normalized(dim: usize, mut data: Vec<f32>) -> Result<(Self, Vec<usize>)> {
        if dim == 0 {
            return Err(Error::DimensionMismatch(0, 0));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch(data.len(), dim));
        }
        let mut flagged = Vec::new();
        for (i, row) in data.chunks_mut(dim).enumerate() {
            let norm = norm(row);
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::ZeroVector);
            }
            if (norm - 1.0).abs() > NORM_WARN_TOL {
                flagged.push(i);
            }
            if (norm - 1.0).abs() > NORM_EXACT_TOL {
                for v in row.iter_mut() {
                    *v = (*v as f64 / norm) as f32;
                }
            }
        }
        Ok((Self { dim, data }, flagged))
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch(bad.len(), dim));
        }
        Ok(Self::normalized(dim, rows.concat())?.0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> Result<&[f32]> {
        if i >= self.rows() {
            return Err(Error::InvalidEmbeddingRow {
                row: i,
                rows: self.rows(),
            });
        }
        Ok(&self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

/// `a·b / (‖a‖‖b‖)`, accumulated in `f64`.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(a.len(), b.len()));
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEntry {
    pub label: RoomLabel,
    pub prompt: String,
    pub row: usize,
}

/// Candidate room classes with their text embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBank {
    entries: Vec<PromptEntry>,
    text: EmbeddingBank,
}

impl PromptBank {
    pub fn new(entries: Vec<PromptEntry>, text: EmbeddingBank) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyPrompts);
        }
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(&e.label) {
                return Err(Error::DuplicateLabel(e.label.to_string()));
            }
            text.row(e.row)?;
        }
        Ok(Self { entries, text })
    }

    pub fn entries(&self) -> &[PromptEntry] {
        &self.entries
    }

    pub fn text_bank(&self) -> &EmbeddingBank {
        &self.text
    }

    pub fn labels(&self) -> impl Iterator<Item = &RoomLabel> {
        self.entries.iter().map(|e| &e.label)
    }

    /// Best-matching label and its cosine score. Ties go to the earlier
    /// prompt.
    pub fn classify(&self, embedding: &[f32]) -> Result<(RoomLabel, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in self.entries.iter().enumerate() {
            let s = cosine_similarity(embedding, self.text.row(e.row)?)?;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        let (i, s) = best.ok_or(Error::EmptyPrompts)?;
        Ok((self.entries[i].label.clone(), s))
    }
}

pub fn classify(bank: &EmbeddingBank, row: usize, prompts: &PromptBank) -> Result<(RoomLabel, f64)> {
    prompts.classify(bank.row(row)?)
}

/// One synchronous label-propagation pass.
///
/// Every node looks at the labels of its `count` nearest neighbours as they
/// were before the pass. If one label strictly outnumbers every other and
/// differs from the node's own, the node takes it. The returned map covers
/// every node.
pub fn refine_pass(
    snapshot: &GraphSnapshot,
    count: usize,
    metric: NeighborMetric,
) -> Result<BTreeMap<NodeId, crate::semantics::RoomLabel>> {
    for kf in snapshot.keyframes() {
        if kf.label.is_none() {
            return Err(Error::Unlabeled(kf.id));
        }
    }
    let mut out = BTreeMap::new();
    for kf in snapshot.keyframes() {
        let current = kf.label.as_ref().expect("checked above");
        let neighbors = snapshot.neighbors(kf.id, count.max(1), metric)?;
        let mut tally: BTreeMap<&RoomLabel, usize> = BTreeMap::new();
        for n in &neighbors {
            *tally.entry(snapshot.label(*n)?).or_default() += 1;
        }
        let new = unique_mode(&tally).unwrap_or(current);
        out.insert(kf.id, new.clone());
    }
    Ok(out)
}

fn unique_mode<'a>(tally: &BTreeMap<&'a RoomLabel, usize>) -> Option<&'a RoomLabel> {
    let top = *tally.values().max()?;
    let mut winners = tally.iter().filter(|(_, &c)| c == top);
    let (label, _) = winners.next()?;
    if winners.next().is_some() {
        None
    } else {
        Some(label)
    }
}

/// Nodes inside any run of `window` consecutive keyframes whose net height
/// change exceeds `dz_threshold`.
pub fn detect_stairs(snapshot: &GraphSnapshot, window: usize, dz_threshold: f64) -> BTreeSet<NodeId> {
    let kfs = snapshot.keyframes();
    let mut flagged = BTreeSet::new();
    if window < 2 || kfs.len() < window {
        return flagged;
    }
    for w in kfs.windows(window) {
        let dz = w[window - 1].pose.translation.z - w[0].pose.translation.z;
        if dz.abs() > dz_threshold {
            flagged.extend(w.iter().map(|k| k.id));
        }
    }
    flagged
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphSnapshot, Keyframe};
    use crate::se3::SE3Pose;
    use proptest::prelude::*;

    fn label(s: &str) -> RoomLabel {
        RoomLabel::new(s).unwrap()
    }

    fn bank(rows: &[&[f32]]) -> EmbeddingBank {
        EmbeddingBank::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn prompts(labels: &[&str], rows: &[&[f32]]) -> PromptBank {
        let entries = labels
            .iter()
            .enumerate()
            .map(|(i, l)| PromptEntry {
                label: label(l),
                prompt: format!("a photo of a {l}"),
                row: i,
            })
            .collect();
        PromptBank::new(entries, bank(rows)).unwrap()
    }

    #[test]
    fn label_validation() {
        assert!(RoomLabel::new("living room").is_ok());
        assert!(RoomLabel::new("").is_err());
        assert!(RoomLabel::new("Office").is_err());
        assert!(RoomLabel::new(" office").is_err());
        assert!(RoomLabel::stairs().is_stairs());
    }

    #[test]
    fn cosine_examples() {
        let v = [0.6f32, 0.8];
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[0.6, 0.8], &[1.0, 0.0]).unwrap() - 0.6).abs() < 1e-7);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(Error::DimensionMismatch(1, 2))
        ));
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn classify_exact_match() {
        let p = prompts(&["office", "kitchen"], &[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        let (l, s) = p.classify(&[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(l, label("kitchen"));
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn classify_singleton() {
        let p = prompts(&["garden"], &[&[1.0, 0.0]]);
        assert_eq!(p.classify(&[-1.0, 0.1]).unwrap().0, label("garden"));
    }

    #[test]
    fn classify_synthetic_scores() {
        // unit query q with q·office = 0.9 and q·kitchen = 0.3
        let office = [1.0f32, 0.0, 0.0];
        let kitchen = [0.0f32, 1.0, 0.0];
        let rest = (1.0f64 - 0.81 - 0.09).sqrt() as f32;
        let q = [0.9f32, 0.3, rest];
        let p = prompts(&["office", "kitchen"], &[&office, &kitchen]);
        let (l, s) = p.classify(&q).unwrap();
        // brute-force max over the bank
        let brute = [&office, &kitchen]
            .iter()
            .map(|r| cosine_similarity(&q, *r).unwrap())
            .fold(f64::MIN, f64::max);
        assert_eq!(l, label("office"));
        assert!((s - 0.9).abs() < 1e-6);
        assert_eq!(s, brute);
    }

    #[test]
    fn classify_ties_first_prompt_wins() {
        let p = prompts(&["a", "b"], &[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(p.classify(&[1.0, 1.0]).unwrap().0, label("a"));
    }

    #[test]
    fn prompt_bank_validation() {
        let b = bank(&[&[1.0, 0.0]]);
        assert!(matches!(PromptBank::new(vec![], b.clone()), Err(Error::EmptyPrompts)));
        let dup = vec![
            PromptEntry { label: label("a"), prompt: "x".into(), row: 0 },
            PromptEntry { label: label("a"), prompt: "y".into(), row: 0 },
        ];
        assert!(matches!(PromptBank::new(dup, b.clone()), Err(Error::DuplicateLabel(_))));
        let bad = vec![PromptEntry { label: label("a"), prompt: "x".into(), row: 3 }];
        assert!(matches!(PromptBank::new(bad, b), Err(Error::InvalidEmbeddingRow { .. })));
    }

    #[test]
    fn bank_normalizes_and_flags() {
        let (b, flagged) = EmbeddingBank::normalized(2, vec![0.3, 0.4, 1.0, 0.0]).unwrap();
        assert_eq!(flagged, vec![0]);
        assert!((norm(b.row(0).unwrap()) - 1.0).abs() < 1e-6);
        assert_eq!(b.row(1).unwrap(), &[1.0, 0.0]);
        assert!(matches!(
            EmbeddingBank::normalized(2, vec![0.0, 0.0]),
            Err(Error::ZeroVector)
        ));
    }

    /// Snapshot of nodes at the given positions carrying the given labels.
    fn snap(points: &[[f64; 3]], labels: &[&str]) -> GraphSnapshot {
        let kfs = points
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (p, l))| Keyframe {
                id: i,
                stamp: i as f64,
                pose: SE3Pose::from_translation(p[0], p[1], p[2]),
                embedding_row: 0,
                features: None,
                label: Some(label(l)),
                label_score: 0.0,
            })
            .collect();
        GraphSnapshot::from_parts(kfs, vec![], 1).unwrap()
    }

    #[test]
    fn refine_unanimous_is_fixed_point() {
        let s = snap(&[[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]], &["a", "a", "a"]);
        let out = refine_pass(&s, 5, NeighborMetric::Euclidean).unwrap();
        assert!(out.values().all(|l| l.as_str() == "a"));
    }

    #[test]
    fn refine_majority_flips() {
        // node 0 at the origin; five neighbours at increasing distance
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.1, 0.0], [-1.2, 0.0, 0.0], [0.0, -1.3, 0.0], [0.0, 0.0, 1.4], [9.0, 9.0, 9.0]];
        let s = snap(&pts, &["a", "b", "b", "b", "a", "a", "a"]);
        let out = refine_pass(&s, 5, NeighborMetric::Euclidean).unwrap();
        assert_eq!(out[&0], label("b"));
    }

    #[test]
    fn refine_keeps_on_tie() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.1, 0.0], [-1.2, 0.0, 0.0], [0.0, -1.3, 0.0], [9.0, 9.0, 9.0]];
        let s = snap(&pts, &["a", "b", "b", "a", "a", "b"]);
        let out = refine_pass(&s, 4, NeighborMetric::Euclidean).unwrap();
        assert_eq!(out[&0], label("a"));
    }

    #[test]
    fn refine_is_synchronous() {
        // on a line a,b,b with C=1: node 0 reads node 1 (b), node 1 reads
        // node 0 (a, the lower id at equal distance) using pre-pass labels
        let s = snap(&[[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]], &["a", "b", "b"]);
        let out = refine_pass(&s, 1, NeighborMetric::Euclidean).unwrap();
        assert_eq!(out[&0], label("b"));
        assert_eq!(out[&1], label("a"));
        assert_eq!(out[&2], label("b"));
    }

    #[test]
    fn refine_requires_labels() {
        let mut s = snap(&[[0.0; 3], [1.0, 0.0, 0.0]], &["a", "a"]);
        let mut kfs = s.keyframes().to_vec();
        kfs[1].label = None;
        s = GraphSnapshot::from_parts(kfs, vec![], 1).unwrap();
        assert!(matches!(
            refine_pass(&s, 2, NeighborMetric::Euclidean),
            Err(Error::Unlabeled(1))
        ));
    }

    fn ramp(zs: &[f64]) -> GraphSnapshot {
        let pts: Vec<[f64; 3]> = zs.iter().enumerate().map(|(i, &z)| [i as f64 * 0.5, 0.0, z]).collect();
        let labels = vec!["a"; zs.len()];
        snap(&pts, &labels)
    }

    #[test]
    fn stairs_flat_is_empty() {
        assert!(detect_stairs(&ramp(&[0.0; 12]), 5, 0.5).is_empty());
    }

    #[test]
    fn stairs_rising_flags_all() {
        let zs: Vec<f64> = (0..10).map(|i| 1.2 * i as f64 / 9.0).collect();
        let flagged = detect_stairs(&ramp(&zs), 5, 0.5);
        assert_eq!(flagged, (0..10).collect());
    }

    #[test]
    fn stairs_small_step_ignored() {
        let zs = [0.0, 0.0, 0.0, 0.2, 0.2, 0.2, 0.2, 0.2];
        assert!(detect_stairs(&ramp(&zs), 5, 0.5).is_empty());
    }

    proptest! {
        #[test]
        fn cosine_scale_invariance(
            a in prop::collection::vec(-1.0f32..1.0, 8),
            b in prop::collection::vec(-1.0f32..1.0, 8),
            s in 0.01f32..100.0,
            t in 0.01f32..100.0,
        ) {
            prop_assume!(norm(&a) > 1e-3 && norm(&b) > 1e-3);
            let sa: Vec<f32> = a.iter().map(|x| x * s).collect();
            let tb: Vec<f32> = b.iter().map(|x| x * t).collect();
            let c0 = cosine_similarity(&a, &b).unwrap();
            let c1 = cosine_similarity(&sa, &tb).unwrap();
            prop_assert!((c0 - c1).abs() < 1e-6);
            prop_assert!((c0 - cosine_similarity(&b, &a).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn stairs_threshold_monotone(
            zs in prop::collection::vec(-2.0f64..2.0, 2..40),
            lo in 0.0f64..1.5,
            extra in 0.0f64..1.5,
            window in 2usize..8,
        ) {
            let s = ramp(&zs);
            let low = detect_stairs(&s, window, lo);
            let high = detect_stairs(&s, window, lo + extra);
            prop_assert!(high.is_subset(&low));
        }
    }
}

//! Loop-closure proposal inside same-label room clusters and geometric
//! verification by RANSAC PnP.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clustering::RoomCluster;
use crate::error::{Error, Result};
use crate::graph::{EdgeKind, GraphEdge, GraphSnapshot, Keyframe, LocalFeature, NodeId, PoseGraph};
use crate::pnp::{body_from_camera, ransac_pnp, CameraIntrinsics, RansacOptions};
use crate::se3::SE3Pose;
use crate::semantics::{cosine_similarity, EmbeddingBank};

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    /// Candidates kept after cosine ranking; 0 keeps the whole cluster.
    pub max_candidates: usize,
    /// Candidates must precede the query by more than this many keyframes.
    pub min_loop_gap: usize,
    pub pnp_min_inliers: usize,
    /// Upper bound on the mean reprojection error of the inlier set.
    pub pnp_reproj_px: f64,
    /// Per-correspondence inlier threshold used inside RANSAC.
    pub pnp_inlier_px: f64,
    pub pnp_ransac_iters: usize,
    pub match_max_hamming: u32,
    pub loop_info_weight: f64,
    /// Verified loops implying a larger displacement than this are dropped.
    pub loop_max_translation_m: f64,
    pub loop_max_rotation_rad: f64,
    pub seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            max_candidates: 5,
            min_loop_gap: 30,
            pnp_min_inliers: 12,
            pnp_reproj_px: 2.0,
            pnp_inlier_px: 4.0,
            pnp_ransac_iters: 300,
            match_max_hamming: 64,
            loop_info_weight: 1.0,
            loop_max_translation_m: 1.0,
            loop_max_rotation_rad: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopCandidate {
    pub query_id: NodeId,
    pub candidate_id: NodeId,
    pub cosine: f64,
    pub cluster_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    /// `T_query⁻¹ · T_candidate` in body frames.
    pub rel_pose: SE3Pose,
    pub inliers: usize,
    pub matches: usize,
    pub mean_reproj_px: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopResult {
    pub candidate: LoopCandidate,
    pub rel_pose: SE3Pose,
    pub inliers: usize,
}

/// Candidates from the same-label cluster nearest the query, ranked by
/// embedding cosine (descending, then id ascending).
pub fn propose(
    query: NodeId,
    snapshot: &GraphSnapshot,
    clusters: &[RoomCluster],
    bank: &EmbeddingBank,
    cfg: &LoopConfig,
) -> Result<Vec<LoopCandidate>> {
    let kf = snapshot.node(query)?;
    let label = snapshot.label(query)?;
    let eligible = |m: NodeId| m != query && m + cfg.min_loop_gap < query;

    let nearest = clusters
        .iter()
        .filter(|c| &c.label == label && c.members.iter().any(|&m| eligible(m)))
        .map(|c| ((c.mean_pos - kf.position()).norm(), c))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)));
    let Some((_, cluster)) = nearest else {
        return Ok(Vec::new());
    };

    let q = bank.row(kf.embedding_row)?;
    let mut out = Vec::new();
    for &m in cluster.members.iter().filter(|&&m| eligible(m)) {
        let row = bank.row(snapshot.node(m)?.embedding_row)?;
        out.push(LoopCandidate {
            query_id: query,
            candidate_id: m,
            cosine: cosine_similarity(q, row)?,
            cluster_id: cluster.id,
        });
    }
    out.sort_by(|a, b| b.cosine.total_cmp(&a.cosine).then(a.candidate_id.cmp(&b.candidate_id)));
    if cfg.max_candidates > 0 {
        out.truncate(cfg.max_candidates);
    }
    Ok(out)
}

fn hamming(a: &[u8], b: &[u8]) -> u32 {
    if a.len() != b.len() {
        return u32::MAX;
    }
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

fn best_match(d: &[u8], pool: &[LocalFeature], max: u32) -> Option<usize> {
    let mut best: Option<(u32, usize)> = None;
    for (i, f) in pool.iter().enumerate() {
        let h = hamming(d, &f.descriptor);
        if h <= max && best.is_none_or(|(bh, _)| h < bh) {
            best = Some((h, i));
        }
    }
    best.map(|(_, i)| i)
}

/// Mutual nearest neighbours under Hamming distance, as
/// `(query index, candidate index)` pairs.
pub fn match_features(query: &[LocalFeature], candidate: &[LocalFeature], max_hamming: u32) -> Vec<(usize, usize)> {
    let back: Vec<Option<usize>> = candidate
        .iter()
        .map(|f| best_match(&f.descriptor, query, max_hamming))
        .collect();
    query
        .iter()
        .enumerate()
        .filter_map(|(qi, f)| {
            let ci = best_match(&f.descriptor, candidate, max_hamming)?;
            (back[ci] == Some(qi)).then_some((qi, ci))
        })
        .collect()
}

fn features(kf: &Keyframe) -> Result<&[LocalFeature]> {
    kf.features.as_deref().ok_or(Error::MissingFeatures(kf.id))
}

fn rng_for(seed: u64, query: NodeId, candidate: NodeId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((query as u64) << 32) ^ candidate as u64);
    rng
}

/// Estimates the candidate pose relative to the query from the candidate's
/// 3-D points and the query's pixels. `Ok(None)` is a verification
/// failure; a keyframe without features is an error.
pub fn verify_pnp(
    query: &Keyframe,
    candidate: &Keyframe,
    intrinsics: &CameraIntrinsics,
    cfg: &LoopConfig,
) -> Result<Option<Verification>> {
    let qf = features(query)?;
    let cf = features(candidate)?;
    let pairs = match_features(qf, cf, cfg.match_max_hamming);
    let points: Vec<_> = pairs.iter().map(|&(_, c)| cf[c].point_cam).collect();
    let pixels: Vec<_> = pairs.iter().map(|&(q, _)| qf[q].pixel).collect();
    let opts = RansacOptions {
        iterations: cfg.pnp_ransac_iters,
        inlier_px: cfg.pnp_inlier_px,
    };
    let mut rng = rng_for(cfg.seed, query.id, candidate.id);
    let Some(sol) = ransac_pnp(&points, &pixels, intrinsics, &opts, &mut rng) else {
        return Ok(None);
    };
    if sol.inliers.len() < cfg.pnp_min_inliers || sol.mean_inlier_error > cfg.pnp_reproj_px {
        return Ok(None);
    }
    let b = body_from_camera();
    Ok(Some(Verification {
        rel_pose: b.compose(&sol.pose).compose(&b.inverse()),
        inliers: sol.inliers.len(),
        matches: pairs.len(),
        mean_reproj_px: sol.mean_inlier_error,
    }))
}

fn plausible(rel: &SE3Pose, cfg: &LoopConfig) -> bool {
    let origin = SE3Pose::identity();
    rel.translation.norm() <= cfg.loop_max_translation_m && origin.rotation_angle_to(rel) <= cfg.loop_max_rotation_rad
}

/// Proposes, verifies, and inserts a Loop edge for every accepted
/// candidate. Candidates lacking features are skipped.
#[allow(clippy::too_many_arguments)]
pub fn close_loops(
    query: NodeId,
    snapshot: &GraphSnapshot,
    clusters: &[RoomCluster],
    graph: &mut PoseGraph,
    bank: &EmbeddingBank,
    intrinsics: &CameraIntrinsics,
    cfg: &LoopConfig,
) -> Result<Vec<LoopResult>> {
    let candidates = propose(query, snapshot, clusters, bank, cfg)?;
    let qkf = snapshot.node(query)?;
    let mut accepted = Vec::new();
    for cand in candidates {
        let ckf = snapshot.node(cand.candidate_id)?;
        let verified = match verify_pnp(qkf, ckf, intrinsics, cfg) {
            Ok(v) => v,
            Err(Error::MissingFeatures(id)) => {
                log::debug!("loop {query}->{}: node {id} has no features", cand.candidate_id);
                None
            }
            Err(e) => return Err(e),
        };
        let Some(v) = verified.filter(|v| plausible(&v.rel_pose, cfg)) else {
            continue;
        };
        graph.add_edge(GraphEdge {
            from: query,
            to: cand.candidate_id,
            kind: EdgeKind::Loop,
            rel_pose: v.rel_pose,
            info_weight: cfg.loop_info_weight,
        })?;
        accepted.push(LoopResult {
            candidate: cand,
            rel_pose: v.rel_pose,
            inliers: v.inliers,
        });
    }
    Ok(accepted)
}

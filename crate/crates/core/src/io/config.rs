//! Pipeline configuration: a flat TOML table. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterConfig;
use crate::error::{Error, Result};
use crate::graph::{GraphConfig, NeighborMetric};
use crate::loopclosure::LoopConfig;
use crate::optimizer::{DcsParams, OptimizeOptions};
use crate::semantics::RoomLabel;

pub const SEED_ENV: &str = "LEXIS_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub keyframe_gate_m: f64,
    pub odom_info_weight: f64,
    /// Neighbours consulted per node in a refinement pass.
    #[serde(rename = "C")]
    pub refine_neighbors: usize,
    /// Keyframes between refinement passes.
    #[serde(rename = "K")]
    pub refine_every: usize,
    pub neighbor_metric: NeighborMetric,
    pub stair_window: usize,
    pub stair_dz_m: f64,
    pub cluster_radius_m: f64,
    /// Labels treated as space between rooms when merging clusters. This is
    /// one reading of "intermediate space"; adjust per label set.
    pub connector_labels: Vec<RoomLabel>,
    pub floor_z_tol_m: f64,
    pub max_candidates: usize,
    pub min_loop_gap: usize,
    pub pnp_min_inliers: usize,
    pub pnp_reproj_px: f64,
    pub pnp_inlier_px: f64,
    pub pnp_ransac_iters: usize,
    pub match_max_hamming: u32,
    pub loop_info_weight: f64,
    pub loop_max_translation_m: f64,
    pub loop_max_rotation_rad: f64,
    pub phi: f64,
    pub opt_tol: f64,
    pub opt_max_iters: usize,
    pub opt_initial_lambda: f64,
    pub opt_max_lambda: f64,
    pub unit_weights: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let g = GraphConfig::default();
        let c = ClusterConfig::default();
        let l = LoopConfig::default();
        let o = OptimizeOptions::default();
        Self {
            keyframe_gate_m: g.keyframe_gate_m,
            odom_info_weight: g.odom_info_weight,
            refine_neighbors: 5,
            refine_every: 10,
            neighbor_metric: NeighborMetric::Euclidean,
            stair_window: 5,
            stair_dz_m: 0.5,
            cluster_radius_m: c.cluster_radius_m,
            connector_labels: c.connector_labels,
            floor_z_tol_m: c.floor_z_tol_m,
            max_candidates: l.max_candidates,
            min_loop_gap: l.min_loop_gap,
            pnp_min_inliers: l.pnp_min_inliers,
            pnp_reproj_px: l.pnp_reproj_px,
            pnp_inlier_px: l.pnp_inlier_px,
            pnp_ransac_iters: l.pnp_ransac_iters,
            match_max_hamming: l.match_max_hamming,
            loop_info_weight: l.loop_info_weight,
            loop_max_translation_m: l.loop_max_translation_m,
            loop_max_rotation_rad: l.loop_max_rotation_rad,
            phi: DcsParams::default().phi,
            opt_tol: o.tol,
            opt_max_iters: o.max_iters,
            opt_initial_lambda: o.initial_lambda,
            opt_max_lambda: o.max_lambda,
            unit_weights: false,
            seed: l.seed,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_owned()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("serializable")
    }

    /// Replaces the seed with `LEXIS_SEED` when set.
    pub fn with_env_seed(mut self) -> Result<Self> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v} is not an unsigned integer")))?;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, msg: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(msg.to_owned()))
            }
        }
        let pos = |v: f64| v > 0.0 && v.is_finite();
        check(pos(self.keyframe_gate_m), "keyframe_gate_m must be positive")?;
        check(pos(self.odom_info_weight), "odom_info_weight must be positive")?;
        check(self.refine_neighbors >= 1, "C must be at least 1")?;
        check(self.refine_every >= 1, "K must be at least 1")?;
        check(self.stair_window >= 2, "stair_window must be at least 2")?;
        check(pos(self.stair_dz_m), "stair_dz_m must be positive")?;
        check(pos(self.cluster_radius_m), "cluster_radius_m must be positive")?;
        check(self.floor_z_tol_m >= 0.0, "floor_z_tol_m must be non-negative")?;
        check(self.pnp_min_inliers >= 4, "pnp_min_inliers must be at least 4")?;
        check(pos(self.pnp_reproj_px), "pnp_reproj_px must be positive")?;
        check(pos(self.pnp_inlier_px), "pnp_inlier_px must be positive")?;
        check(self.pnp_ransac_iters >= 1, "pnp_ransac_iters must be at least 1")?;
        check(pos(self.loop_info_weight), "loop_info_weight must be positive")?;
        check(pos(self.loop_max_translation_m), "loop_max_translation_m must be positive")?;
        check(pos(self.loop_max_rotation_rad), "loop_max_rotation_rad must be positive")?;
        check(pos(self.phi), "phi must be positive")?;
        check(pos(self.opt_tol), "opt_tol must be positive")?;
        check(self.opt_max_iters >= 1, "opt_max_iters must be at least 1")?;
        check(pos(self.opt_initial_lambda), "opt_initial_lambda must be positive")?;
        check(self.opt_max_lambda >= self.opt_initial_lambda, "opt_max_lambda must be at least opt_initial_lambda")
    }

    pub fn graph(&self) -> GraphConfig {
        GraphConfig { keyframe_gate_m: self.keyframe_gate_m, odom_info_weight: self.odom_info_weight }
    }

    pub fn clusters(&self) -> ClusterConfig {
        ClusterConfig {
            cluster_radius_m: self.cluster_radius_m,
            connector_labels: self.connector_labels.clone(),
            floor_z_tol_m: self.floor_z_tol_m,
        }
    }

    pub fn loops(&self) -> LoopConfig {
        LoopConfig {
            max_candidates: self.max_candidates,
            min_loop_gap: self.min_loop_gap,
            pnp_min_inliers: self.pnp_min_inliers,
            pnp_reproj_px: self.pnp_reproj_px,
            pnp_inlier_px: self.pnp_inlier_px,
            pnp_ransac_iters: self.pnp_ransac_iters,
            match_max_hamming: self.match_max_hamming,
            loop_info_weight: self.loop_info_weight,
            loop_max_translation_m: self.loop_max_translation_m,
            loop_max_rotation_rad: self.loop_max_rotation_rad,
            seed: self.seed,
        }
    }

    pub fn dcs(&self) -> Result<DcsParams> {
        DcsParams::new(self.phi)
    }

    pub fn optimize(&self) -> OptimizeOptions {
        OptimizeOptions {
            tol: self.opt_tol,
            max_iters: self.opt_max_iters,
            initial_lambda: self.opt_initial_lambda,
            max_lambda: self.opt_max_lambda,
        }
    }
}

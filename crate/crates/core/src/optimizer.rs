//! Pose graph optimization: odometry residuals in plain least squares,
//! loop-closure residuals scaled by Dynamic Covariance Scaling, solved with
//! damped Gauss-Newton on SE(3).

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};

use crate::error::{Error, Result};
use crate::graph::{EdgeKind, GraphEdge, GraphSnapshot, NodeId};
use crate::se3::{se3_right_jacobian_inv, SE3Pose};

#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub from: NodeId,
    pub to: NodeId,
    /// `[translation, rotation]` of `log(Z⁻¹ · T_from⁻¹ · T_to)`.
    pub value: Vector6<f64>,
    /// `info_weight · ‖value‖²`
    pub chi2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcsParams {
    pub phi: f64,
}

impl DcsParams {
    pub fn new(phi: f64) -> Result<Self> {
        if !(phi > 0.0) || !phi.is_finite() {
            return Err(Error::Config(format!("phi must be positive, got {phi}")));
        }
        Ok(Self { phi })
    }
}

impl Default for DcsParams {
    fn default() -> Self {
        Self { phi: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub initial_lambda: f64,
    pub max_lambda: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 100,
            initial_lambda: 1e-4,
            max_lambda: 1e12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimized {
    pub poses: BTreeMap<NodeId, SE3Pose>,
    pub iterations: usize,
    /// Robust cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

impl Optimized {
    pub fn final_cost(&self) -> f64 {
        *self.cost_history.last().expect("never empty")
    }
}

/// `s = min(1, 2φ / (φ + χ²))`
pub fn dcs_scale(chi2: f64, params: &DcsParams) -> Result<f64> {
    if chi2 < 0.0 || chi2.is_nan() {
        return Err(Error::NegativeChi2(chi2));
    }
    Ok((2.0 * params.phi / (params.phi + chi2)).min(1.0))
}

pub fn edge_residual(edge: &GraphEdge, poses: &BTreeMap<NodeId, SE3Pose>) -> Result<Residual> {
    let ti = poses.get(&edge.from).ok_or(Error::UnknownNode(edge.from))?;
    let tj = poses.get(&edge.to).ok_or(Error::UnknownNode(edge.to))?;
    let value = residual_value(&edge.rel_pose, ti, tj);
    Ok(Residual {
        from: edge.from,
        to: edge.to,
        value,
        chi2: edge.info_weight * value.norm_squared(),
    })
}

fn residual_value(measured: &SE3Pose, ti: &SE3Pose, tj: &SE3Pose) -> Vector6<f64> {
    measured.inverse().compose(&ti.between(tj)).log()
}

/// Residual and its Jacobians with respect to right perturbations of the
/// two endpoint poses.
pub fn residual_jacobians(
    measured: &SE3Pose,
    ti: &SE3Pose,
    tj: &SE3Pose,
) -> (Vector6<f64>, Matrix6<f64>, Matrix6<f64>) {
    let r = residual_value(measured, ti, tj);
    let jr_inv = se3_right_jacobian_inv(&r);
    let jj = jr_inv;
    let ji = -(jr_inv * tj.between(ti).adjoint());
    (r, ji, jj)
}

/// Robustified cost: odometry terms plain, loop terms `s² · χ²`.
pub fn robust_cost(edges: &[GraphEdge], poses: &[SE3Pose], params: &DcsParams) -> f64 {
    edges
        .iter()
        .map(|e| {
            let r = residual_value(&e.rel_pose, &poses[e.from], &poses[e.to]);
            let chi2 = e.info_weight * r.norm_squared();
            match e.kind {
                EdgeKind::Odometry => chi2,
                EdgeKind::Loop => {
                    let s = dcs_scale(chi2, params).unwrap_or(1.0);
                    s * s * chi2
                }
            }
        })
        .sum()
}

fn check_connected(n: usize, edges: &[GraphEdge]) -> Result<()> {
    let mut adj = vec![Vec::new(); n];
    for e in edges {
        adj[e.from].push(e.to);
        adj[e.to].push(e.from);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    match seen.iter().position(|s| !s) {
        Some(v) => Err(Error::Disconnected(v)),
        None => Ok(()),
    }
}

/// Minimizes the robust cost over all poses but the first, which anchors
/// the gauge.
pub fn optimize(snapshot: &GraphSnapshot, params: &DcsParams, opts: &OptimizeOptions) -> Result<Optimized> {
    let n = snapshot.len();
    let edges = snapshot.edges();
    let mut poses: Vec<SE3Pose> = snapshot.keyframes().iter().map(|k| k.pose).collect();
    let mut cost = robust_cost(edges, &poses, params);
    let mut history = vec![cost];
    let finish = |poses: Vec<SE3Pose>, iterations, history| Optimized {
        poses: poses.into_iter().enumerate().collect(),
        iterations,
        cost_history: history,
    };
    if n <= 1 {
        return Ok(finish(poses, 0, history));
    }
    check_connected(n, edges)?;

    let dim = 6 * (n - 1);
    let mut lambda = opts.initial_lambda;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        let (h, b) = normal_equations(edges, &poses, params, dim)?;
        loop {
            let mut damped = h.clone();
            for k in 0..dim {
                damped[(k, k)] += lambda;
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                if lambda > opts.max_lambda {
                    return Err(Error::Singular(lambda));
                }
                continue;
            };
            let delta = chol.solve(&(-&b));
            let step = delta.amax();
            let candidate: Vec<SE3Pose> = poses
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    if i == 0 {
                        *p
                    } else {
                        p.retract(&delta.fixed_rows::<6>(6 * (i - 1)).into_owned())
                    }
                })
                .collect();
            let new_cost = robust_cost(edges, &candidate, params);
            if new_cost <= cost {
                poses = candidate;
                cost = new_cost;
                history.push(cost);
                lambda = (lambda * 0.5).max(1e-12);
                if step < opts.tol {
                    return Ok(finish(poses, iterations, history));
                }
                break;
            }
            lambda *= 10.0;
            if step < opts.tol || lambda > opts.max_lambda {
                // no descent left at any damping
                return Ok(finish(poses, iterations, history));
            }
        }
    }
    Ok(finish(poses, iterations, history))
}

fn normal_equations(
    edges: &[GraphEdge],
    poses: &[SE3Pose],
    params: &DcsParams,
    dim: usize,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    let mut b = DVector::<f64>::zeros(dim);
    for e in edges {
        let (r, ji, jj) = residual_jacobians(&e.rel_pose, &poses[e.from], &poses[e.to]);
        let chi2 = e.info_weight * r.norm_squared();
        let w = match e.kind {
            EdgeKind::Odometry => e.info_weight,
            EdgeKind::Loop => {
                let s = dcs_scale(chi2, params)?;
                e.info_weight * s * s
            }
        };
        let blocks = [(e.from, ji), (e.to, jj)];
        for &(a, ja) in &blocks {
            if a == 0 {
                continue;
            }
            let ra = 6 * (a - 1);
            let g = ja.transpose() * r * w;
            let mut bs = b.fixed_rows_mut::<6>(ra);
            bs += g;
            for &(c, jc) in &blocks {
                if c == 0 {
                    continue;
                }
                let rc = 6 * (c - 1);
                let blk = ja.transpose() * jc * w;
                let mut hs = h.fixed_view_mut::<6, 6>(ra, rc);
                hs += blk;
            }
        }
    }
    Ok((h, b))
}

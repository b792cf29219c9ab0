//! Pinhole camera model and robust Perspective-n-Point estimation.
//!
//! Poses estimated here map points from the reference (model) frame into
//! the camera frame: `X_cam = R X_ref + t`.

use nalgebra::{Matrix2x6, Matrix3, Matrix6, Unit, UnitQuaternion, Vector2, Vector3, Vector6};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::{skew, SE3Pose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx.is_finite()
            && self.cy.is_finite()
            && self.width > 0
            && self.height > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidBundle(format!("invalid camera intrinsics {self:?}")))
        }
    }

    pub fn contains(&self, pixel: &[f64; 2]) -> bool {
        pixel[0] >= 0.0
            && pixel[1] >= 0.0
            && pixel[0] <= self.width as f64
            && pixel[1] <= self.height as f64
    }

    /// Pixel of a camera-frame point, or `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<[f64; 2]> {
        if p.z <= 0.0 {
            return None;
        }
        Some([self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy])
    }

    pub fn bearing(&self, pixel: &[f64; 2]) -> Unit<Vector3<f64>> {
        Unit::new_normalize(Vector3::new(
            (pixel[0] - self.cx) / self.fx,
            (pixel[1] - self.cy) / self.fy,
            1.0,
        ))
    }

    fn reprojection_error(&self, pose: &SE3Pose, point: &Vector3<f64>, pixel: &[f64; 2]) -> f64 {
        match self.project(&pose.transform_point(point)) {
            Some(p) => ((p[0] - pixel[0]).powi(2) + (p[1] - pixel[1]).powi(2)).sqrt(),
            None => f64::INFINITY,
        }
    }
}

/// Rotation taking camera optical axes (x right, y down, z forward) into a
/// body frame with x forward, y left, z up.
pub fn body_from_camera() -> SE3Pose {
    let r = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    SE3Pose::new(
        Vector3::zeros(),
        UnitQuaternion::from_matrix(&r),
    )
}

// ---------------------------------------------------------------------------
// polynomial helpers

fn poly_eval(c: &[f64], x: f64) -> f64 {
    // c[i] is the coefficient of x^i
    c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| a.get(i).copied().unwrap_or(0.0) + b.get(i).copied().unwrap_or(0.0))
        .collect()
}

fn poly_scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// Real roots of a low-degree polynomial, found by bracketing between the
/// critical points (roots of the derivative) and bisecting.
pub fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let mut c: Vec<f64> = coeffs.iter().map(|x| x / scale).collect();
    while c.len() > 1 && c.last().is_some_and(|a| a.abs() < 1e-14) {
        c.pop();
    }
    let deg = c.len() - 1;
    if deg == 0 {
        return Vec::new();
    }
    if deg == 1 {
        return vec![-c[0] / c[1]];
    }
    let lead = c[deg];
    let bound = 1.0 + c[..deg].iter().fold(0.0f64, |m, a| m.max((a / lead).abs()));
    let deriv: Vec<f64> = (1..=deg).map(|i| c[i] * i as f64).collect();
    let mut knots = vec![-bound];
    knots.extend(real_roots(&deriv).into_iter().filter(|x| x.abs() < bound));
    knots.push(bound);
    knots.sort_by(f64::total_cmp);

    let mut roots = Vec::new();
    for w in knots.windows(2) {
        let (mut lo, mut hi) = (w[0], w[1]);
        let (flo, fhi) = (poly_eval(&c, lo), poly_eval(&c, hi));
        if flo == 0.0 {
            roots.push(lo);
            continue;
        }
        if flo.signum() == fhi.signum() {
            continue;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let fm = poly_eval(&c, mid);
            if fm == 0.0 || hi - lo < 1e-15 * (1.0 + mid.abs()) {
                lo = mid;
                hi = mid;
                break;
            }
            if fm.signum() == flo.signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        roots.push(0.5 * (lo + hi));
    }
    if poly_eval(&c, bound) == 0.0 {
        roots.push(bound);
    }
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    roots
}

// ---------------------------------------------------------------------------
// minimal and least-squares solvers

/// Rigid transform with `dst ≈ R src + t` (Kabsch).
pub fn rigid_align(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> SE3Pose {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("requested");
    let v_t = svd.v_t.expect("requested");
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let rot = UnitQuaternion::from_matrix(&r);
    SE3Pose::new(cd - rot * cs, rot)
}

/// All geometrically valid poses explaining three bearing/point pairs
/// (Grunert's formulation: depth ratios from a quartic, then absolute
/// orientation).
pub fn p3p(bearings: &[Unit<Vector3<f64>>; 3], points: &[Vector3<f64>; 3]) -> Vec<SE3Pose> {
    let a2 = (points[1] - points[2]).norm_squared();
    let b2 = (points[0] - points[2]).norm_squared();
    let c2 = (points[0] - points[1]).norm_squared();
    if a2 < 1e-18 || b2 < 1e-18 || c2 < 1e-18 {
        return Vec::new();
    }
    let cos_a = bearings[1].dot(&bearings[2]);
    let cos_b = bearings[0].dot(&bearings[2]);
    let cos_g = bearings[0].dot(&bearings[1]);
    let k = (a2 - c2) / b2;

    // s2 = u s1, s3 = v s1 with u = N(v) / D(v); substitute into
    // u² - 2u cos_g + 1 - (c²/b²)(1 + v² - 2v cos_b) = 0 and clear D².
    let num = [1.0 + k, -2.0 * k * cos_b, k - 1.0];
    let den = [2.0 * cos_g, -2.0 * cos_a];
    let rest = [1.0 - c2 / b2, 2.0 * cos_b * c2 / b2, -c2 / b2];
    let quartic = poly_add(
        &poly_add(
            &poly_mul(&num, &num),
            &poly_scale(&poly_mul(&num, &den), -2.0 * cos_g),
        ),
        &poly_mul(&poly_mul(&den, &den), &rest),
    );

    let mut out = Vec::new();
    for v in real_roots(&quartic) {
        let d = poly_eval(&den, v);
        if d.abs() < 1e-12 {
            continue;
        }
        let u = poly_eval(&num, v) / d;
        let denom = 1.0 + u * u - 2.0 * u * cos_g;
        if !(denom > 0.0) {
            continue;
        }
        let s1 = (c2 / denom).sqrt();
        let (s2, s3) = (u * s1, v * s1);
        if s2 <= 0.0 || s3 <= 0.0 {
            continue;
        }
        let cam = [
            bearings[0].into_inner() * s1,
            bearings[1].into_inner() * s2,
            bearings[2].into_inner() * s3,
        ];
        out.push(rigid_align(points, &cam));
    }
    out
}

/// Gauss-Newton on total squared reprojection error, with left
/// perturbations `exp(δ) · T`.
pub fn refine_pose(
    mut pose: SE3Pose,
    points: &[Vector3<f64>],
    pixels: &[[f64; 2]],
    cam: &CameraIntrinsics,
    max_iters: usize,
) -> SE3Pose {
    let cost = |p: &SE3Pose| -> f64 {
        points
            .iter()
            .zip(pixels)
            .map(|(x, px)| cam.reprojection_error(p, x, px).powi(2))
            .sum()
    };
    let mut current = cost(&pose);
    let mut lambda = 1e-6;
    for _ in 0..max_iters {
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for (x, px) in points.iter().zip(pixels) {
            let xc = pose.transform_point(x);
            if xc.z <= 1e-9 {
                continue;
            }
            let iz = 1.0 / xc.z;
            let r = Vector2::new(
                cam.fx * xc.x * iz + cam.cx - px[0],
                cam.fy * xc.y * iz + cam.cy - px[1],
            );
            let dproj = nalgebra::Matrix2x3::new(
                cam.fx * iz,
                0.0,
                -cam.fx * xc.x * iz * iz,
                0.0,
                cam.fy * iz,
                -cam.fy * xc.y * iz * iz,
            );
            let mut dx = nalgebra::Matrix3x6::<f64>::zeros();
            dx.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
            dx.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(&xc)));
            let j: Matrix2x6<f64> = dproj * dx;
            h += j.transpose() * j;
            g += j.transpose() * r;
        }
        let mut accepted = false;
        while lambda < 1e8 {
            let damped = h + Matrix6::identity() * lambda;
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = chol.solve(&(-g));
            let candidate = SE3Pose::exp(&delta).compose(&pose);
            let c = cost(&candidate);
            if c <= current {
                let small = delta.amax() < 1e-12;
                pose = candidate;
                current = c;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = !small;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    pose
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacOptions {
    pub iterations: usize,
    /// Reprojection error bound for counting a correspondence as inlier.
    pub inlier_px: f64,
}

impl Default for RansacOptions {
    fn default() -> Self {
        Self {
            iterations: 300,
            inlier_px: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnpSolution {
    pub pose: SE3Pose,
    pub inliers: Vec<usize>,
    pub mean_inlier_error: f64,
}

fn score(pose: &SE3Pose, points: &[Vector3<f64>], pixels: &[[f64; 2]], cam: &CameraIntrinsics, thresh: f64) -> (Vec<usize>, f64) {
    let mut inliers = Vec::new();
    let mut total = 0.0;
    for (i, (x, px)) in points.iter().zip(pixels).enumerate() {
        let e = cam.reprojection_error(pose, x, px);
        if e <= thresh {
            inliers.push(i);
            total += e;
        }
    }
    (inliers, total)
}

/// RANSAC over P3P hypotheses followed by reprojection refinement on the
/// consensus set. `None` when fewer than four correspondences are given or
/// no hypothesis finds support.
pub fn ransac_pnp<R: Rng>(
    points: &[Vector3<f64>],
    pixels: &[[f64; 2]],
    cam: &CameraIntrinsics,
    opts: &RansacOptions,
    rng: &mut R,
) -> Option<PnpSolution> {
    let n = points.len();
    if n < 4 || pixels.len() != n {
        return None;
    }
    let bearings: Vec<Unit<Vector3<f64>>> = pixels.iter().map(|p| cam.bearing(p)).collect();
    let mut best: Option<(SE3Pose, Vec<usize>, f64)> = None;
    for _ in 0..opts.iterations {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let mut k = rng.random_range(0..n - 2);
        for m in [i.min(j), i.max(j)] {
            if k >= m {
                k += 1;
            }
        }
        let hyps = p3p(&[bearings[i], bearings[j], bearings[k]], &[points[i], points[j], points[k]]);
        for pose in hyps {
            let (inliers, err) = score(&pose, points, pixels, cam, opts.inlier_px);
            let better = match &best {
                None => inliers.len() >= 4,
                Some((_, bi, be)) => inliers.len() > bi.len() || (inliers.len() == bi.len() && err < *be),
            };
            if better {
                best = Some((pose, inliers, err));
            }
        }
    }
    let (mut pose, mut inliers, _) = best?;
    for _ in 0..3 {
        let pts: Vec<_> = inliers.iter().map(|&i| points[i]).collect();
        let pxs: Vec<_> = inliers.iter().map(|&i| pixels[i]).collect();
        pose = refine_pose(pose, &pts, &pxs, cam, 30);
        let (next, _) = score(&pose, points, pixels, cam, opts.inlier_px);
        if next == inliers || next.len() < 4 {
            break;
        }
        inliers = next;
    }
    let (inliers, total) = score(&pose, points, pixels, cam, opts.inlier_px);
    if inliers.is_empty() {
        return None;
    }
    let mean_inlier_error = total / inliers.len() as f64;
    Some(PnpSolution {
        pose,
        inliers,
        mean_inlier_error,
    })
}

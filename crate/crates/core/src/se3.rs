//! Rigid-body transforms and the SE(3) Lie-group machinery used by the
//! optimizer and the PnP refinement.
//!
//! Tangent vectors are ordered `[rho, theta]`: translational part first,
//! rotational (axis-angle) part second. Perturbations are applied on the
//! right, `T * exp(delta)`.

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix6, Quaternion, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};

/// Below this rotation angle the Jacobian coefficients switch to their
/// Taylor expansions.
const SMALL_ANGLE: f64 = 0.05;

/// A rigid transform: rotation followed by translation, `p' = R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SE3Pose {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl Default for SE3Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl SE3Pose {
    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    pub fn new(translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self {
            translation,
            rotation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vector3::new(x, y, z), UnitQuaternion::identity())
    }

    /// Planar convenience constructor: position plus heading about +z.
    pub fn from_xyz_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self::new(
            Vector3::new(x, y, z),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
        )
    }

    /// Builds a pose from `[x, y, z, qx, qy, qz, qw]`.
    ///
    /// The quaternion must already be unit length to within `1e-6`. It is
    /// renormalized unless already unit to within `1e-12`, so serialized
    /// poses read back bit-identical.
    pub fn from_array(a: [f64; 7]) -> Result<Self> {
        let q = Quaternion::new(a[6], a[3], a[4], a[5]);
        let norm = q.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidBundle(format!(
                "quaternion norm {norm} is not unit"
            )));
        }
        if a[..3].iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidBundle("non-finite translation".into()));
        }
        let rotation = if (norm - 1.0).abs() <= 1e-12 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::new_normalize(q)
        };
        Ok(Self::new(Vector3::new(a[0], a[1], a[2]), rotation))
    }

    /// `[x, y, z, qx, qy, qz, qw]`
    pub fn to_array(&self) -> [f64; 7] {
        let q = self.rotation.quaternion();
        [
            self.translation.x,
            self.translation.y,
            self.translation.z,
            q.i,
            q.j,
            q.k,
            q.w,
        ]
    }

    pub fn inverse(&self) -> Self {
        let rinv = self.rotation.inverse();
        Self::new(-(rinv * self.translation), rinv)
    }

    pub fn compose(&self, other: &SE3Pose) -> Self {
        Self::new(
            self.translation + self.rotation * other.translation,
            self.rotation * other.rotation,
        )
    }

    /// `self⁻¹ · other`: the pose of `other` expressed in the frame of `self`.
    pub fn between(&self, other: &SE3Pose) -> Self {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn translation_distance(&self, other: &SE3Pose) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Geodesic angle between the two orientations, in `[0, pi]`.
    pub fn rotation_angle_to(&self, other: &SE3Pose) -> f64 {
        so3_log(&(self.rotation.inverse() * other.rotation)).norm()
    }

    pub fn exp(xi: &Vector6<f64>) -> Self {
        let rho = xi.fixed_rows::<3>(0).into_owned();
        let phi = xi.fixed_rows::<3>(3).into_owned();
        Self::new(so3_left_jacobian(&phi) * rho, so3_exp(&phi))
    }

    pub fn log(&self) -> Vector6<f64> {
        let phi = so3_log(&self.rotation);
        let rho = so3_left_jacobian_inv(&phi) * self.translation;
        let mut out = Vector6::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&rho);
        out.fixed_rows_mut::<3>(3).copy_from(&phi);
        out
    }

    /// Adjoint for `[rho, theta]` ordering: `[[R, t^ R], [0, R]]`.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let r = self.rotation_matrix();
        let mut ad = Matrix6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        ad.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(skew(&self.translation) * r));
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
        ad
    }

    /// Right-multiplicative update `self · exp(delta)`.
    pub fn retract(&self, delta: &Vector6<f64>) -> Self {
        self.compose(&SE3Pose::exp(delta))
    }

    pub fn approx_eq(&self, other: &SE3Pose, tol: f64) -> bool {
        self.translation_distance(other) <= tol && self.rotation_angle_to(other) <= tol
    }
}

impl Mul for SE3Pose {
    type Output = SE3Pose;
    fn mul(self, rhs: SE3Pose) -> SE3Pose {
        self.compose(&rhs)
    }
}

impl<'a> Mul<&'a SE3Pose> for &'a SE3Pose {
    type Output = SE3Pose;
    fn mul(self, rhs: &SE3Pose) -> SE3Pose {
        self.compose(rhs)
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn so3_exp(phi: &Vector3<f64>) -> UnitQuaternion<f64> {
    let theta = phi.norm();
    let half = 0.5 * theta;
    let (w, k) = if theta < 1e-8 {
        (1.0, 0.5)
    } else {
        (half.cos(), half.sin() / theta)
    };
    UnitQuaternion::new_normalize(Quaternion::new(w, k * phi.x, k * phi.y, k * phi.z))
}

pub fn so3_log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let q = q.quaternion();
    // q and -q are the same rotation; pick the short way round
    let (w, v) = if q.w < 0.0 {
        (-q.w, -q.imag())
    } else {
        (q.w, q.imag())
    };
    let vn = v.norm();
    if vn < 1e-12 {
        return v * (2.0 / w);
    }
    let theta = 2.0 * vn.atan2(w);
    v * (theta / vn)
}

// Taylor-safe scalar coefficients of the SO(3)/SE(3) Jacobians.

fn coef_a(t: f64) -> f64 {
    // (1 - cos t) / t^2
    if t < SMALL_ANGLE {
        let t2 = t * t;
        0.5 - t2 / 24.0 + t2 * t2 / 720.0
    } else {
        (1.0 - t.cos()) / (t * t)
    }
}

fn coef_b(t: f64) -> f64 {
    // (t - sin t) / t^3
    if t < SMALL_ANGLE {
        let t2 = t * t;
        1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    } else {
        (t - t.sin()) / (t * t * t)
    }
}

fn coef_c(t: f64) -> f64 {
    // (t^2 + 2 cos t - 2) / (2 t^4)
    if t < SMALL_ANGLE {
        let t2 = t * t;
        1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0
    } else {
        (t * t + 2.0 * t.cos() - 2.0) / (2.0 * t.powi(4))
    }
}

fn coef_d(t: f64) -> f64 {
    // (2t - 3 sin t + t cos t) / (2 t^5)
    if t < SMALL_ANGLE {
        1.0 / 120.0 - t * t / 2520.0
    } else {
        (2.0 * t - 3.0 * t.sin() + t * t.cos()) / (2.0 * t.powi(5))
    }
}

fn coef_e(t: f64) -> f64 {
    // 1/t^2 - (1 + cos t) / (2 t sin t)
    if t < SMALL_ANGLE {
        let t2 = t * t;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        1.0 / (t * t) - (0.5 * t).cos() / (0.5 * t).sin() / (2.0 * t)
    }
}

pub fn so3_left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let t = phi.norm();
    let k = skew(phi);
    Matrix3::identity() + k * coef_a(t) + k * k * coef_b(t)
}

pub fn so3_left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let t = phi.norm();
    let k = skew(phi);
    Matrix3::identity() - k * 0.5 + k * k * coef_e(t)
}

pub fn so3_right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    so3_left_jacobian_inv(&(-phi))
}

/// The `Q` block of the SE(3) left Jacobian.
fn se3_q_left(rho: &Vector3<f64>, phi: &Vector3<f64>) -> Matrix3<f64> {
    let t = phi.norm();
    let p = skew(phi);
    let r = skew(rho);
    let pr = p * r;
    let rp = r * p;
    let prp = pr * p;
    r * 0.5
        + (pr + rp + prp) * coef_b(t)
        + (p * pr + rp * p - prp * 3.0) * coef_c(t)
        + (prp * p + p * prp) * coef_d(t)
}

/// Inverse of the right Jacobian of SE(3):
/// `log(exp(xi) exp(d)) ≈ xi + Jr⁻¹(xi) d` for small `d`.
pub fn se3_right_jacobian_inv(xi: &Vector6<f64>) -> Matrix6<f64> {
    let rho = xi.fixed_rows::<3>(0).into_owned();
    let phi = xi.fixed_rows::<3>(3).into_owned();
    // Jr(xi) = Jl(-xi)
    let jinv = so3_left_jacobian_inv(&(-phi));
    let q = se3_q_left(&(-rho), &(-phi));
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&jinv);
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-(jinv * q * jinv)));
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&jinv);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_pose() -> impl Strategy<Value = SE3Pose> {
        (
            prop::array::uniform3(-5.0f64..5.0),
            prop::array::uniform3(-1.5f64..1.5),
        )
            .prop_map(|(t, r)| {
                SE3Pose::new(Vector3::from(t), so3_exp(&Vector3::from(r)))
            })
    }

    #[test]
    fn identity_round_trip() {
        let p = SE3Pose::identity();
        assert_eq!(p.log(), Vector6::zeros());
        assert!(SE3Pose::exp(&Vector6::zeros()).approx_eq(&p, 0.0));
    }

    #[test]
    fn pure_translation_log() {
        let p = SE3Pose::from_translation(0.1, 0.0, 0.0);
        let xi = p.log();
        assert!((xi - Vector6::new(0.1, 0.0, 0.0, 0.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn pure_yaw_log() {
        let p = SE3Pose::from_xyz_yaw(0.0, 0.0, 0.0, 0.2);
        let xi = p.log();
        assert!((xi[5] - 0.2).abs() < 1e-12);
        assert!(xi.fixed_rows::<5>(0).norm() < 1e-12);
    }

    #[test]
    fn array_rejects_non_unit_quaternion() {
        assert!(SE3Pose::from_array([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0]).is_err());
        assert!(SE3Pose::from_array([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]).is_ok());
    }

    #[test]
    fn log_near_pi() {
        let q = so3_exp(&Vector3::new(0.0, 0.0, std::f64::consts::PI - 1e-9));
        let p = SE3Pose::new(Vector3::new(1.0, 2.0, 3.0), q);
        let back = SE3Pose::exp(&p.log());
        assert!(back.approx_eq(&p, 1e-7));
    }

    proptest! {
        #[test]
        fn group_axioms(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let lhs = (a * b) * c;
            let rhs = a * (b * c);
            prop_assert!(lhs.approx_eq(&rhs, 1e-9));
            prop_assert!((a * a.inverse()).approx_eq(&SE3Pose::identity(), 1e-9));
            prop_assert!((a.rotation.norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn exp_log_round_trip(a in arb_pose()) {
            prop_assert!(SE3Pose::exp(&a.log()).approx_eq(&a, 1e-9));
        }

        #[test]
        fn adjoint_identity(a in arb_pose(), x in prop::array::uniform6(-0.5f64..0.5)) {
            // T exp(x) T⁻¹ = exp(Ad_T x)
            let xi = Vector6::from_row_slice(&x);
            let lhs = a * SE3Pose::exp(&xi) * a.inverse();
            let rhs = SE3Pose::exp(&(a.adjoint() * xi));
            prop_assert!(lhs.approx_eq(&rhs, 1e-9));
        }

        #[test]
        fn right_jacobian_inverse_matches_finite_differences(
            a in arb_pose(),
        ) {
            let xi = a.log();
            let jinv = se3_right_jacobian_inv(&xi);
            let h = 1e-6;
            for k in 0..6 {
                let mut d = Vector6::zeros();
                d[k] = h;
                let plus = (a * SE3Pose::exp(&d)).log();
                let minus = (a * SE3Pose::exp(&(-d))).log();
                let col = (plus - minus) / (2.0 * h);
                let err = (col - jinv.column(k)).norm();
                prop_assert!(err < 1e-5 * (1.0 + col.norm()), "col {} err {}", k, err);
            }
        }
    }
}

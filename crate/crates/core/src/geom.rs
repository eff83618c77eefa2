//! Rigid-body frames, pose distance and the force-torque frame change.
//!
//! Rotations are stored as 3x3 matrices. A [`Pose`] `P_ab` maps coordinates
//! expressed in frame `b` into frame `a`: `p_a = R_ab * p_b + t_ab`.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum elementwise deviation of `R^T R` from identity accepted on input.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

/// Residual above which composed rotations are re-orthonormalized.
const REORTHONORMALIZE_THRESHOLD: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("rotation is not orthonormal (residual {residual:.3e})")]
    NotOrthonormal { residual: f64 },
    #[error("rotation has determinant {0:.6}, expected +1")]
    Reflection(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Rotation plus translation (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRecord", into = "PoseRecord")]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

/// Flat on-disk form: rotation row-major (9), translation (3).
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PoseRecord {
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl From<Pose> for PoseRecord {
    fn from(p: Pose) -> Self {
        let flat = p.to_flat();
        let mut rotation = [0.0; 9];
        rotation.copy_from_slice(&flat[..9]);
        PoseRecord {
            rotation,
            translation: [flat[9], flat[10], flat[11]],
        }
    }
}

impl TryFrom<PoseRecord> for Pose {
    type Error = GeomError;

    fn try_from(r: PoseRecord) -> Result<Self, Self::Error> {
        let mut flat = [0.0; 12];
        flat[..9].copy_from_slice(&r.rotation);
        flat[9..].copy_from_slice(&r.translation);
        Pose::from_flat(&flat)
    }
}

fn orthonormality_residual(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).amax()
}

/// Gram-Schmidt on the columns of `r`.
fn gram_schmidt(r: &Matrix3<f64>) -> Matrix3<f64> {
    let c0 = r.column(0).normalize();
    let c1 = (r.column(1) - c0 * c0.dot(&r.column(1))).normalize();
    let c2 = c0.cross(&c1);
    Matrix3::from_columns(&[c0, c1, c2])
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeomError> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(GeomError::NonFinite("pose"));
        }
        let residual = orthonormality_residual(&rotation);
        if residual > ORTHONORMAL_TOLERANCE {
            return Err(GeomError::NotOrthonormal { residual });
        }
        let det = rotation.determinant();
        if det <= 0.0 {
            return Err(GeomError::Reflection(det));
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized), then translation `t`.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, t: Vector3<f64>) -> Self {
        let rotation = if axis.norm() == 0.0 || angle == 0.0 {
            Matrix3::identity()
        } else {
            Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner()
        };
        Pose {
            rotation,
            translation: t,
        }
    }

    /// Translation followed by roll/pitch/yaw (radians, extrinsic x-y-z).
    pub fn from_rpy(t: Vector3<f64>, roll: f64, pitch: f64, yaw: f64) -> Self {
        Pose {
            rotation: Rotation3::from_euler_angles(roll, pitch, yaw).into_inner(),
            translation: t,
        }
    }

    /// Exponential map of a rotation vector applied to the identity.
    pub fn exp_rotation(rotvec: &Vector3<f64>) -> Matrix3<f64> {
        Rotation3::new(*rotvec).into_inner()
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        let mut rotation = self.rotation * other.rotation;
        if orthonormality_residual(&rotation) > REORTHONORMALIZE_THRESHOLD {
            rotation = gram_schmidt(&rotation);
        }
        Pose {
            rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Apply a displacement in the world frame: translate by `dt`, then
    /// rotate about the pose origin by the rotation vector `drot`.
    pub fn displaced(&self, dt: &Vector3<f64>, drot: &Vector3<f64>) -> Pose {
        let mut rotation = Self::exp_rotation(drot) * self.rotation;
        if orthonormality_residual(&rotation) > REORTHONORMALIZE_THRESHOLD {
            rotation = gram_schmidt(&rotation);
        }
        Pose {
            rotation,
            translation: self.translation + dt,
        }
    }

    /// Geodesic angle (radians) between the two orientations.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let cos = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        // acos loses precision near zero; use the antisymmetric part there.
        let skew = Vector3::new(
            rel[(2, 1)] - rel[(1, 2)],
            rel[(0, 2)] - rel[(2, 0)],
            rel[(1, 0)] - rel[(0, 1)],
        );
        let sin = skew.norm() / 2.0;
        sin.atan2(cos)
    }

    /// Rotation row-major, then translation.
    pub fn to_flat(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 3 + c] = self.rotation[(r, c)];
            }
        }
        out[9..].copy_from_slice(self.translation.as_slice());
        out
    }

    pub fn from_flat(flat: &[f64; 12]) -> Result<Pose, GeomError> {
        let rotation = Matrix3::from_row_slice(&flat[..9]);
        let translation = Vector3::new(flat[9], flat[10], flat[11]);
        Pose::new(rotation, translation)
    }
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

/// Force (N) and torque (N·m) at a frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 6]", into = "[f64; 6]")]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn new(force: Vector3<f64>, torque: Vector3<f64>) -> Self {
        Wrench { force, torque }
    }

    pub fn zero() -> Self {
        Wrench::default()
    }

    pub fn is_finite(&self) -> bool {
        self.force.iter().chain(self.torque.iter()).all(|v| v.is_finite())
    }

    /// Ordered (f_x, f_y, f_z, τ_x, τ_y, τ_z).
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.force.x,
            self.force.y,
            self.force.z,
            self.torque.x,
            self.torque.y,
            self.torque.z,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Wrench {
            force: Vector3::new(a[0], a[1], a[2]),
            torque: Vector3::new(a[3], a[4], a[5]),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Wrench::new(self.force * s, self.torque * s)
    }
}

impl std::ops::Add for Wrench {
    type Output = Wrench;

    fn add(self, rhs: Wrench) -> Wrench {
        Wrench::new(self.force + rhs.force, self.torque + rhs.torque)
    }
}

impl From<[f64; 6]> for Wrench {
    fn from(a: [f64; 6]) -> Self {
        Wrench::from_array(a)
    }
}

impl From<Wrench> for [f64; 6] {
    fn from(w: Wrench) -> Self {
        w.to_array()
    }
}

/// Linear (m/s) and angular (rad/s) velocity at the piece center.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 6]", into = "[f64; 6]")]
pub struct Twist {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Twist {
    pub fn new(linear: Vector3<f64>, angular: Vector3<f64>) -> Self {
        Twist { linear, angular }
    }

    pub fn zero() -> Self {
        Twist::default()
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().chain(self.angular.iter()).all(|v| v.is_finite())
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.linear.x,
            self.linear.y,
            self.linear.z,
            self.angular.x,
            self.angular.y,
            self.angular.z,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Twist {
            linear: Vector3::new(a[0], a[1], a[2]),
            angular: Vector3::new(a[3], a[4], a[5]),
        }
    }

    /// Componentwise clamp into `[-v_max, v_max]` and `[-w_max, w_max]`.
    /// The flag reports whether any component was changed.
    pub fn clamped(&self, v_max: f64, w_max: f64) -> (Twist, bool) {
        let lin = self.linear.map(|v| v.clamp(-v_max, v_max));
        let ang = self.angular.map(|w| w.clamp(-w_max, w_max));
        let changed = lin != self.linear || ang != self.angular;
        (Twist::new(lin, ang), changed)
    }
}

impl From<[f64; 6]> for Twist {
    fn from(a: [f64; 6]) -> Self {
        Twist::from_array(a)
    }
}

impl From<Twist> for [f64; 6] {
    fn from(t: Twist) -> Self {
        t.to_array()
    }
}

pub fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// Re-express a wrench given in frame `b` in frame `a`, where `pose_ab`
/// locates `b` in `a`:
///
/// ```text
/// f_a = R f_b
/// τ_a = [t]x R f_b + R τ_b
/// ```
pub fn wrench_transform(pose_ab: &Pose, wrench_b: &Wrench) -> Result<Wrench, GeomError> {
    if !wrench_b.is_finite() {
        return Err(GeomError::NonFinite("wrench"));
    }
    let r = pose_ab.rotation();
    let force = r * wrench_b.force;
    let torque = pose_ab.translation().cross(&force) + r * wrench_b.torque;
    Ok(Wrench { force, torque })
}

/// Translational distance plus `lambda_rot` times the geodesic angle.
pub fn pose_distance(x: &Pose, g: &Pose, lambda_rot: f64) -> f64 {
    (g.translation() - x.translation()).norm() + lambda_rot * x.rotation_angle_to(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    macro_rules! assert_close {
        ($a:expr, $b:expr, $tol:expr) => {{
            let (a, b): (f64, f64) = ($a, $b);
            assert!((a - b).abs() <= $tol, "{} vs {} (tol {})", a, b, $tol);
        }};
    }

    #[test]
    fn identity_pose_leaves_wrench_unchanged() {
        let w = Wrench::from_array([1.0, -2.0, 3.0, 0.1, 0.2, -0.3]);
        assert_eq!(wrench_transform(&Pose::identity(), &w).unwrap(), w);
    }

    #[test]
    fn pure_offset_induces_cross_product_torque() {
        let p = Pose::from_translation(Vector3::new(0.0, 0.0, 0.1));
        let w = Wrench::new(Vector3::new(1.0, 0.0, 0.0), Vector3::zeros());
        let out = wrench_transform(&p, &w).unwrap();
        assert_eq!(out.force, Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(out.torque, Vector3::new(0.0, 0.1, 0.0));
    }

    #[test]
    fn non_finite_wrench_rejected() {
        let w = Wrench::from_array([f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            wrench_transform(&Pose::identity(), &w),
            Err(GeomError::NonFinite(_))
        ));
    }

    #[test]
    fn pose_validation() {
        let scaled = Matrix3::identity() * 1.001;
        assert!(matches!(
            Pose::new(scaled, Vector3::zeros()),
            Err(GeomError::NotOrthonormal { .. })
        ));
        let mirror = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(matches!(
            Pose::new(mirror, Vector3::zeros()),
            Err(GeomError::Reflection(_))
        ));
        assert!(Pose::new(Matrix3::identity(), Vector3::new(f64::INFINITY, 0.0, 0.0)).is_err());
    }

    #[test]
    fn group_laws() {
        let p = Pose::from_axis_angle(Vector3::new(1.0, 2.0, 0.5), 0.7, Vector3::new(0.1, -0.2, 0.3));
        let e = p.compose(&p.inverse());
        assert!((e.rotation() - Matrix3::identity()).amax() <= 1e-9);
        assert!(e.translation().amax() <= 1e-9);
        assert_eq!(Pose::identity().inverse(), Pose::identity());

        let a = Pose::from_translation(Vector3::new(0.0, 0.0, 0.1));
        let b = Pose::from_translation(Vector3::new(0.0, 0.0, 0.2));
        let ab = a.compose(&b);
        assert_close!(ab.translation().z, 0.3, 1e-15);
        assert_eq!(ab.translation().x, 0.0);
    }

    #[test]
    fn distance_examples() {
        let g = Pose::identity();
        assert_eq!(pose_distance(&g, &g, 0.1), 0.0);
        let x = Pose::from_translation(Vector3::new(0.05, 0.0, 0.0));
        assert_close!(pose_distance(&x, &g, 0.1), 0.05, 1e-15);
        let r = Pose::from_axis_angle(Vector3::z(), FRAC_PI_2, Vector3::zeros());
        assert_close!(pose_distance(&r, &g, 0.1), 0.1 * FRAC_PI_2, 1e-12);
        assert_close!(pose_distance(&r, &g, 0.1), 0.15708, 1e-5);
    }

    #[test]
    fn flat_round_trip_and_serde() {
        let p = Pose::from_rpy(Vector3::new(0.01, 0.02, 0.03), 0.1, -0.2, 0.3);
        let q = Pose::from_flat(&p.to_flat()).unwrap();
        assert_eq!(p, q);
        let json = serde_json::to_string(&p).unwrap();
        assert!(json.contains("\"rotation\":["));
        let back: Pose = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
        let bad = r#"{"rotation":[2,0,0,0,1,0,0,0,1],"translation":[0,0,0]}"#;
        assert!(serde_json::from_str::<Pose>(bad).is_err());

        let w = Wrench::from_array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(serde_json::to_string(&w).unwrap(), "[1.0,2.0,3.0,4.0,5.0,6.0]");
    }

    #[test]
    fn twist_clamping_reports_changes() {
        let t = Twist::from_array([0.05, -0.001, 0.0, 0.0, 0.0, -1.0]);
        let (c, changed) = t.clamped(0.02, 0.1);
        assert!(changed);
        assert_eq!(c.to_array(), [0.02, -0.001, 0.0, 0.0, 0.0, -0.1]);
        let (_, unchanged) = c.clamped(0.02, 0.1);
        assert!(!unchanged);
    }

    #[test]
    fn long_composition_chain_stays_orthonormal() {
        let step = Pose::from_axis_angle(Vector3::new(0.3, -1.0, 0.2), 0.013, Vector3::new(1e-3, 0.0, 0.0));
        let mut p = Pose::identity();
        for _ in 0..100_000 {
            p = p.compose(&step);
        }
        assert!(orthonormality_residual(p.rotation()) <= REORTHONORMALIZE_THRESHOLD);
    }
}

//! Timestamps, rotations and rigid poses.
//!
//! Poses are ego-to-global (or sensor-to-ego) transforms: `apply(pose, p)`
//! maps a point expressed in the child frame into the parent frame. Moving a
//! stale sweep into the current reference frame is the chain
//! `capture ego -> global -> reference ego`, see [`retarget_points`].

use std::fmt;
use std::ops::Sub;

use nalgebra::{Quaternion, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("rotation quaternion ({w}, {x}, {y}, {z}) is not normalizable")]
    DegenerateQuaternion { w: f64, x: f64, y: f64, z: f64 },
    #[error("non-finite translation component")]
    NonFiniteTranslation,
}

/// Integer microseconds since scenario start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn from_micros(micros: u64) -> Self {
        Timestamp(micros)
    }

    pub fn from_secs_f64(secs: f64) -> Self {
        Timestamp((secs * 1e6).round().max(0.0) as u64)
    }

    pub fn micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-6
    }

    /// `self - earlier` in microseconds, signed.
    pub fn micros_since(self, earlier: Timestamp) -> i64 {
        self.0 as i64 - earlier.0 as i64
    }

    /// Shift backwards, or `None` when that would precede the scenario start.
    pub fn checked_sub_micros(self, micros: u64) -> Option<Timestamp> {
        self.0.checked_sub(micros).map(Timestamp)
    }
}

impl Sub for Timestamp {
    type Output = i64;

    fn sub(self, rhs: Timestamp) -> i64 {
        self.micros_since(rhs)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        (self.vector() - other.vector()).norm()
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Point3::new(v.x, v.y, v.z)
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(v: [f64; 3]) -> Self {
        Point3::new(v[0], v[1], v[2])
    }
}

impl From<Point3> for [f64; 3] {
    fn from(p: Point3) -> Self {
        [p.x, p.y, p.z]
    }
}

/// Unit quaternion rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(UnitQuaternion<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(UnitQuaternion::identity())
    }

    /// Builds a rotation from `(w, x, y, z)`, normalizing it.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Self, FrameError> {
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(FrameError::DegenerateQuaternion { w, x, y, z });
        }
        // already-unit input keeps its exact bits so stored poses round-trip
        if (norm - 1.0).abs() <= 1e-12 {
            return Ok(Rotation(UnitQuaternion::new_unchecked(q)));
        }
        Ok(Rotation(UnitQuaternion::from_quaternion(q)))
    }

    /// Rotation about +z by `yaw` radians.
    pub fn from_yaw(yaw: f64) -> Self {
        Rotation(UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw))
    }

    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Result<Self, FrameError> {
        let axis = Unit::try_new(Vector3::from(axis), 1e-12).ok_or(
            FrameError::DegenerateQuaternion { w: 0.0, x: axis[0], y: axis[1], z: axis[2] },
        )?;
        Ok(Rotation(UnitQuaternion::from_axis_angle(&axis, angle)))
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        let mut q = self.0 * other.0;
        q.renormalize();
        Rotation(q)
    }

    pub fn inverse(&self) -> Rotation {
        Rotation(self.0.inverse())
    }

    pub fn rotate(&self, p: &Point3) -> Point3 {
        Point3::from_vector(&(self.0 * p.vector()))
    }

    /// Rotates a planar vector as `(x, y, 0)` and drops the vertical part.
    pub fn rotate_planar(&self, v: [f64; 2]) -> [f64; 2] {
        let r = self.0 * Vector3::new(v[0], v[1], 0.0);
        [r.x, r.y]
    }

    /// Heading of the rotated +x axis in the xy plane.
    pub fn yaw(&self) -> f64 {
        let fwd = self.0 * Vector3::x();
        fwd.y.atan2(fwd.x)
    }

    pub fn angle(&self) -> f64 {
        self.0.angle()
    }

    /// Angle of the relative rotation between `self` and `other`.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        self.0.angle_to(&other.0)
    }

    /// Spherical interpolation along the shortest arc.
    pub fn slerp(&self, other: &Rotation, s: f64) -> Rotation {
        let target = if self.0.coords.dot(&other.0.coords) < 0.0 {
            UnitQuaternion::new_unchecked(-other.0.into_inner())
        } else {
            other.0
        };
        let mut q = self.0.try_slerp(&target, s, 1e-15).unwrap_or(self.0);
        q.renormalize();
        Rotation(q)
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Rotation::identity()
    }
}

/// Rigid SE(3) transform: `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "PoseRecord", into = "PoseRecord")]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Point3,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Point3) -> Result<Self, FrameError> {
        if !translation.is_finite() {
            return Err(FrameError::NonFiniteTranslation);
        }
        Ok(Pose { rotation, translation })
    }

    pub fn identity() -> Self {
        Pose::default()
    }

    pub fn translation(x: f64, y: f64, z: f64) -> Self {
        Pose { rotation: Rotation::identity(), translation: Point3::new(x, y, z) }
    }

    pub fn from_rotation(rotation: Rotation) -> Self {
        Pose { rotation, translation: Point3::ORIGIN }
    }

    /// Planar pose: position `(x, y, z)` with heading `yaw` about +z.
    pub fn planar(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Pose { rotation: Rotation::from_yaw(yaw), translation: Point3::new(x, y, z) }
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        let r = self.rotation.rotate(p);
        Point3::new(
            r.x + self.translation.x,
            r.y + self.translation.y,
            r.z + self.translation.z,
        )
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.apply(&other.translation),
        }
    }

    pub fn inverse(&self) -> Pose {
        let rotation = self.rotation.inverse();
        let t = rotation.rotate(&self.translation);
        Pose { rotation, translation: Point3::new(-t.x, -t.y, -t.z) }
    }
}

/// Serialized pose: quaternion `[w, x, y, z]` and translation `[x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

impl From<Pose> for PoseRecord {
    fn from(p: Pose) -> Self {
        PoseRecord { rotation: p.rotation.wxyz(), translation: p.translation.into() }
    }
}

impl TryFrom<PoseRecord> for Pose {
    type Error = FrameError;

    fn try_from(r: PoseRecord) -> Result<Self, FrameError> {
        let [w, x, y, z] = r.rotation;
        Pose::new(Rotation::from_wxyz(w, x, y, z)?, r.translation.into())
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn invert(p: &Pose) -> Pose {
    p.inverse()
}

pub fn apply(p: &Pose, pt: &Point3) -> Point3 {
    p.apply(pt)
}

/// Relative transform taking coordinates in `src_ego` to coordinates in
/// `dst_ego`, both given as ego-to-global poses.
pub fn relative_pose(src_ego: &Pose, dst_ego: &Pose) -> Pose {
    dst_ego.inverse().compose(src_ego)
}

/// Re-expresses points captured in `src_ego` in `dst_ego`.
pub fn retarget_points(points: &[Point3], src_ego: &Pose, dst_ego: &Pose) -> Vec<Point3> {
    let rel = relative_pose(src_ego, dst_ego);
    points.iter().map(|p| rel.apply(p)).collect()
}

/// Frame names used in logs and diagnostics.
pub fn ego_frame_name(t: Timestamp) -> String {
    format!("ego@{t}")
}

pub const GLOBAL_FRAME: &str = "global";

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_6, PI};

    fn close(a: &Point3, b: &Point3, tol: f64) -> bool {
        a.distance(b) <= tol
    }

    #[test]
    fn compose_identities() {
        let id = compose(&Pose::identity(), &Pose::identity());
        assert_eq!(id.apply(&Point3::new(1.0, 2.0, 3.0)), Point3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn compose_translations_add() {
        let p = compose(&Pose::translation(1.0, 0.0, 0.0), &Pose::translation(0.0, 2.0, 0.0));
        assert!(close(&p.translation, &Point3::new(1.0, 2.0, 0.0), 1e-15));
        assert!(p.rotation.angle() < 1e-15);
    }

    #[test]
    fn rot_then_translate_origin() {
        // R_z(90°) * (1,0,0) = (0,1,0)
        let p = compose(&Pose::planar(0.0, 0.0, 0.0, FRAC_PI_2), &Pose::translation(1.0, 0.0, 0.0));
        assert!(close(&p.apply(&Point3::ORIGIN), &Point3::new(0.0, 1.0, 0.0), 1e-12));
    }

    #[test]
    fn invert_examples() {
        let inv = invert(&Pose::identity());
        assert_eq!(inv.apply(&Point3::new(4.0, 5.0, 6.0)), Point3::new(4.0, 5.0, 6.0));

        let inv = invert(&Pose::translation(3.0, -1.0, 2.0));
        assert!(close(&inv.translation, &Point3::new(-3.0, 1.0, -2.0), 1e-15));

        let p = compose(&Pose::planar(0.0, 0.0, 0.0, FRAC_PI_6), &Pose::translation(5.0, 0.0, 0.0));
        let x = Point3::new(10.0, 4.0, 0.0);
        let back = invert(&p).apply(&p.apply(&x));
        assert!(close(&back, &x, 1e-9));
    }

    #[test]
    fn apply_examples() {
        assert_eq!(apply(&Pose::identity(), &Point3::new(1.0, 2.0, 3.0)), Point3::new(1.0, 2.0, 3.0));
        assert_eq!(
            apply(&Pose::translation(0.0, 0.0, 5.0), &Point3::new(1.0, 1.0, 1.0)),
            Point3::new(1.0, 1.0, 6.0)
        );
        let r = apply(&Pose::planar(0.0, 0.0, 0.0, PI), &Point3::new(2.0, 0.0, 0.0));
        assert!(close(&r, &Point3::new(-2.0, 0.0, 0.0), 1e-12));
    }

    #[test]
    fn retarget_examples() {
        let pts = vec![Point3::new(12.0, 0.0, 0.0), Point3::new(-1.0, 3.0, 2.0)];
        let same = Pose::planar(3.0, 4.0, 0.0, 0.7);
        let out = retarget_points(&pts, &same, &same);
        for (a, b) in out.iter().zip(&pts) {
            assert!(close(a, b, 1e-12));
        }

        // ego advanced 10 m along x: world-fixed points shift back by 10
        let out = retarget_points(&pts[..1], &Pose::identity(), &Pose::translation(10.0, 0.0, 0.0));
        assert!(close(&out[0], &Point3::new(2.0, 0.0, 0.0), 1e-12));
    }

    #[test]
    fn rotation_rejects_zero_quaternion() {
        assert!(Rotation::from_wxyz(0.0, 0.0, 0.0, 0.0).is_err());
        assert!(Rotation::from_wxyz(f64::NAN, 0.0, 0.0, 0.0).is_err());
        let r = Rotation::from_wxyz(2.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(r.wxyz(), [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn pose_rejects_non_finite_translation() {
        assert!(Pose::new(Rotation::identity(), Point3::new(f64::INFINITY, 0.0, 0.0)).is_err());
    }

    #[test]
    fn slerp_takes_shortest_arc() {
        let a = Rotation::from_yaw(0.0);
        let b = Rotation::from_yaw(FRAC_PI_2);
        let mid = a.slerp(&b, 0.5);
        assert!((mid.yaw() - FRAC_PI_2 / 2.0).abs() < 1e-12);

        // sign-flipped target quaternion represents the same rotation
        let [w, x, y, z] = b.wxyz();
        let neg = Rotation::from_wxyz(-w, -x, -y, -z).unwrap();
        assert!((a.slerp(&neg, 0.5).yaw() - FRAC_PI_2 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn timestamp_arithmetic() {
        let a = Timestamp(1_500);
        let b = Timestamp(2_000);
        assert_eq!(b - a, 500);
        assert_eq!(a - b, -500);
        assert_eq!(a.checked_sub_micros(2_000), None);
        assert_eq!(Timestamp::from_secs_f64(0.25), Timestamp(250_000));
        assert_eq!(ego_frame_name(a), "ego@1500");
    }
}

//! Rigid-body poses, pinhole camera models and Euler-angle rotation bins.
//!
//! Every rotation convention in the crate goes through this module: Euler
//! triples are extrinsic X-Y-Z (roll about world x, then pitch about world y,
//! then yaw about world z), i.e. `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use std::fmt;

pub type Vec3 = Vector3<f64>;

const QUAT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeometryError {
    #[error("frame mismatch: left pose maps {left_child}, right pose is expressed in {right_frame}")]
    FrameMismatch { left_child: Frame, right_frame: Frame },
    #[error("quaternion norm {0} is not within 1e-6 of 1")]
    NonUnitQuaternion(f64),
    #[error("rotation bin width {0} deg does not divide 360")]
    InvalidBinWidth(u32),
    #[error("rotation bin {bin} out of range for {count} bins per axis")]
    BinOutOfRange { bin: usize, count: usize },
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Coordinate frames a pose may be expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Frame {
    World,
    Camera,
    RobotLeftBase,
    RobotRightBase,
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Frame::World => "world",
            Frame::Camera => "camera",
            Frame::RobotLeftBase => "robot-left-base",
            Frame::RobotRightBase => "robot-right-base",
        };
        f.write_str(s)
    }
}

/// A rigid transform from frame `child` into frame `frame`.
///
/// Free-standing poses (a gripper target, an object) use `child == frame`;
/// they carry no frame chain and compose like any other pose in that frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose6D {
    pub position: Vec3,
    pub orientation: UnitQuaternion<f64>,
    pub frame: Frame,
    pub child: Frame,
}

impl Pose6D {
    pub fn identity(frame: Frame) -> Self {
        Self {
            position: Vec3::zeros(),
            orientation: UnitQuaternion::identity(),
            frame,
            child: frame,
        }
    }

    pub fn new(frame: Frame, position: Vec3, orientation: UnitQuaternion<f64>) -> Self {
        Self { position, orientation, frame, child: frame }
    }

    /// A transform mapping coordinates in `child` into `frame`.
    pub fn transform(
        frame: Frame,
        child: Frame,
        position: Vec3,
        orientation: UnitQuaternion<f64>,
    ) -> Self {
        Self { position, orientation, frame, child }
    }

    pub fn translation(frame: Frame, x: f64, y: f64, z: f64) -> Self {
        Self::new(frame, Vec3::new(x, y, z), UnitQuaternion::identity())
    }

    /// Build the orientation from a `(w, x, y, z)` quaternion, rejecting
    /// inputs whose norm is off by more than 1e-6.
    pub fn from_wxyz(frame: Frame, position: Vec3, wxyz: [f64; 4]) -> Result<Self, GeometryError> {
        Ok(Self::new(frame, position, unit_quaternion_from_wxyz(wxyz)?))
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.orientation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn inverse(&self) -> Self {
        let inv = self.orientation.inverse();
        Self {
            position: -(inv * self.position),
            orientation: inv,
            frame: self.child,
            child: self.frame,
        }
    }

    pub fn transform_point(&self, pt: &Vec3) -> Vec3 {
        self.orientation * pt + self.position
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.orientation.to_rotation_matrix().matrix()
    }
}

/// On-disk form of a pose: position plus `(w, x, y, z)` quaternion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub position: [f64; 3],
    pub quaternion: [f64; 4],
}

impl PoseRecord {
    pub fn from_pose(p: &Pose6D) -> Self {
        Self { position: p.position.into(), quaternion: p.wxyz() }
    }

    pub fn to_pose(&self, frame: Frame, child: Frame) -> Result<Pose6D, GeometryError> {
        let q = unit_quaternion_from_wxyz(self.quaternion)?;
        Ok(Pose6D::transform(frame, child, Vec3::from(self.position), q))
    }
}

/// `a ∘ b`: maps `b.child` into `a.frame`. Requires `a.child == b.frame`.
pub fn compose(a: &Pose6D, b: &Pose6D) -> Result<Pose6D, GeometryError> {
    if a.child != b.frame {
        return Err(GeometryError::FrameMismatch { left_child: a.child, right_frame: b.frame });
    }
    let q = UnitQuaternion::new_normalize(*(a.orientation * b.orientation).quaternion());
    Ok(Pose6D {
        position: a.orientation * b.position + a.position,
        orientation: q,
        frame: a.frame,
        child: b.child,
    })
}

pub fn unit_quaternion_from_wxyz(wxyz: [f64; 4]) -> Result<UnitQuaternion<f64>, GeometryError> {
    let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
    let norm = q.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > QUAT_NORM_TOLERANCE {
        return Err(GeometryError::NonUnitQuaternion(norm));
    }
    // already-unit inputs are kept bit-for-bit so stored poses round-trip exactly
    if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
        return Ok(UnitQuaternion::new_unchecked(q));
    }
    Ok(UnitQuaternion::new_normalize(q))
}

/// Extrinsic X-Y-Z Euler angles in degrees `(roll, pitch, yaw)` to a quaternion.
pub fn euler_to_quat(euler_deg: [f64; 3]) -> UnitQuaternion<f64> {
    let [r, p, y] = euler_deg.map(f64::to_radians);
    let rz = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), y);
    let ry = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), p);
    let rx = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), r);
    rz * ry * rx
}

/// Inverse of [`euler_to_quat`]. Roll and yaw land in `(-180, 180]`, pitch in
/// `[-90, 90]`. At gimbal lock (`|pitch| = 90`) roll is fixed to zero.
pub fn quat_to_euler(q: &UnitQuaternion<f64>) -> [f64; 3] {
    let m: Rotation3<f64> = q.to_rotation_matrix();
    let m = m.matrix();
    let sp = (-m[(2, 0)]).clamp(-1.0, 1.0);
    let pitch = sp.asin();
    let (roll, yaw) = if (1.0 - sp.abs()) < 1e-12 {
        (0.0, (-m[(0, 1)]).atan2(m[(1, 1)]))
    } else {
        (m[(2, 1)].atan2(m[(2, 2)]), m[(1, 0)].atan2(m[(0, 0)]))
    };
    [roll.to_degrees(), pitch.to_degrees(), yaw.to_degrees()]
}

/// Per-axis rotation bins of `width` degrees; `360 / width` bins per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EulerBins {
    pub bins: [usize; 3],
    pub width: u32,
}

impl EulerBins {
    pub fn new(bins: [usize; 3], width: u32) -> Result<Self, GeometryError> {
        let count = bins_per_axis(width)?;
        if let Some(&bin) = bins.iter().find(|&&b| b >= count) {
            return Err(GeometryError::BinOutOfRange { bin, count });
        }
        Ok(Self { bins, width })
    }

    pub fn count(&self) -> usize {
        360 / self.width as usize
    }

    /// Shift the bin on `axis` by `steps`, wrapping around the circle.
    pub fn rotated(&self, axis: usize, steps: i64) -> Self {
        let n = self.count() as i64;
        let mut bins = self.bins;
        bins[axis] = (bins[axis] as i64 + steps).rem_euclid(n) as usize;
        Self { bins, width: self.width }
    }
}

pub fn bins_per_axis(width: u32) -> Result<usize, GeometryError> {
    if width == 0 || 360 % width != 0 {
        return Err(GeometryError::InvalidBinWidth(width));
    }
    Ok((360 / width) as usize)
}

/// Wrap an angle in degrees into `[0, 360)`.
pub fn normalize_degrees(angle: f64) -> f64 {
    let a = angle.rem_euclid(360.0);
    // rem_euclid can round tiny negatives up to exactly 360
    if a >= 360.0 {
        0.0
    } else {
        a
    }
}

pub fn euler_to_bins(euler_deg: [f64; 3], width: u32) -> Result<EulerBins, GeometryError> {
    let count = bins_per_axis(width)?;
    let r = width as f64;
    let bins = euler_deg.map(|a| ((normalize_degrees(a) / r).floor() as usize).min(count - 1));
    Ok(EulerBins { bins, width })
}

/// Bin centers, `(bin + 0.5) * width`.
pub fn bins_to_euler(b: &EulerBins) -> [f64; 3] {
    let r = b.width as f64;
    b.bins.map(|i| (i as f64 + 0.5) * r)
}

/// Smallest absolute difference between two angles in degrees.
pub fn angular_distance_deg(a: f64, b: f64) -> f64 {
    let d = normalize_degrees(a - b);
    d.min(360.0 - d)
}

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
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidIntrinsics(m.to_string()));
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad("focal lengths must be positive");
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return bad("cx outside image");
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad("cy outside image");
        }
        Ok(())
    }

    /// Camera-frame point on the ray through pixel `(u, v)` at depth `d`.
    pub fn deproject(&self, u: f64, v: f64, d: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx * d, (v - self.cy) / self.fy * d, d)
    }

    /// Pinhole forward model: camera-frame point to `(u, v, depth)`.
    pub fn project(&self, p: &Vec3) -> (f64, f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy, p.z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix4;
    use proptest::prelude::*;

    /// Homogeneous matrix built straight from the quaternion components.
    fn homogeneous(p: &Pose6D) -> Matrix4<f64> {
        let [w, x, y, z] = p.wxyz();
        let t = p.position;
        Matrix4::new(
            1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y), t.x,
            2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x), t.y,
            2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y), t.z,
            0.0, 0.0, 0.0, 1.0,
        )
    }

    fn pose_from(frame: Frame, child: Frame, t: [f64; 3], q: [f64; 4]) -> Pose6D {
        let q = UnitQuaternion::new_normalize(Quaternion::new(q[0], q[1], q[2], q[3]));
        Pose6D::transform(frame, child, Vec3::from(t), q)
    }

    #[test]
    fn compose_identity_is_neutral() {
        let p = pose_from(Frame::World, Frame::Camera, [0.3, -1.0, 2.0], [0.9, 0.1, -0.3, 0.2]);
        let c = compose(&Pose6D::identity(Frame::World), &p).unwrap();
        assert_eq!(c.child, Frame::Camera);
        assert!((c.position - p.position).norm() < 1e-12);
        assert!(c.orientation.angle_to(&p.orientation) < 1e-12);
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let p = pose_from(Frame::World, Frame::Camera, [0.3, -1.0, 2.0], [0.9, 0.1, -0.3, 0.2]);
        let c = compose(&p, &p.inverse()).unwrap();
        assert_eq!((c.frame, c.child), (Frame::World, Frame::World));
        assert!(c.position.norm() < 1e-9);
        assert!(c.orientation.angle() < 1e-9);
    }

    #[test]
    fn compose_translations_add() {
        let a = Pose6D::translation(Frame::World, 1.0, 0.0, 0.0);
        let b = Pose6D::translation(Frame::World, 0.0, 2.0, 0.0);
        let c = compose(&a, &b).unwrap();
        let oracle = homogeneous(&a) * homogeneous(&b);
        assert_eq!(c.position, Vec3::new(1.0, 2.0, 0.0));
        assert!((homogeneous(&c) - oracle).abs().max() < 1e-12);
    }

    #[test]
    fn compose_rejects_broken_chain() {
        let a = pose_from(Frame::World, Frame::Camera, [0.0; 3], [1.0, 0.0, 0.0, 0.0]);
        let b = pose_from(Frame::RobotLeftBase, Frame::World, [0.0; 3], [1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(compose(&a, &b), Err(GeometryError::FrameMismatch { .. })));
    }

    #[test]
    fn transform_point_basics() {
        let id = Pose6D::identity(Frame::World);
        assert_eq!(id.transform_point(&Vec3::new(1.0, 2.0, 3.0)), Vec3::new(1.0, 2.0, 3.0));
        let yaw = Pose6D::new(Frame::World, Vec3::zeros(), euler_to_quat([0.0, 0.0, 90.0]));
        let p = yaw.transform_point(&Vec3::new(1.0, 0.0, 0.0));
        assert!((p - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn from_wxyz_rejects_non_unit() {
        assert!(Pose6D::from_wxyz(Frame::World, Vec3::zeros(), [1.0, 0.0, 0.0, 0.0]).is_ok());
        assert!(matches!(
            Pose6D::from_wxyz(Frame::World, Vec3::zeros(), [1.0, 0.01, 0.0, 0.0]),
            Err(GeometryError::NonUnitQuaternion(_))
        ));
    }

    #[test]
    fn euler_bins_examples() {
        assert_eq!(euler_to_bins([0.0, 0.0, 0.0], 5).unwrap().bins, [0, 0, 0]);
        // floor(7/5)=1, floor(357/5)=71, floor(180/5)=36
        assert_eq!(euler_to_bins([7.0, 357.0, 180.0], 5).unwrap().bins, [1, 71, 36]);
        assert_eq!(euler_to_bins([-3.0, 0.0, 0.0], 5).unwrap().bins, [71, 0, 0]);
        assert_eq!(euler_to_bins([0.0; 3], 7), Err(GeometryError::InvalidBinWidth(7)));
        assert_eq!(euler_to_bins([-1e-18, 0.0, 0.0], 5).unwrap().bins, [0, 0, 0]);
    }

    #[test]
    fn bin_centers() {
        let b = EulerBins::new([0, 0, 0], 5).unwrap();
        assert_eq!(bins_to_euler(&b), [2.5, 2.5, 2.5]);
        let b = EulerBins::new([71, 0, 0], 5).unwrap();
        assert_eq!(bins_to_euler(&b), [357.5, 2.5, 2.5]);
        assert!(EulerBins::new([72, 0, 0], 5).is_err());
    }

    #[test]
    fn euler_quat_examples() {
        let e = quat_to_euler(&UnitQuaternion::identity());
        assert!(e.iter().all(|a| a.abs() < 1e-12));
        let e = quat_to_euler(&UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 90f64.to_radians()));
        assert!((e[0]).abs() < 1e-9 && (e[1]).abs() < 1e-9 && (e[2] - 90.0).abs() < 1e-9);
    }

    #[test]
    fn gimbal_lock_zeroes_roll() {
        let q = euler_to_quat([30.0, 90.0, 10.0]);
        let e = quat_to_euler(&q);
        assert_eq!(e[0], 0.0);
        assert!((e[1] - 90.0).abs() < 1e-6);
        // Same rotation regardless of how roll/yaw got folded together.
        assert!(euler_to_quat(e).angle_to(&q) < 1e-6);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(100.0, 100.0, 64.0, 48.0, 128, 96).is_ok());
        assert!(CameraIntrinsics::new(0.0, 100.0, 64.0, 48.0, 128, 96).is_err());
        assert!(CameraIntrinsics::new(100.0, 100.0, 128.0, 48.0, 128, 96).is_err());
    }

    fn arb_pose() -> impl Strategy<Value = Pose6D> {
        (
            prop::array::uniform3(-5.0f64..5.0),
            prop::array::uniform4(-1.0f64..1.0).prop_filter("non-degenerate", |q| {
                q.iter().map(|c| c * c).sum::<f64>() > 1e-3
            }),
        )
            .prop_map(|(t, q)| pose_from(Frame::World, Frame::Camera, t, q))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn transform_point_matches_matrix_oracle(p in arb_pose(), pt in prop::array::uniform3(-10.0f64..10.0)) {
            let got = p.transform_point(&Vec3::from(pt));
            let h = homogeneous(&p) * nalgebra::Vector4::new(pt[0], pt[1], pt[2], 1.0);
            prop_assert!((got - h.xyz()).norm() < 1e-9);
        }

        #[test]
        fn bin_round_trip_within_half_bin(e in prop::array::uniform3(-720.0f64..720.0)) {
            let b = euler_to_bins(e, 5).unwrap();
            let c = bins_to_euler(&b);
            for i in 0..3 {
                prop_assert!(angular_distance_deg(c[i], e[i]) <= 2.5 + 1e-9);
            }
        }

        #[test]
        fn bins_shift_with_whole_bin_rotation(e in prop::array::uniform3(0.0f64..360.0), k in -100i64..100) {
            // stay clear of bin edges where the sum may round across
            prop_assume!(e.iter().all(|a| { let f = (a / 5.0).fract(); f > 1e-6 && f < 1.0 - 1e-6 }));
            let b = euler_to_bins(e, 5).unwrap();
            let shifted = euler_to_bins(e.map(|a| a + 5.0 * k as f64), 5).unwrap();
            for axis in 0..3 {
                prop_assert_eq!(shifted.bins[axis], b.rotated(axis, k).bins[axis]);
            }
        }

        #[test]
        fn quat_euler_round_trip(q in prop::array::uniform4(-1.0f64..1.0)) {
            let norm2: f64 = q.iter().map(|c| c * c).sum();
            prop_assume!(norm2 > 1e-3);
            let q = UnitQuaternion::new_normalize(Quaternion::new(q[0], q[1], q[2], q[3]));
            let e = quat_to_euler(&q);
            prop_assume!(e[1].abs() < 89.0);
            let back = euler_to_quat(e);
            prop_assert!(back.angle_to(&q) < 1e-6);
            let again = quat_to_euler(&back);
            for i in 0..3 {
                prop_assert!(angular_distance_deg(again[i], e[i]) < 1e-6);
            }
        }
    }
}

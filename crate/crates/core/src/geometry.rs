//! Shared geometric and sensor-model types.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};

/// A 3D point in meters. Sensor or world frame depending on context.
pub type Point3 = Vector3<f64>;

/// Tolerance used when validating rotation matrices.
const ORTHO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Frame {
    Sensor,
    World,
}

/// Row/column pixel coordinate in a range image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PixelCoord {
    pub u: usize,
    pub v: usize,
}

impl PixelCoord {
    pub fn new(u: usize, v: usize) -> Self {
        Self { u, v }
    }

    pub fn index(&self, width: usize) -> usize {
        self.u * width + self.v
    }
}

/// Sensor-native H×W grid of points, row-major, with an explicit validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredCloud {
    pub height: usize,
    pub width: usize,
    pub points: Vec<Point3>,
    pub valid: Vec<bool>,
    pub frame: Frame,
    pub stamp: f64,
}

impl StructuredCloud {
    /// An all-invalid cloud.
    pub fn empty(height: usize, width: usize, frame: Frame, stamp: f64) -> Self {
        Self {
            height,
            width,
            points: vec![Point3::zeros(); height * width],
            valid: vec![false; height * width],
            frame,
            stamp,
        }
    }

    pub fn new(
        height: usize,
        width: usize,
        points: Vec<Point3>,
        valid: Vec<bool>,
        frame: Frame,
        stamp: f64,
    ) -> Result<Self> {
        let n = height * width;
        if points.len() != n || valid.len() != n {
            return Err(Error::dims(
                format!("{n} points and flags"),
                format!("{} points, {} flags", points.len(), valid.len()),
            ));
        }
        if points
            .iter()
            .zip(&valid)
            .any(|(p, &ok)| ok && !p.iter().all(|c| c.is_finite()))
        {
            return Err(Error::DegenerateInput("non-finite valid point"));
        }
        Ok(Self {
            height,
            width,
            points,
            valid,
            frame,
            stamp,
        })
    }

    /// An unstructured cloud stored as a single row.
    pub fn unstructured(points: Vec<Point3>, frame: Frame, stamp: f64) -> Self {
        let n = points.len();
        Self {
            height: 1,
            width: n,
            points,
            valid: vec![true; n],
            frame,
            stamp,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Iterator over `(index, point)` for valid entries.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, &Point3)> + '_ {
        self.points.iter().enumerate().filter(move |(i, _)| self.valid[*i])
    }

    pub fn with_frame(mut self, frame: Frame) -> Self {
        self.frame = frame;
        self
    }
}

/// Cylindrical projection model of a spinning LiDAR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorModel {
    /// Upper aperture angle, radians.
    pub f_up: f64,
    /// Lower aperture angle, radians.
    pub f_down: f64,
    pub height: usize,
    pub width: usize,
    pub max_range: f64,
    /// Azimuth of the left edge of column 0, measured from +x towards +y.
    pub azimuth_offset: f64,
}

impl SensorModel {
    pub fn new(f_up: f64, f_down: f64, height: usize, width: usize, max_range: f64) -> Result<Self> {
        let m = Self {
            f_up,
            f_down,
            height,
            width,
            max_range,
            azimuth_offset: 0.0,
        };
        m.validate()?;
        Ok(m)
    }

    /// Ouster OS-1 style 64-beam sensor with a ±22.5° vertical aperture.
    pub fn os1_64(width: usize) -> Self {
        Self {
            f_up: 22.5f64.to_radians(),
            f_down: -22.5f64.to_radians(),
            height: 64,
            width,
            max_range: 100.0,
            azimuth_offset: 0.0,
        }
    }

    /// Ouster OS-0 style 128-beam sensor with a ±45° vertical aperture.
    pub fn os0_128() -> Self {
        Self {
            f_up: 45f64.to_radians(),
            f_down: -45f64.to_radians(),
            height: 128,
            width: 1024,
            max_range: 50.0,
            azimuth_offset: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_up > self.f_down) {
            return Err(Error::Config("sensor f_up must exceed f_down".into()));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("sensor image must be non-empty".into()));
        }
        if !(self.max_range > 0.0) {
            return Err(Error::Config("sensor max_range must be positive".into()));
        }
        if !self.azimuth_offset.is_finite() {
            return Err(Error::Config("sensor azimuth_offset must be finite".into()));
        }
        Ok(())
    }

    /// Vertical resolution, radians per row.
    pub fn alpha_v(&self) -> f64 {
        (self.f_up - self.f_down) / self.height as f64
    }

    /// Horizontal resolution, radians per column.
    pub fn alpha_h(&self) -> f64 {
        2.0 * PI / self.width as f64
    }

    /// Elevation of the center of row `u`.
    pub fn row_elevation(&self, u: usize) -> f64 {
        self.f_up - (u as f64 + 0.5) * self.alpha_v()
    }

    /// Azimuth of the center of column `v`.
    pub fn column_azimuth(&self, v: usize) -> f64 {
        self.azimuth_offset + (v as f64 + 0.5) * self.alpha_h()
    }

    /// Unit ray through the center of pixel `(u, v)` in the sensor frame.
    pub fn ray_direction(&self, u: usize, v: usize) -> Vector3<f64> {
        let el = self.row_elevation(u);
        let az = self.column_azimuth(v);
        Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
    }
}

/// SE(3) pose stored as a rotation matrix and translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform, rejecting matrices that are not proper rotations.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if ortho > 1e-6 || (rotation.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::DegenerateInput("rotation is not orthonormal"));
        }
        Ok(Self { rotation, translation }.renormalized())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation by `yaw` about +z followed by translation.
    pub fn from_yaw(yaw: f64, t: Vector3<f64>) -> Self {
        Self {
            rotation: *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix(),
            translation: t,
        }
    }

    /// Rotation given as an axis-angle vector (direction = axis, norm = angle).
    pub fn from_axis_angle(axis_angle: Vector3<f64>, t: Vector3<f64>) -> Self {
        Self {
            rotation: *Rotation3::new(axis_angle).matrix(),
            translation: t,
        }
    }

    pub fn from_quaternion(q: UnitQuaternion<f64>, t: Vector3<f64>) -> Self {
        Self {
            rotation: *q.to_rotation_matrix().matrix(),
            translation: t,
        }
    }

    /// Left increment `(ω, v)`: the result maps `p` to `Exp(ω)·(R·p + t) + v`.
    pub fn perturbed(&self, delta: &Vector6<f64>) -> Self {
        let omega = Vector3::new(delta[0], delta[1], delta[2]);
        let v = Vector3::new(delta[3], delta[4], delta[5]);
        let dr = Rotation3::new(omega);
        Self {
            rotation: dr.matrix() * self.rotation,
            translation: dr * self.translation + v,
        }
        .renormalized()
    }

    /// Returns `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
        .renormalized()
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    /// Transforms every valid point; invalid entries and structure are kept.
    pub fn apply(&self, cloud: &StructuredCloud) -> StructuredCloud {
        let points = cloud
            .points
            .iter()
            .zip(&cloud.valid)
            .map(|(p, &ok)| if ok { self.transform_point(p) } else { *p })
            .collect();
        StructuredCloud {
            points,
            valid: cloud.valid.clone(),
            ..*cloud
        }
    }

    /// Heading about world z, from the rotated x axis.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    /// Magnitude of the rotation, radians in [0, π].
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        c.acos()
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix(&self.rotation)
    }

    /// Projects the rotation back onto SO(3) when it has drifted.
    pub fn renormalized(mut self) -> Self {
        let drift = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        if drift > ORTHO_TOL {
            let svd = self.rotation.svd(true, true);
            let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
            let mut r = u * vt;
            if r.determinant() < 0.0 {
                let mut u2 = u;
                u2.column_mut(2).neg_mut();
                r = u2 * vt;
            }
            self.rotation = r;
        }
        self
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

impl Mul<&RigidTransform> for &RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: &RigidTransform) -> RigidTransform {
        self.compose(rhs)
    }
}

/// Wraps an angle into (−π, π].
pub fn wrap_pi(a: f64) -> f64 {
    let mut x = a.rem_euclid(2.0 * PI);
    if x > PI {
        x -= 2.0 * PI;
    }
    x
}

/// Wraps an angle into (−π/2, π/2]; boxes and axes are π-symmetric.
pub fn wrap_half_pi(a: f64) -> f64 {
    let mut x = a.rem_euclid(PI);
    if x > PI / 2.0 {
        x -= PI;
    }
    x
}

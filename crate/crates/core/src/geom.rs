//! Pinhole camera model and rigid poses.
//!
//! Poses are world-to-camera: a world point `p` maps to camera coordinates
//! `R * p + t`. Pose increments are 6-vectors `[ω, v]` (rotation tangent,
//! then translation) applied on the left:
//! `R' = exp(ω) R`, `t' = exp(ω) t + v`.
//!
//! Reprojection residuals are `projected - observed`, in pixels.

use nalgebra::{Matrix2x3, Matrix2x6, Matrix3, Point2, Point3, UnitQuaternion, Vector2, Vector3, Vector6};
use thiserror::Error;

/// A 3D point in scene units.
pub type WorldPoint = Point3<f64>;
/// Image coordinates in pixels.
pub type PixelPoint = Point2<f64>;

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeomError> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(GeomError::InvalidIntrinsics("focal lengths must be positive"));
        }
        if width == 0 || height == 0 {
            return Err(GeomError::InvalidIntrinsics("sensor size must be positive"));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(GeomError::InvalidIntrinsics("principal point must be finite"));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    pub fn contains(&self, px: &PixelPoint) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < self.width as f64 && px.y < self.height as f64
    }

    /// Normalized image coordinates `K^-1 [u, v, 1]`.
    pub fn normalize(&self, px: &PixelPoint) -> Vector3<f64> {
        Vector3::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy, 1.0)
    }

    /// Unit bearing vector in the camera frame.
    pub fn bearing(&self, px: &PixelPoint) -> Vector3<f64> {
        self.normalize(px).normalize()
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Projects a point given in camera coordinates. `None` if it is not in front.
    pub fn project_camera_point(&self, xc: &Vector3<f64>) -> Option<PixelPoint> {
        if xc.z <= 0.0 {
            return None;
        }
        Some(PixelPoint::new(
            self.fx * xc.x / xc.z + self.cx,
            self.fy * xc.y / xc.z + self.cy,
        ))
    }
}

/// Rigid world-to-camera transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3 {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3 {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self { rotation: UnitQuaternion::identity(), translation: Vector3::zeros() }
    }

    /// Builds the pose of a camera centered at `center` with world-to-camera rotation `rotation`.
    pub fn from_center(rotation: UnitQuaternion<f64>, center: &WorldPoint) -> Self {
        Self { rotation, translation: -(rotation * center.coords) }
    }

    pub fn transform_point(&self, p: &WorldPoint) -> Vector3<f64> {
        self.rotation * p.coords + self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> WorldPoint {
        Point3::from(-(self.rotation.inverse() * self.translation))
    }

    /// Optical axis expressed in world coordinates.
    pub fn viewing_direction(&self) -> Vector3<f64> {
        self.rotation.inverse() * Vector3::z()
    }

    pub fn inverse(&self) -> Self {
        let rinv = self.rotation.inverse();
        Self { rotation: rinv, translation: -(rinv * self.translation) }
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &PoseSE3) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Left-multiplicative update by `[ω, v]`, renormalizing the quaternion.
    pub fn retract(&self, delta: &Vector6<f64>) -> Self {
        let omega = Vector3::new(delta[0], delta[1], delta[2]);
        let v = Vector3::new(delta[3], delta[4], delta[5]);
        let dq = UnitQuaternion::from_scaled_axis(omega);
        let rotation = UnitQuaternion::new_normalize((dq * self.rotation).into_inner());
        Self { rotation, translation: dq * self.translation + v }
    }

    /// Angle between the rotations of two poses, radians.
    pub fn rotation_angle_to(&self, other: &PoseSE3) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }
}

pub fn se3_compose(a: &PoseSE3, b: &PoseSE3) -> PoseSE3 {
    a.compose(b)
}

pub fn se3_inverse(a: &PoseSE3) -> PoseSE3 {
    a.inverse()
}

/// Pinhole projection; `None` when the point is at or behind the camera plane.
pub fn project(intr: &CameraIntrinsics, pose: &PoseSE3, p: &WorldPoint) -> Option<PixelPoint> {
    intr.project_camera_point(&pose.transform_point(p))
}

/// `project(..) - obs`.
pub fn reprojection_residual(
    intr: &CameraIntrinsics,
    pose: &PoseSE3,
    p: &WorldPoint,
    obs: &PixelPoint,
) -> Option<Vector2<f64>> {
    project(intr, pose, p).map(|px| px - obs)
}

/// Jacobians of the projection with respect to the camera-frame point.
#[inline]
pub(crate) fn projection_jacobian(intr: &CameraIntrinsics, xc: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / xc.z;
    let iz2 = iz * iz;
    Matrix2x3::new(
        intr.fx * iz,
        0.0,
        -intr.fx * xc.x * iz2,
        0.0,
        intr.fy * iz,
        -intr.fy * xc.y * iz2,
    )
}

/// Residual Jacobians with respect to a left pose increment `[ω, v]` (2×6)
/// and the world point (2×3). `None` when the point is behind the camera.
pub fn residual_jacobian(
    intr: &CameraIntrinsics,
    pose: &PoseSE3,
    p: &WorldPoint,
) -> Option<(Matrix2x6<f64>, Matrix2x3<f64>)> {
    let rot = pose.rotation_matrix();
    let xc = rot * p.coords + pose.translation;
    if xc.z <= 0.0 {
        return None;
    }
    Some(jacobians_at(intr, &rot, &xc))
}

#[inline]
pub(crate) fn jacobians_at(
    intr: &CameraIntrinsics,
    rot: &Matrix3<f64>,
    xc: &Vector3<f64>,
) -> (Matrix2x6<f64>, Matrix2x3<f64>) {
    let dproj = projection_jacobian(intr, xc);
    // d(xc)/d(omega) = -[xc]_x, d(xc)/dv = I
    let skew = Matrix3::new(0.0, -xc.z, xc.y, xc.z, 0.0, -xc.x, -xc.y, xc.x, 0.0);
    let drot = -(dproj * skew);
    let mut jpose = Matrix2x6::zeros();
    jpose.fixed_view_mut::<2, 3>(0, 0).copy_from(&drot);
    jpose.fixed_view_mut::<2, 3>(0, 3).copy_from(&dproj);
    (jpose, dproj * rot)
}

/// Angle in radians between two vectors.
pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let c = a.dot(b) / (a.norm() * b.norm());
    c.clamp(-1.0, 1.0).acos()
}

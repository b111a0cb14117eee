//! Pinhole look-at cameras. World up is `+Z`; orbit azimuth is measured in
//! the XY plane from `+X`, elevation from the XY plane.

use nalgebra::Vector3;
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("camera position coincides with its target")]
    PositionAtTarget,
    #[error("vertical field of view {0} is outside (0, pi)")]
    BadFov(f64),
    #[error("up vector is parallel to the viewing direction")]
    UpParallel,
    #[error("camera resolution must be non-zero (got {0}x{1})")]
    EmptyResolution(usize, usize),
    #[error("orbit radius {0} must be positive and finite")]
    BadRadius(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub target: Vec3,
    pub up: Vec3,
    /// Vertical field of view in radians.
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(
        position: Vec3,
        target: Vec3,
        up: Vec3,
        fov_y: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, CameraError> {
        let cam = Self {
            position,
            target,
            up,
            fov_y,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// A camera on a sphere of `radius` around `target`, looking at it.
    pub fn orbit(
        target: Vec3,
        radius: f64,
        azimuth: f64,
        elevation: f64,
        fov_y: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, CameraError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(CameraError::BadRadius(radius));
        }
        let dir = Vec3::new(
            elevation.cos() * azimuth.cos(),
            elevation.cos() * azimuth.sin(),
            elevation.sin(),
        );
        Self::new(
            target + dir * radius,
            target,
            Vec3::z(),
            fov_y,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::EmptyResolution(self.width, self.height));
        }
        if !(self.fov_y > 0.0 && self.fov_y < std::f64::consts::PI) {
            return Err(CameraError::BadFov(self.fov_y));
        }
        let view = self.target - self.position;
        if !(view.norm() > 1e-12) {
            return Err(CameraError::PositionAtTarget);
        }
        let cross = view.normalize().cross(&self.up);
        if !(cross.norm() > 1e-9 * self.up.norm().max(1e-300)) || self.up.norm() == 0.0 {
            return Err(CameraError::UpParallel);
        }
        Ok(())
    }

    /// Orthonormal `(forward, right, up)` frame.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let forward = (self.target - self.position).normalize();
        let right = forward.cross(&self.up).normalize();
        let up = right.cross(&forward);
        (forward, right, up)
    }

    /// Focal length in pixels.
    pub fn focal_px(&self) -> f64 {
        0.5 * self.height as f64 / (0.5 * self.fov_y).tan()
    }

    /// Ray through the center of pixel `(x, y)`; `y = 0` is the top row.
    pub fn ray(&self, x: usize, y: usize) -> Ray {
        let (forward, right, up) = self.basis();
        let f = self.focal_px();
        let u = (x as f64 + 0.5 - 0.5 * self.width as f64) / f;
        let v = (0.5 * self.height as f64 - (y as f64 + 0.5)) / f;
        Ray {
            origin: self.position,
            dir: (forward + right * u + up * v).normalize(),
        }
    }

    /// `(radius, azimuth, elevation)` of the position relative to the target.
    pub fn orbit_params(&self) -> (f64, f64, f64) {
        let d = self.position - self.target;
        let r = d.norm();
        let az = d.y.atan2(d.x);
        let el = (d.z / r).clamp(-1.0, 1.0).asin();
        (r, az, el)
    }
}

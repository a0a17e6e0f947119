use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::ScanError;

/// Pinhole camera. Pixel rows run top to bottom, columns left to right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    pub up: [f64; 3],
    pub vertical_fov: f64,
    pub width: usize,
    pub height: usize,
}

/// Vertical field of view used when none is given (radians).
pub const DEFAULT_FOV: f64 = 35.0 * PI / 180.0;

impl Camera {
    pub fn new(
        position: Vector3<f64>,
        look_at: Vector3<f64>,
        up: Vector3<f64>,
        vertical_fov: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, ScanError> {
        let cam = Self {
            position: position.into(),
            look_at: look_at.into(),
            up: up.into(),
            vertical_fov,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), ScanError> {
        let fwd = Vector3::from(self.look_at) - Vector3::from(self.position);
        if fwd.norm() == 0.0 {
            return Err(ScanError::InvalidCamera("position equals look_at".into()));
        }
        let up = Vector3::from(self.up);
        if up.norm() == 0.0 || fwd.normalize().cross(&up.normalize()).norm() < 1e-9 {
            return Err(ScanError::InvalidCamera(
                "up vector is parallel to the view direction".into(),
            ));
        }
        if !(self.vertical_fov > 0.0 && self.vertical_fov < PI) {
            return Err(ScanError::InvalidCamera(format!(
                "field of view {} outside (0, pi)",
                self.vertical_fov
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(ScanError::InvalidCamera("zero image size".into()));
        }
        Ok(())
    }

    pub fn origin(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }

    /// Orthonormal (forward, right, true-up) basis.
    pub fn basis(&self) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let fwd = (Vector3::from(self.look_at) - Vector3::from(self.position)).normalize();
        let right = fwd.cross(&Vector3::from(self.up)).normalize();
        let up = right.cross(&fwd);
        (fwd, right, up)
    }

    /// Unit ray direction through the center of pixel (row, col).
    pub fn ray_dir(&self, row: usize, col: usize) -> Vector3<f64> {
        let (fwd, right, up) = self.basis();
        self.ray_dir_in(&fwd, &right, &up, row, col)
    }

    #[inline]
    pub(crate) fn ray_dir_in(
        &self,
        fwd: &Vector3<f64>,
        right: &Vector3<f64>,
        up: &Vector3<f64>,
        row: usize,
        col: usize,
    ) -> Vector3<f64> {
        let tan_v = (self.vertical_fov / 2.0).tan();
        let aspect = self.width as f64 / self.height as f64;
        let sx = ((col as f64 + 0.5) / self.width as f64 * 2.0 - 1.0) * tan_v * aspect;
        let sy = (1.0 - (row as f64 + 0.5) / self.height as f64 * 2.0) * tan_v;
        (fwd + right * sx + up * sy).normalize()
    }

    /// Angular size of one pixel (radians, vertical).
    pub fn pixel_angle(&self) -> f64 {
        self.vertical_fov / self.height as f64
    }
}

/// Deterministic stratified viewpoints on the upper half of the hemisphere
/// restricted to azimuths in [0, pi] (the +y half-space).
///
/// Elevation follows equal-area strata `sin(el) = k/n`; azimuth advances by the
/// golden ratio folded into [0, pi], starting at pi/2 (the +y axis).
pub fn hemisphere_views(
    n: usize,
    radius: f64,
    target: Vector3<f64>,
    image_size: usize,
    vertical_fov: f64,
) -> Result<Vec<Camera>, ScanError> {
    if n == 0 {
        return Err(ScanError::InvalidCamera("need at least one view".into()));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(ScanError::InvalidCamera(format!("radius {radius} must be positive")));
    }
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    (0..n)
        .map(|k| {
            let elevation = (k as f64 / n as f64).asin();
            let azimuth = PI * (0.5 + k as f64 * inv_phi).fract();
            debug_assert!((0.0..FRAC_PI_2).contains(&elevation));
            let dir = Vector3::new(
                elevation.cos() * azimuth.cos(),
                elevation.cos() * azimuth.sin(),
                elevation.sin(),
            );
            Camera::new(
                target + dir * radius,
                target,
                Vector3::z(),
                vertical_fov,
                image_size,
                image_size,
            )
        })
        .collect()
}

/// Azimuth of a camera around `target` in the x-y plane, in (-pi, pi].
pub fn azimuth_of(cam: &Camera, target: &Vector3<f64>) -> f64 {
    let d = cam.origin() - target;
    d.y.atan2(d.x)
}

use std::f64::consts::{FRAC_PI_2, PI};

use super::{angle_between, GeometryError, UnitQuat, Vec3};

/// Dot-product margin under which a direction counts as on the lens seam.
const SEAM_TOLERANCE: f64 = 1e-12;

/// Two back-to-back equidistant fisheye lenses (`r = focal · θ`), each
/// imaged onto its own square frame.
///
/// A lens orientation maps the lens frame onto the camera frame: lens +Z is
/// the optical axis, lens +X is the +u image axis and lens +Y is +v.
#[derive(Debug, Clone, PartialEq)]
pub struct FisheyeModel {
    pub image_size: u32,
    pub principal_point: [f64; 2],
    /// Pixels per radian.
    pub focal: f64,
    pub lens_forward: [UnitQuat; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisheyeSample {
    pub lens: usize,
    pub u: f64,
    pub v: f64,
}

impl FisheyeModel {
    /// Hemispherical lenses looking along +Z and −Z with the principal
    /// point at the image center and `focal = image_size / π`.
    pub fn dual_hemisphere(image_size: u32) -> Self {
        let c = image_size as f64 / 2.0;
        Self {
            image_size,
            principal_point: [c, c],
            focal: image_size as f64 / PI,
            lens_forward: [
                UnitQuat::identity(),
                UnitQuat::from_axis_angle(&Vec3::y_axis(), PI),
            ],
        }
    }

    pub fn new(
        image_size: u32,
        principal_point: [f64; 2],
        focal: f64,
        lens_forward: [UnitQuat; 2],
    ) -> Result<Self, GeometryError> {
        let model = Self { image_size, principal_point, focal, lens_forward };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.image_size == 0 {
            return Err(GeometryError::InvalidModel("image size must be positive".into()));
        }
        if !(self.focal > 0.0) || !self.focal.is_finite() {
            return Err(GeometryError::InvalidModel(format!("focal must be positive, got {}", self.focal)));
        }
        if self.focal * FRAC_PI_2 > self.image_size as f64 / 2.0 + 1e-9 {
            return Err(GeometryError::InvalidModel(format!(
                "hemisphere radius {:.3} px exceeds half the image size",
                self.focal * FRAC_PI_2
            )));
        }
        Ok(())
    }

    pub fn forward_axis(&self, lens: usize) -> Vec3 {
        self.lens_forward[lens] * Vec3::z()
    }

    /// Projects a unit direction (camera frame) to the lens facing it.
    /// Directions exactly on the seam between lenses go to lens 0.
    pub fn project(&self, dir: &Vec3) -> FisheyeSample {
        let d0 = dir.dot(&self.forward_axis(0));
        let d1 = dir.dot(&self.forward_axis(1));
        let lens = if d1 > d0 + SEAM_TOLERANCE { 1 } else { 0 };

        let local = self.lens_forward[lens].inverse() * dir;
        let in_plane = local.xy().norm();
        let [cx, cy] = self.principal_point;
        if in_plane == 0.0 {
            return FisheyeSample { lens, u: cx, v: cy };
        }
        let theta = in_plane.atan2(local.z);
        let r = self.focal * theta;
        FisheyeSample { lens, u: cx + r * local.x / in_plane, v: cy + r * local.y / in_plane }
    }

    /// Unit direction seen by `lens` at pixel `(u, v)`.
    pub fn unproject(&self, lens: usize, u: f64, v: f64) -> Result<Vec3, GeometryError> {
        if lens > 1 {
            return Err(GeometryError::InvalidLens(lens));
        }
        let du = u - self.principal_point[0];
        let dv = v - self.principal_point[1];
        let r = du.hypot(dv);
        if r > self.focal * FRAC_PI_2 + 1.0 {
            return Err(GeometryError::OutOfLensField { u, v });
        }
        if r == 0.0 {
            return Ok(self.forward_axis(lens));
        }
        let theta = r / self.focal;
        let (s, c) = theta.sin_cos();
        let local = Vec3::new(s * du / r, s * dv / r, c);
        Ok((self.lens_forward[lens] * local).normalize())
    }

    /// Angular error of `unproject(project(dir))` relative to `dir`.
    pub fn roundtrip_error(&self, dir: &Vec3) -> Result<f64, GeometryError> {
        let s = self.project(dir);
        let back = self.unproject(s.lens, s.u, s.v)?;
        Ok(angle_between(&back, dir))
    }
}

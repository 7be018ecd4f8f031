use super::{GeometryError, SimTransform, Vec3};

/// Headset eye cameras. `monocular` records that the right eye has already
/// been collapsed onto the left one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoRig {
    pub left_eye_pose: SimTransform,
    pub right_eye_pose: SimTransform,
    pub ipd: f64,
    pub monocular: bool,
}

impl StereoRig {
    pub fn new(left_eye_pose: SimTransform, right_eye_pose: SimTransform, ipd: f64) -> Result<Self, GeometryError> {
        if !(ipd > 0.0) || !ipd.is_finite() {
            return Err(GeometryError::InvalidRig(format!("ipd must be positive, got {ipd}")));
        }
        Ok(Self { left_eye_pose, right_eye_pose, ipd, monocular: false })
    }

    /// Symmetric rig around `head`: eyes at ±ipd/2 along the head's local +X.
    pub fn symmetric(head: &SimTransform, ipd: f64) -> Result<Self, GeometryError> {
        let offset = |sign: f64| head.compose(&SimTransform::from_translation(Vec3::new(sign * ipd / 2.0, 0.0, 0.0)));
        Self::new(offset(-1.0), offset(1.0), ipd)
    }

    /// Rig-local right axis, taken from the left eye orientation.
    pub fn right_axis(&self) -> Vec3 {
        self.left_eye_pose.rotation * Vec3::x()
    }

    /// Shifts the right eye left by the IPD so both eyes render from the
    /// same point, matching the monocular 360° video.
    pub fn apply_monocular(&self) -> StereoRig {
        if self.monocular {
            return *self;
        }
        let mut right = self.right_eye_pose;
        right.translation -= self.right_axis() * self.ipd;
        StereoRig { right_eye_pose: right, monocular: true, ..*self }
    }

    pub fn eye_separation(&self) -> f64 {
        (self.left_eye_pose.translation - self.right_eye_pose.translation).norm()
    }
}

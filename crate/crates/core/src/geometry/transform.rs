use super::{UnitQuat, Vec3};

/// Rotation, translation and uniform scale: `p ↦ scale · R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimTransform {
    pub rotation: UnitQuat,
    pub translation: Vec3,
    pub scale: f64,
}

impl Default for SimTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimTransform {
    pub fn identity() -> Self {
        Self { rotation: UnitQuat::identity(), translation: Vec3::zeros(), scale: 1.0 }
    }

    /// Panics if `scale` is not strictly positive and finite.
    pub fn new(rotation: UnitQuat, translation: Vec3, scale: f64) -> Self {
        assert!(scale > 0.0 && scale.is_finite(), "similarity scale must be positive, got {scale}");
        Self { rotation, translation, scale }
    }

    pub fn rigid(rotation: UnitQuat, translation: Vec3) -> Self {
        Self { rotation, translation, scale: 1.0 }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self { translation, ..Self::identity() }
    }

    pub fn from_rotation(rotation: UnitQuat) -> Self {
        Self { rotation, ..Self::identity() }
    }

    pub fn from_scale(scale: f64) -> Self {
        Self::new(UnitQuat::identity(), Vec3::zeros(), scale)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p * self.scale + self.translation
    }

    /// Rotates and scales a vector; translation does not apply.
    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v * self.scale
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &SimTransform) -> SimTransform {
        SimTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation * self.scale + self.translation,
            scale: self.scale * other.scale,
        }
    }

    pub fn inverse(&self) -> SimTransform {
        let rotation = self.rotation.inverse();
        let scale = 1.0 / self.scale;
        SimTransform { rotation, translation: -(rotation * self.translation) * scale, scale }
    }

    /// 4×4 homogeneous matrix of the transform.
    pub fn to_matrix(&self) -> nalgebra::Matrix4<f64> {
        let mut m = nalgebra::Matrix4::identity();
        let r = self.rotation.to_rotation_matrix().into_inner() * self.scale;
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Largest deviation between two transforms: translation distance,
    /// rotation angle (radians) and relative scale difference.
    pub fn distance(&self, other: &SimTransform) -> f64 {
        let dt = (self.translation - other.translation).norm();
        let dr = self.rotation.angle_to(&other.rotation);
        let ds = (self.scale - other.scale).abs() / self.scale.max(other.scale);
        dt.max(dr).max(ds)
    }

    /// `[x, y, z, qw, qx, qy, qz]`, the pose layout used by capture manifests.
    pub fn to_pose7(&self) -> [f64; 7] {
        let q = self.rotation.quaternion();
        let t = self.translation;
        [t.x, t.y, t.z, q.w, q.i, q.j, q.k]
    }

    /// Inverse of [`to_pose7`](Self::to_pose7); the quaternion is renormalized.
    pub fn from_pose7(p: [f64; 7]) -> Option<SimTransform> {
        let q = nalgebra::Quaternion::new(p[3], p[4], p[5], p[6]);
        if !(q.norm() > 1e-12) || p.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some(SimTransform::rigid(UnitQuat::from_quaternion(q), Vec3::new(p[0], p[1], p[2])))
    }
}

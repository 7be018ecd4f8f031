//! Rigid/similarity transforms, anchor-based space alignment, dual-lens
//! equidistant fisheye projection and the monocular stereo-rig adjustment.

mod align;
mod fisheye;
mod rig;
mod transform;

pub use align::{align_spaces, marker_corners, AnchorId, AnchorObservation, Alignment, MARKER_HALF_WIDTH};
pub use fisheye::{FisheyeModel, FisheyeSample};
pub use rig::StereoRig;
pub use transform::SimTransform;

use thiserror::Error;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type UnitQuat = nalgebra::UnitQuaternion<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("anchor observations coincide; alignment is degenerate")]
    DegenerateAnchors,
    #[error("invalid anchor observations: {0}")]
    InvalidAnchors(String),
    #[error("pixel ({u}, {v}) lies outside the lens field")]
    OutOfLensField { u: f64, v: f64 },
    #[error("lens index {0} does not exist")]
    InvalidLens(usize),
    #[error("invalid lens model: {0}")]
    InvalidModel(String),
    #[error("invalid stereo rig: {0}")]
    InvalidRig(String),
}

/// Angle in radians between two (not necessarily unit) vectors.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    // atan2 keeps precision for nearly parallel vectors where acos does not.
    a.cross(b).norm().atan2(a.dot(b))
}

//! Virtual-replica pipeline: turns an RGBD capture of a small object on a
//! table into a vertex-colored, watertight triangle mesh.
//!
//! Stages run in order: depth reprojection, plane fitting, coarse mask,
//! mask refinement, pose refinement, reconstruction, surface extraction,
//! post-processing and OBJ emission. Mask refinement, pose refinement and
//! reconstruction are traits so other implementations can be swapped in.

mod capture;
mod image_io;
mod marching_cubes;
mod mask;
mod pipeline;
mod postprocess;
mod ransac;
mod reproject;
mod synth;
mod tsdf;

use image::{ImageBuffer, Luma, RgbImage};
use thiserror::Error;

use crate::geometry::{SimTransform, Vec3};

pub use capture::{load_capture, save_capture, CaptureManifest, FrameEntry, GroundTruth, PlaneSeed, MANIFEST_FILE};
pub use image_io::{read_depth_pgm, read_color_ppm, write_depth_pgm, write_color_ppm};
pub use marching_cubes::{marching_cubes, ScalarGrid};
pub use mask::{coarse_mask, IdentityRefiner, Mask, MaskRefiner, MorphologicalRefiner, MIN_MASK_PIXELS};
pub use pipeline::{
    run_frames, run_pipeline, PassthroughPoses, PipelineConfig, PipelineOutput, PoseRefiner, Reconstruction, Reconstructor,
    StageSet, StageTiming, TimingReport, TsdfReconstructor,
};
pub use postprocess::{laplacian_smooth, postprocess, voxel_remesh};
pub use ransac::{fit_plane_ransac, RansacParams};
pub use reproject::{reproject_depth, unproject_registered};
pub use synth::{look_at, object_silhouette, synth_capture, SynthParams, SynthShape};
pub use tsdf::{fuse_tsdf, TsdfGrid, MaskedFrame};

/// 16-bit depth in millimeters; 0 marks an invalid pixel.
pub type DepthImage = ImageBuffer<Luma<u16>, Vec<u16>>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplicaError {
    #[error("plane fit needs at least 3 non-collinear points, got {0} usable")]
    InsufficientPoints(usize),
    #[error("coarse mask has {pixels} foreground pixels, need at least {required}")]
    EmptyMask { pixels: usize, required: usize },
    #[error("reconstruction needs at least {required} frames, got {found}")]
    TooFewFrames { found: usize, required: usize },
    #[error("no voxel was observed near a surface")]
    EmptyGrid,
    #[error("mesh is empty")]
    EmptyMesh,
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("capture manifest: {0}")]
    Manifest(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("stage {stage} failed: {cause}")]
    Stage { stage: String, cause: Box<ReplicaError> },
}

impl ReplicaError {
    pub(crate) fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        ReplicaError::Io { path: path.display().to_string(), message: e.to_string() }
    }

    /// The stage name, for errors raised by [`run_pipeline`].
    pub fn stage(&self) -> Option<&str> {
        match self {
            ReplicaError::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}

/// Pinhole intrinsics in pixels. Pixel `(u, v)` has its center at the
/// integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<(), ReplicaError> {
        let ok = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite()) && self.fx > 0.0 && self.fy > 0.0;
        if ok {
            Ok(())
        } else {
            Err(ReplicaError::InvalidFrame(format!("intrinsics {self:?}")))
        }
    }

    /// Camera-frame point at pixel `(u, v)` and depth `z` (meters).
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z)
    }

    /// Pixel coordinates of a camera-frame point in front of the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        (p.z > 0.0).then(|| (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }
}

/// One RGBD capture. Cameras look along +Z with +X right and +Y down.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdFrame {
    pub color: RgbImage,
    pub depth: DepthImage,
    pub color_intrinsics: Intrinsics,
    pub depth_intrinsics: Intrinsics,
    /// Maps depth-camera coordinates into color-camera coordinates.
    pub depth_to_color: SimTransform,
    /// Color camera to world.
    pub camera_pose: SimTransform,
}

impl RgbdFrame {
    pub fn validate(&self) -> Result<(), ReplicaError> {
        if self.color.width() == 0 || self.color.height() == 0 || self.depth.width() == 0 || self.depth.height() == 0 {
            return Err(ReplicaError::InvalidFrame("image dimensions must be positive".into()));
        }
        self.color_intrinsics.validate()?;
        self.depth_intrinsics.validate()
    }
}

/// `normal · p = offset` with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneModel {
    pub normal: Vec3,
    pub offset: f64,
    pub inlier_threshold: f64,
}

impl PlaneModel {
    pub fn new(normal: Vec3, offset: f64, inlier_threshold: f64) -> Self {
        let n = normal.norm();
        Self { normal: normal / n, offset: offset / n, inlier_threshold }
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }

    pub fn is_inlier(&self, p: &Vec3) -> bool {
        self.signed_distance(p).abs() <= self.inlier_threshold
    }
}

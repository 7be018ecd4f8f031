//! Capture directories: `manifest.json` plus one color PPM and one 16-bit
//! depth PGM per frame.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::image_io::{read_color_ppm, read_depth_pgm, write_color_ppm, write_depth_pgm};
use super::{Intrinsics, PlaneModel, ReplicaError, RgbdFrame};
use crate::geometry::{SimTransform, Vec3};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub color: String,
    pub depth: String,
    /// Color camera to world as `[x, y, z, qw, qx, qy, qz]`.
    pub pose: [f64; 7],
}

/// Initial table plane `normal · p = offset`, as reported by the headset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneSeed {
    pub normal: [f64; 3],
    pub offset: f64,
}

impl PlaneSeed {
    pub fn to_plane(&self, inlier_threshold: f64) -> PlaneModel {
        PlaneModel::new(Vec3::from(self.normal), self.offset, inlier_threshold)
    }
}

/// Analytic description of a synthetic capture's object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum GroundTruth {
    Sphere { center: [f64; 3], radius: f64 },
    Box { center: [f64; 3], half_extents: [f64; 3] },
}

impl GroundTruth {
    /// Exact signed distance, negative inside.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        match *self {
            GroundTruth::Sphere { center, radius } => (p - Vec3::from(center)).norm() - radius,
            GroundTruth::Box { center, half_extents } => {
                let q = (p - Vec3::from(center)).abs() - Vec3::from(half_extents);
                q.sup(&Vec3::zeros()).norm() + q.max().min(0.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureManifest {
    pub capture_rate_hz: f64,
    pub duration_s: f64,
    pub color_intrinsics: Intrinsics,
    pub depth_intrinsics: Intrinsics,
    /// Depth camera to color camera, same layout as frame poses.
    pub depth_to_color: [f64; 7],
    pub plane_seed: PlaneSeed,
    pub frames: Vec<FrameEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruth>,
}

fn pose(p: [f64; 7], what: &str) -> Result<SimTransform, ReplicaError> {
    SimTransform::from_pose7(p).ok_or_else(|| ReplicaError::Manifest(format!("{what}: invalid pose {p:?}")))
}

impl CaptureManifest {
    pub fn from_json(text: &str) -> Result<Self, ReplicaError> {
        let m: CaptureManifest = serde_json::from_str(text).map_err(|e| ReplicaError::Manifest(e.to_string()))?;
        m.color_intrinsics.validate()?;
        m.depth_intrinsics.validate()?;
        pose(m.depth_to_color, "depth_to_color")?;
        for (i, f) in m.frames.iter().enumerate() {
            pose(f.pose, &format!("frame {i}"))?;
        }
        if !(Vec3::from(m.plane_seed.normal).norm() > 1e-9) {
            return Err(ReplicaError::Manifest("plane seed normal is zero".into()));
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

/// Reads the manifest and every frame it lists.
pub fn load_capture(dir: &Path) -> Result<(CaptureManifest, Vec<RgbdFrame>), ReplicaError> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| ReplicaError::io(&path, e))?;
    let manifest = CaptureManifest::from_json(&text)?;
    let depth_to_color = pose(manifest.depth_to_color, "depth_to_color")?;
    let frames = manifest
        .frames
        .par_iter()
        .map(|entry| {
            let frame = RgbdFrame {
                color: read_color_ppm(&dir.join(&entry.color))?,
                depth: read_depth_pgm(&dir.join(&entry.depth))?,
                color_intrinsics: manifest.color_intrinsics,
                depth_intrinsics: manifest.depth_intrinsics,
                depth_to_color,
                camera_pose: pose(entry.pose, &entry.color)?,
            };
            frame.validate()?;
            Ok(frame)
        })
        .collect::<Result<Vec<_>, ReplicaError>>()?;
    Ok((manifest, frames))
}

/// Writes `frames` under the file names listed in `manifest`, then the
/// manifest itself.
pub fn save_capture(dir: &Path, manifest: &CaptureManifest, frames: &[RgbdFrame]) -> Result<(), ReplicaError> {
    if manifest.frames.len() != frames.len() {
        return Err(ReplicaError::Manifest(format!(
            "manifest lists {} frames, got {}",
            manifest.frames.len(),
            frames.len()
        )));
    }
    std::fs::create_dir_all(dir).map_err(|e| ReplicaError::io(dir, e))?;
    manifest.frames.par_iter().zip(frames).try_for_each(|(entry, frame)| {
        write_color_ppm(&dir.join(&entry.color), &frame.color)?;
        write_depth_pgm(&dir.join(&entry.depth), &frame.depth)
    })?;
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, manifest.to_json()).map_err(|e| ReplicaError::io(&path, e))
}

use image::{Luma, RgbImage};
use rayon::prelude::*;

use super::mask::Mask;
use super::{DepthImage, Intrinsics, ReplicaError};
use crate::geometry::{SimTransform, Vec3};

/// Upper bound on voxels in an automatically sized grid.
const MAX_VOXELS: usize = 1 << 26;

/// A frame ready for fusion: depth registered to the color camera plus the
/// object mask.
#[derive(Debug, Clone)]
pub struct MaskedFrame {
    pub color: RgbImage,
    pub depth: DepthImage,
    pub mask: Mask,
    pub intrinsics: Intrinsics,
    /// Color camera to world.
    pub camera_pose: SimTransform,
}

impl MaskedFrame {
    /// World positions of the masked pixels with valid depth.
    pub fn masked_points(&self) -> Vec<Vec3> {
        self.depth
            .enumerate_pixels()
            .filter(|(u, v, Luma([d]))| *d > 0 && self.mask.get(*u, *v))
            .map(|(u, v, Luma([d]))| {
                self.camera_pose.transform_point(&self.intrinsics.unproject(u as f64, v as f64, *d as f64 / 1000.0))
            })
            .collect()
    }
}

/// Truncated signed distance volume. Distances are stored in units of the
/// truncation distance, positive in front of the observed surface.
#[derive(Debug, Clone, PartialEq)]
pub struct TsdfGrid {
    pub origin: Vec3,
    pub voxel_size: f64,
    pub dims: [usize; 3],
    pub tsdf: Vec<f32>,
    pub weight: Vec<f32>,
    /// Running mean surface color and the number of samples behind it.
    pub color: Vec<[f32; 3]>,
    pub color_weight: Vec<f32>,
    /// Number of frames whose image the voxel projects into.
    pub views: Vec<u32>,
}

impl TsdfGrid {
    pub fn new(origin: Vec3, voxel_size: f64, dims: [usize; 3]) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        Self {
            origin,
            voxel_size,
            dims,
            tsdf: vec![1.0; n],
            weight: vec![0.0; n],
            color: vec![[0.0; 3]; n],
            color_weight: vec![0.0; n],
            views: vec![0; n],
        }
    }

    /// Four voxels.
    pub fn truncation(&self) -> f64 {
        4.0 * self.voxel_size
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.voxel_size
    }

    /// Integrates one frame. Masked pixels contribute signed distances and
    /// colors. Unmasked pixels only mark space as empty: in front of their
    /// surface by more than the truncation distance, or along the whole ray
    /// when the sensor saw nothing. Masked pixels without depth contribute
    /// nothing.
    pub fn integrate(&mut self, frame: &MaskedFrame) {
        let trunc = self.truncation();
        let world_to_cam = frame.camera_pose.inverse();
        let (w, h) = frame.depth.dimensions();
        let [nx, ny, _] = self.dims;
        let (origin, voxel) = (self.origin, self.voxel_size);
        let layer = nx * ny;
        self.tsdf
            .par_chunks_mut(layer)
            .zip(self.weight.par_chunks_mut(layer))
            .zip(self.color.par_chunks_mut(layer))
            .zip(self.color_weight.par_chunks_mut(layer))
            .zip(self.views.par_chunks_mut(layer))
            .enumerate()
            .for_each(|(k, ((((tsdf, weight), color), color_weight), views))| {
                for j in 0..ny {
                    for i in 0..nx {
                        let p = origin + Vec3::new(i as f64, j as f64, k as f64) * voxel;
                        let c = world_to_cam.transform_point(&p);
                        let Some((u, v)) = frame.intrinsics.project(&c) else { continue };
                        let (u, v) = (u.round(), v.round());
                        if u < 0.0 || v < 0.0 || u >= w as f64 || v >= h as f64 {
                            continue;
                        }
                        let (u, v) = (u as u32, v as u32);
                        let idx = j * nx + i;
                        views[idx] += 1;
                        let Luma([d]) = *frame.depth.get_pixel(u, v);
                        let masked = frame.mask.get(u, v);
                        let sdf = if d == 0 { f64::INFINITY } else { d as f64 / 1000.0 - c.z };
                        let observed = match (masked, d, sdf) {
                            (true, 0, _) => continue,
                            (true, _, s) if s >= -trunc => (s / trunc).min(1.0),
                            (false, _, s) if s > trunc => 1.0,
                            _ => continue,
                        };
                        let w0 = weight[idx];
                        tsdf[idx] = (tsdf[idx] * w0 + observed as f32) / (w0 + 1.0);
                        weight[idx] = w0 + 1.0;
                        if masked && sdf.abs() < trunc {
                            let rgb = frame.color.get_pixel(u, v).0.map(|x| x as f32 / 255.0);
                            let n = color_weight[idx];
                            for ch in 0..3 {
                                color[idx][ch] = (color[idx][ch] * n + rgb[ch]) / (n + 1.0);
                            }
                            color_weight[idx] = n + 1.0;
                        }
                    }
                }
            });
    }

    /// Whether any observed voxel lies inside a surface.
    pub fn has_surface(&self) -> bool {
        self.tsdf.iter().zip(&self.weight).any(|(&t, &w)| w > 0.0 && t < 0.0)
    }
}

/// Fuses masked frames into a grid covering the masked points' bounds plus
/// a 10% margin on each side (at least two voxels).
pub fn fuse_tsdf(frames: &[MaskedFrame], voxel_size: f64, min_frames: usize) -> Result<TsdfGrid, ReplicaError> {
    if frames.len() < min_frames {
        return Err(ReplicaError::TooFewFrames { found: frames.len(), required: min_frames });
    }
    if !(voxel_size > 0.0) {
        return Err(ReplicaError::InvalidFrame(format!("voxel size {voxel_size}")));
    }
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in frames.iter().flat_map(|f| f.masked_points()) {
        lo = lo.inf(&p);
        hi = hi.sup(&p);
    }
    if lo.x > hi.x {
        return Err(ReplicaError::EmptyGrid);
    }
    let margin = ((hi - lo) * 0.1).map(|m| m.max(2.0 * voxel_size));
    let (lo, hi) = (lo - margin, hi + margin);
    let dims = ((hi - lo) / voxel_size).map(|e| e.ceil() as usize + 1);
    let dims = [dims.x, dims.y, dims.z];
    if dims.iter().product::<usize>() > MAX_VOXELS {
        return Err(ReplicaError::InvalidFrame(format!("masked region needs a {dims:?} grid")));
    }
    let mut grid = TsdfGrid::new(lo, voxel_size, dims);
    for f in frames {
        grid.integrate(f);
    }
    if !grid.has_surface() {
        return Err(ReplicaError::EmptyGrid);
    }
    Ok(grid)
}

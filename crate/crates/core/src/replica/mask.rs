use std::collections::VecDeque;

use image::{Luma, RgbImage};

use super::{DepthImage, Intrinsics, PlaneModel, ReplicaError};
use crate::geometry::SimTransform;

/// Fewer foreground pixels than this means nothing was segmented.
pub const MIN_MASK_PIXELS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![false; (width * height) as usize] }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let data = (0..height).flat_map(|v| (0..width).map(move |u| (u, v))).map(|(u, v)| f(u, v)).collect();
        Self { width, height, data }
    }

    fn index(&self, u: u32, v: u32) -> usize {
        (v * self.width + u) as usize
    }

    pub fn get(&self, u: u32, v: u32) -> bool {
        self.data[self.index(u, v)]
    }

    pub fn set(&mut self, u: u32, v: u32, value: bool) {
        let i = self.index(u, v);
        self.data[i] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Mean pixel coordinate of the foreground, rounded.
    pub fn centroid(&self) -> Option<(u32, u32)> {
        let (mut su, mut sv, mut n) = (0u64, 0u64, 0u64);
        for v in 0..self.height {
            for u in 0..self.width {
                if self.get(u, v) {
                    su += u as u64;
                    sv += v as u64;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| (((su as f64) / n as f64).round() as u32, ((sv as f64) / n as f64).round() as u32))
    }

    pub fn iou(&self, other: &Mask) -> f64 {
        let inter = self.data.iter().zip(&other.data).filter(|(a, b)| **a && **b).count();
        let union = self.data.iter().zip(&other.data).filter(|(a, b)| **a || **b).count();
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    fn disk(radius: i32) -> Vec<(i32, i32)> {
        (-radius..=radius)
            .flat_map(|dy| (-radius..=radius).map(move |dx| (dx, dy)))
            .filter(|(dx, dy)| dx * dx + dy * dy <= radius * radius)
            .collect()
    }

    /// Morphology over a disk; pixels outside the image are ignored.
    fn morph(&self, radius: i32, dilate: bool) -> Mask {
        let offsets = Self::disk(radius);
        let (w, h) = (self.width as i32, self.height as i32);
        Mask::from_fn(self.width, self.height, |u, v| {
            let mut neighbors = offsets.iter().filter_map(|(dx, dy)| {
                let (x, y) = (u as i32 + dx, v as i32 + dy);
                (x >= 0 && y >= 0 && x < w && y < h).then(|| self.get(x as u32, y as u32))
            });
            if dilate {
                neighbors.any(|b| b)
            } else {
                neighbors.all(|b| b)
            }
        })
    }

    /// Dilation followed by erosion.
    pub fn close(&self, radius: u32) -> Mask {
        self.morph(radius as i32, true).morph(radius as i32, false)
    }

    /// 4-connected component containing `(u, v)`, empty if that pixel is
    /// background.
    pub fn component_at(&self, u: u32, v: u32) -> Mask {
        let mut out = Mask::new(self.width, self.height);
        if u >= self.width || v >= self.height || !self.get(u, v) {
            return out;
        }
        let mut queue = VecDeque::from([(u, v)]);
        out.set(u, v, true);
        while let Some((x, y)) = queue.pop_front() {
            let candidates = [
                (x.wrapping_sub(1), y),
                (x + 1, y),
                (x, y.wrapping_sub(1)),
                (x, y + 1),
            ];
            for (nx, ny) in candidates {
                if nx < self.width && ny < self.height && self.get(nx, ny) && !out.get(nx, ny) {
                    out.set(nx, ny, true);
                    queue.push_back((nx, ny));
                }
            }
        }
        out
    }

    /// Largest 4-connected component; ties go to the first in scan order.
    pub fn largest_component(&self) -> Mask {
        let mut seen = Mask::new(self.width, self.height);
        let mut best = Mask::new(self.width, self.height);
        let mut best_count = 0;
        for v in 0..self.height {
            for u in 0..self.width {
                if self.get(u, v) && !seen.get(u, v) {
                    let c = self.component_at(u, v);
                    for (s, &b) in seen.data.iter_mut().zip(&c.data) {
                        *s |= b;
                    }
                    let n = c.count();
                    if n > best_count {
                        best_count = n;
                        best = c;
                    }
                }
            }
        }
        best
    }
}

/// Foreground = valid pixels more than the plane's inlier threshold above
/// the plane, on the camera's side of it. The prompt is the foreground
/// centroid.
pub fn coarse_mask(
    registered_depth: &DepthImage,
    intrinsics: &Intrinsics,
    camera_pose: &SimTransform,
    plane: &PlaneModel,
) -> Result<(Mask, (u32, u32)), ReplicaError> {
    let side = plane.signed_distance(&camera_pose.translation).signum();
    let side = if side == 0.0 { 1.0 } else { side };
    let mask = Mask::from_fn(registered_depth.width(), registered_depth.height(), |u, v| {
        let Luma([d]) = *registered_depth.get_pixel(u, v);
        if d == 0 {
            return false;
        }
        let p = camera_pose.transform_point(&intrinsics.unproject(u as f64, v as f64, d as f64 / 1000.0));
        side * plane.signed_distance(&p) > plane.inlier_threshold
    });
    let pixels = mask.count();
    if pixels < MIN_MASK_PIXELS {
        return Err(ReplicaError::EmptyMask { pixels, required: MIN_MASK_PIXELS });
    }
    let prompt = mask.centroid().expect("nonempty mask");
    Ok((mask, prompt))
}

/// Turns a coarse foreground mask into the object's silhouette.
pub trait MaskRefiner: Send + Sync {
    fn name(&self) -> &'static str;
    fn refine(&self, color: &RgbImage, coarse: &Mask, prompt: (u32, u32)) -> Result<Mask, ReplicaError>;
}

/// Closing with a disk, then the 4-connected component containing the
/// prompt. If the prompt falls on background the largest component is kept.
#[derive(Debug, Clone, Copy)]
pub struct MorphologicalRefiner {
    pub radius: u32,
}

impl Default for MorphologicalRefiner {
    fn default() -> Self {
        Self { radius: 2 }
    }
}

impl MaskRefiner for MorphologicalRefiner {
    fn name(&self) -> &'static str {
        "morphological"
    }

    fn refine(&self, _color: &RgbImage, coarse: &Mask, prompt: (u32, u32)) -> Result<Mask, ReplicaError> {
        let closed = coarse.close(self.radius);
        let (u, v) = prompt;
        let component = closed.component_at(u, v);
        Ok(if component.count() > 0 { component } else { closed.largest_component() })
    }
}

/// Passes the coarse mask through unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRefiner;

impl MaskRefiner for IdentityRefiner {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn refine(&self, _color: &RgbImage, coarse: &Mask, _prompt: (u32, u32)) -> Result<Mask, ReplicaError> {
        Ok(coarse.clone())
    }
}

//! Synthetic RGBD captures of analytic objects on a table, for tests and
//! fixtures. The world is Z-up with the table top at `z = 0`.

use image::{Luma, Rgb, RgbImage};
use nalgebra::{Matrix3, Rotation3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::capture::{CaptureManifest, FrameEntry, GroundTruth, PlaneSeed};
use super::{DepthImage, Intrinsics, RgbdFrame};
use crate::geometry::{SimTransform, UnitQuat, Vec3};

/// Half-width of the square table top.
const TABLE_HALF_WIDTH: f64 = 0.5;
/// Depth beyond this range reads as invalid.
const MAX_RANGE: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthShape {
    /// A 6 cm radius ball hovering 30 cm above the table, so every side of
    /// it can be seen.
    Sphere,
    /// A 10 × 8 × 10 cm box standing on the table.
    Box,
}

impl SynthShape {
    pub fn ground_truth(self) -> GroundTruth {
        match self {
            SynthShape::Sphere => GroundTruth::Sphere { center: [0.0, 0.0, 0.3], radius: 0.06 },
            SynthShape::Box => GroundTruth::Box { center: [0.0, 0.0, 0.05], half_extents: [0.05, 0.04, 0.05] },
        }
    }

    fn center(self) -> Vec3 {
        match self.ground_truth() {
            GroundTruth::Sphere { center, .. } | GroundTruth::Box { center, .. } => Vec3::from(center),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub shape: SynthShape,
    pub frames: usize,
    pub capture_rate_hz: f64,
    pub width: u32,
    pub height: u32,
    /// Color camera focal length in pixels; the depth camera's is 10% longer.
    pub focal: f64,
    /// Depth camera offset along the color camera's +X, meters.
    pub baseline: f64,
    /// Standard deviation of additive depth noise, meters.
    pub depth_noise: f64,
    pub seed: u64,
    /// Camera distance from the object center, meters.
    pub orbit_radius: f64,
    /// Cameras climb from the first elevation to the second (degrees) while
    /// circling the object `turns` times.
    pub elevation_deg: (f64, f64),
    pub turns: f64,
}

impl SynthParams {
    pub fn new(shape: SynthShape) -> Self {
        Self {
            shape,
            frames: 75,
            capture_rate_hz: 5.0,
            width: 160,
            height: 120,
            focal: 130.0,
            baseline: 0.02,
            depth_noise: 0.002,
            seed: 0,
            orbit_radius: 0.45,
            elevation_deg: match shape {
                SynthShape::Sphere => (-30.0, 45.0),
                SynthShape::Box => (15.0, 60.0),
            },
            turns: 2.0,
        }
    }

    pub fn color_intrinsics(&self) -> Intrinsics {
        let (cx, cy) = ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0);
        Intrinsics { fx: self.focal, fy: self.focal, cx, cy }
    }

    pub fn depth_intrinsics(&self) -> Intrinsics {
        Intrinsics { fx: 1.1 * self.focal, fy: 1.1 * self.focal, ..self.color_intrinsics() }
    }

    pub fn depth_to_color(&self) -> SimTransform {
        SimTransform::from_translation(Vec3::new(self.baseline, 0.0, 0.0))
    }

    /// Color camera pose of frame `i`, looking at the object center.
    pub fn camera_pose(&self, i: usize) -> SimTransform {
        let s = if self.frames > 1 { i as f64 / (self.frames - 1) as f64 } else { 0.0 };
        let azimuth = std::f64::consts::TAU * self.turns * i as f64 / self.frames.max(1) as f64;
        let (e0, e1) = self.elevation_deg;
        let elevation = (e0 + (e1 - e0) * s).to_radians();
        let target = self.shape.center();
        let eye = target
            + Vec3::new(elevation.cos() * azimuth.cos(), elevation.cos() * azimuth.sin(), elevation.sin()) * self.orbit_radius;
        look_at(&eye, &target)
    }
}

impl Default for SynthParams {
    fn default() -> Self {
        Self::new(SynthShape::Sphere)
    }
}

/// Camera (+Z forward, +X right, +Y down) at `eye` looking at `target`
/// with world +Z up.
pub fn look_at(eye: &Vec3, target: &Vec3) -> SimTransform {
    let forward = (target - eye).normalize();
    let right = forward.cross(&Vec3::z()).normalize();
    let down = forward.cross(&right);
    let m = Matrix3::from_columns(&[right, down, forward]);
    SimTransform::rigid(UnitQuat::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m)), *eye)
}

#[derive(Debug, Clone, Copy)]
struct Hit {
    t: f64,
    point: Vec3,
    color: [f64; 3],
}

fn intersect_table(o: &Vec3, d: &Vec3) -> Option<Hit> {
    if d.z.abs() < 1e-12 {
        return None;
    }
    let t = -o.z / d.z;
    let p = o + d * t;
    if t <= 0.0 || p.x.abs() > TABLE_HALF_WIDTH || p.y.abs() > TABLE_HALF_WIDTH {
        return None;
    }
    let checker = ((p.x / 0.05).floor() as i64 + (p.y / 0.05).floor() as i64).rem_euclid(2);
    let g = if checker == 0 { 0.55 } else { 0.4 };
    Some(Hit { t, point: p, color: [g, g, g * 0.9] })
}

fn intersect_sphere(o: &Vec3, d: &Vec3, c: &Vec3, r: f64) -> Option<Hit> {
    let oc = o - c;
    let b = oc.dot(d);
    let disc = b * b - (oc.norm_squared() - r * r);
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    if t <= 0.0 {
        return None;
    }
    let p = o + d * t;
    let n = (p - c) / r;
    Some(Hit { t, point: p, color: [0.5 + 0.4 * n.x, 0.5 + 0.4 * n.y, 0.5 + 0.4 * n.z] })
}

fn intersect_box(o: &Vec3, d: &Vec3, c: &Vec3, half: &Vec3) -> Option<Hit> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut axis = 0;
    for a in 0..3 {
        if d[a].abs() < 1e-15 {
            if (o[a] - c[a]).abs() > half[a] {
                return None;
            }
            continue;
        }
        let (mut lo, mut hi) = ((c[a] - half[a] - o[a]) / d[a], (c[a] + half[a] - o[a]) / d[a]);
        if lo > hi {
            std::mem::swap(&mut lo, &mut hi);
        }
        if lo > t0 {
            t0 = lo;
            axis = a;
        }
        t1 = t1.min(hi);
    }
    if t0 > t1 || t0 <= 0.0 {
        return None;
    }
    let p = o + d * t0;
    let positive = p[axis] > c[axis];
    let color = match (axis, positive) {
        (0, true) => [0.85, 0.2, 0.2],
        (0, false) => [0.2, 0.75, 0.25],
        (1, true) => [0.2, 0.3, 0.85],
        (1, false) => [0.85, 0.8, 0.2],
        (_, true) => [0.8, 0.3, 0.8],
        (_, false) => [0.25, 0.8, 0.8],
    };
    Some(Hit { t: t0, point: p, color })
}

/// Nearest surface along a world-space ray with unit direction.
fn trace(shape: &GroundTruth, o: &Vec3, d: &Vec3, object_only: bool) -> Option<Hit> {
    let object = match *shape {
        GroundTruth::Sphere { center, radius } => intersect_sphere(o, d, &Vec3::from(center), radius),
        GroundTruth::Box { center, half_extents } => {
            intersect_box(o, d, &Vec3::from(center), &Vec3::from(half_extents))
        }
    };
    let table = if object_only { None } else { intersect_table(o, d) };
    match (object, table) {
        (Some(a), Some(b)) => Some(if a.t <= b.t { a } else { b }),
        (a, b) => a.or(b),
    }
}

fn pixel_ray(k: &Intrinsics, pose: &SimTransform, u: u32, v: u32) -> (Vec3, Vec3) {
    let dir = pose.transform_vector(&k.unproject(u as f64, v as f64, 1.0)).normalize();
    (pose.translation, dir)
}

/// Pixels of a noise-free color-camera view where the object is the first
/// surface hit.
pub fn object_silhouette(params: &SynthParams, pose: &SimTransform) -> super::Mask {
    let k = params.color_intrinsics();
    let gt = params.shape.ground_truth();
    super::Mask::from_fn(params.width, params.height, |u, v| {
        let (o, d) = pixel_ray(&k, pose, u, v);
        match (trace(&gt, &o, &d, true), trace(&gt, &o, &d, false)) {
            (Some(obj), Some(first)) => obj.t == first.t,
            _ => false,
        }
    })
}

fn render_frame(params: &SynthParams, i: usize) -> RgbdFrame {
    let gt = params.shape.ground_truth();
    let color_pose = params.camera_pose(i);
    let ck = params.color_intrinsics();
    let dk = params.depth_intrinsics();
    let depth_to_color = params.depth_to_color();
    let depth_pose = color_pose.compose(&depth_to_color);
    let world_to_depth = depth_pose.inverse();

    let color = RgbImage::from_fn(params.width, params.height, |u, v| {
        let (o, d) = pixel_ray(&ck, &color_pose, u, v);
        let c = trace(&gt, &o, &d, false).map_or([0.0; 3], |h| h.color);
        Rgb(c.map(|x| (x.clamp(0.0, 1.0) * 255.0).round() as u8))
    });

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let noise = Normal::new(0.0, params.depth_noise.max(0.0)).expect("finite sigma");
    let mut depth = DepthImage::new(params.width, params.height);
    for v in 0..params.height {
        for u in 0..params.width {
            let (o, d) = pixel_ray(&dk, &depth_pose, u, v);
            let Some(hit) = trace(&gt, &o, &d, false) else { continue };
            let z = world_to_depth.transform_point(&hit.point).z;
            let z = if params.depth_noise > 0.0 { z + noise.sample(&mut rng) } else { z };
            if z > 0.0 && z < MAX_RANGE {
                depth.put_pixel(u, v, Luma([(z * 1000.0).round() as u16]));
            }
        }
    }

    RgbdFrame { color, depth, color_intrinsics: ck, depth_intrinsics: dk, depth_to_color, camera_pose: color_pose }
}

/// Renders a capture and the manifest describing it. File names in the
/// manifest are relative to wherever it gets saved.
pub fn synth_capture(params: &SynthParams) -> (CaptureManifest, Vec<RgbdFrame>) {
    let frames: Vec<RgbdFrame> = (0..params.frames).into_par_iter().map(|i| render_frame(params, i)).collect();
    let manifest = CaptureManifest {
        capture_rate_hz: params.capture_rate_hz,
        duration_s: params.frames as f64 / params.capture_rate_hz,
        color_intrinsics: params.color_intrinsics(),
        depth_intrinsics: params.depth_intrinsics(),
        depth_to_color: params.depth_to_color().to_pose7(),
        // The headset's plane estimate is a little off; refinement fixes it.
        plane_seed: PlaneSeed { normal: [0.02, -0.01, 1.0], offset: 0.004 },
        frames: frames
            .iter()
            .enumerate()
            .map(|(i, f)| FrameEntry {
                color: format!("color_{i:03}.ppm"),
                depth: format!("depth_{i:03}.pgm"),
                pose: f.camera_pose.to_pose7(),
            })
            .collect(),
        ground_truth: Some(params.shape.ground_truth()),
    };
    (manifest, frames)
}

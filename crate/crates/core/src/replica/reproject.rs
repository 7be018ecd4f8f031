use image::Luma;

use super::{DepthImage, Intrinsics, RgbdFrame};
use crate::geometry::{SimTransform, Vec3};

/// Re-renders the depth image from the color camera's viewpoint. Each valid
/// depth pixel is lifted to 3D, moved into the color frame and splatted to
/// its nearest color pixel; the nearest surface wins where several land on
/// one pixel. Pixels nothing lands on stay invalid.
pub fn reproject_depth(frame: &RgbdFrame) -> DepthImage {
    let (w, h) = frame.color.dimensions();
    let mut out = DepthImage::new(w, h);
    let di = &frame.depth_intrinsics;
    let ci = &frame.color_intrinsics;
    for (u, v, Luma([d])) in frame.depth.enumerate_pixels() {
        if *d == 0 {
            continue;
        }
        let p = frame.depth_to_color.transform_point(&di.unproject(u as f64, v as f64, *d as f64 / 1000.0));
        let Some((x, y)) = ci.project(&p) else { continue };
        let (x, y) = (x.round(), y.round());
        if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
            continue;
        }
        let z = (p.z * 1000.0).round();
        if !(1.0..=u16::MAX as f64).contains(&z) {
            continue;
        }
        let slot = &mut out.get_pixel_mut(x as u32, y as u32).0[0];
        if *slot == 0 || (z as u16) < *slot {
            *slot = z as u16;
        }
    }
    out
}

/// World-space points of every valid pixel of a registered depth image,
/// with their pixel coordinates.
pub fn unproject_registered(depth: &DepthImage, intrinsics: &Intrinsics, camera_pose: &SimTransform) -> Vec<((u32, u32), Vec3)> {
    depth
        .enumerate_pixels()
        .filter(|(_, _, Luma([d]))| *d > 0)
        .map(|(u, v, Luma([d]))| {
            let p = intrinsics.unproject(u as f64, v as f64, *d as f64 / 1000.0);
            ((u, v), camera_pose.transform_point(&p))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::RgbImage;

    fn plane_frame(depth_mm: u16, extrinsics: SimTransform) -> RgbdFrame {
        let k = Intrinsics { fx: 100.0, fy: 100.0, cx: 40.0, cy: 30.0 };
        RgbdFrame {
            color: RgbImage::new(80, 60),
            depth: DepthImage::from_pixel(80, 60, Luma([depth_mm])),
            color_intrinsics: k,
            depth_intrinsics: k,
            depth_to_color: extrinsics,
            camera_pose: SimTransform::identity(),
        }
    }

    #[test]
    fn identity_extrinsics_preserve_depth() {
        let mut f = plane_frame(1000, SimTransform::identity());
        f.depth.put_pixel(3, 4, Luma([0]));
        f.depth.put_pixel(5, 5, Luma([777]));
        assert_eq!(reproject_depth(&f), f.depth);
    }

    #[test]
    fn lateral_shift_moves_pixels_by_fx_b_over_z() {
        // Depth camera 10 cm to the left of the color camera, plane at 1 m:
        // shift = fx · 0.1 / 1.0 = 10 px.
        let mut f = plane_frame(0, SimTransform::from_translation(Vec3::new(-0.1, 0.0, 0.0)));
        f.depth.put_pixel(50, 30, Luma([1000]));
        let out = reproject_depth(&f);
        assert_eq!(out.get_pixel(40, 30).0[0], 1000);
        assert_eq!(out.pixels().filter(|p| p.0[0] != 0).count(), 1);
    }

    #[test]
    fn nearer_surface_wins() {
        // Two depth pixels along the same color-camera ray.
        let mut f = plane_frame(0, SimTransform::from_translation(Vec3::new(-0.1, 0.0, 0.0)));
        // Pixel (50, 30) at 1 m lands on color (40, 30); so does (45, 30) at 2 m.
        f.depth.put_pixel(50, 30, Luma([1000]));
        f.depth.put_pixel(45, 30, Luma([2000]));
        let out = reproject_depth(&f);
        assert_eq!(out.get_pixel(40, 30).0[0], 1000);
    }
}

use super::TriangleMesh;
use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub chunk_id: u32,
    pub triangle: usize,
    pub point: Vec3,
    pub distance: f64,
}

/// Watertight ray/triangle test (shear-and-scale formulation). Both faces
/// count. Returns the ray parameter of the hit; with a unit direction that
/// is the distance.
pub fn ray_triangle(origin: &Vec3, dir: &Vec3, tri: &[Vec3; 3]) -> Option<f64> {
    let kz = dir.iamax();
    let mut kx = (kz + 1) % 3;
    let mut ky = (kx + 1) % 3;
    if dir[kz] < 0.0 {
        std::mem::swap(&mut kx, &mut ky);
    }
    let sx = dir[kx] / dir[kz];
    let sy = dir[ky] / dir[kz];
    let sz = 1.0 / dir[kz];

    let a = tri[0] - origin;
    let b = tri[1] - origin;
    let c = tri[2] - origin;
    let (ax, ay) = (a[kx] - sx * a[kz], a[ky] - sy * a[kz]);
    let (bx, by) = (b[kx] - sx * b[kz], b[ky] - sy * b[kz]);
    let (cx, cy) = (c[kx] - sx * c[kz], c[ky] - sy * c[kz]);

    let u = cx * by - cy * bx;
    let v = ax * cy - ay * cx;
    let w = bx * ay - by * ax;
    if (u < 0.0 || v < 0.0 || w < 0.0) && (u > 0.0 || v > 0.0 || w > 0.0) {
        return None;
    }
    let det = u + v + w;
    if det == 0.0 {
        return None;
    }
    let t = (u * sz * a[kz] + v * sz * b[kz] + w * sz * c[kz]) / det;
    (t > 0.0 && t.is_finite()).then_some(t)
}

/// Nearest positive-distance hit of the ray against a set of meshes.
/// Ties keep the first mesh/triangle in iteration order.
pub fn raycast<'a>(meshes: impl IntoIterator<Item = &'a TriangleMesh>, origin: &Vec3, dir: &Vec3) -> Option<RayHit> {
    let mut best: Option<RayHit> = None;
    for mesh in meshes {
        match mesh.bounds().ray_entry(origin, dir) {
            Some(entry) if best.is_none_or(|b| entry <= b.distance) => {}
            _ => continue,
        }
        for t in 0..mesh.triangles().len() {
            let tri = mesh.triangle_positions(t);
            if let Some(d) = ray_triangle(origin, dir, &tri) {
                if best.is_none_or(|b| d < b.distance) {
                    best = Some(RayHit { chunk_id: mesh.chunk_id, triangle: t, point: origin + dir * d, distance: d });
                }
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{grid_mesh, Vertex};
    use proptest::prelude::*;

    fn unit_square(chunk: u32, z: f64) -> TriangleMesh {
        grid_mesh(chunk, Vec3::new(0.0, 0.0, z), Vec3::x(), Vec3::y(), 1, 1, None)
    }

    #[test]
    fn perpendicular_hit_at_center() {
        let m = unit_square(4, 2.0);
        let hit = raycast([&m], &Vec3::new(0.5, 0.5, 0.0), &Vec3::z()).unwrap();
        assert_eq!(hit.chunk_id, 4);
        assert!((hit.distance - 2.0).abs() < 1e-15);
        assert!((hit.point - Vec3::new(0.5, 0.5, 2.0)).norm() < 1e-15);
    }

    #[test]
    fn back_face_counts() {
        let m = unit_square(0, -2.0);
        let hit = raycast([&m], &Vec3::new(0.25, 0.5, 0.0), &-Vec3::z()).unwrap();
        assert!((hit.distance - 2.0).abs() < 1e-15);
    }

    #[test]
    fn parallel_ray_misses() {
        let m = unit_square(0, 0.0);
        assert!(raycast([&m], &Vec3::new(-1.0, 0.5, 0.0), &Vec3::x()).is_none());
        assert!(raycast([&m], &Vec3::new(-1.0, 0.5, 0.1), &Vec3::x()).is_none());
    }

    #[test]
    fn behind_origin_misses() {
        let m = unit_square(0, -1.0);
        assert!(raycast([&m], &Vec3::new(0.5, 0.5, 0.0), &Vec3::z()).is_none());
    }

    #[test]
    fn nearer_of_stacked_triangles_wins() {
        let far = unit_square(1, 3.0);
        let near = unit_square(2, 1.0);
        let hit = raycast([&far, &near], &Vec3::new(0.3, 0.6, 0.0), &Vec3::z()).unwrap();
        assert_eq!(hit.chunk_id, 2);
        assert!((hit.distance - 1.0).abs() < 1e-15);
    }

    #[test]
    fn shared_edge_is_watertight() {
        // A ray through the diagonal shared by the two grid triangles must hit.
        let m = unit_square(0, 1.0);
        for k in 1..100 {
            let s = k as f64 / 100.0;
            assert!(raycast([&m], &Vec3::new(s, s, 0.0), &Vec3::z()).is_some(), "leak at {s}");
        }
    }

    proptest! {
        #[test]
        fn hit_point_on_triangle_plane(
            a in prop::array::uniform3(-2.0..2.0f64),
            b in prop::array::uniform3(-2.0..2.0f64),
            c in prop::array::uniform3(-2.0..2.0f64),
            w in prop::array::uniform3(0.05..1.0f64),
            o in prop::array::uniform3(-5.0..5.0f64),
        ) {
            let verts = [a, b, c].map(|p| Vertex::new(Vec3::from(p)));
            let mesh = TriangleMesh::new(0, verts.to_vec(), vec![[0, 1, 2]]).unwrap();
            prop_assume!(!mesh.is_empty());
            let tri = mesh.triangle_positions(0);
            let target = (tri[0] * w[0] + tri[1] * w[1] + tri[2] * w[2]) / (w[0] + w[1] + w[2]);
            let origin = Vec3::from(o);
            prop_assume!((target - origin).norm() > 1e-3);
            let dir = (target - origin).normalize();
            if let Some(hit) = raycast([&mesh], &origin, &dir) {
                let n = (tri[1] - tri[0]).cross(&(tri[2] - tri[0])).normalize();
                prop_assert!((hit.point - tri[0]).dot(&n).abs() < 1e-7);
            }
        }
    }
}

use std::collections::HashMap;

use super::{MeshError, TriangleMesh, Vertex};
use crate::geometry::Vec3;

/// Oriented plane `normal · x = offset`; the positive side is "inside".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vec3,
    pub offset: f64,
}

impl Plane {
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// Tolerance (meters, along the plane normal) for "on the plane".
const ON_PLANE: f64 = 1e-9;

/// Infinite four-sided pyramid from the camera position through four
/// selected surface points. There are no near or far planes.
///
/// Boundary points are stored counter-clockwise as seen by a viewer at the
/// apex looking through the quad (right-handed coordinates). Side plane `i`
/// passes through the apex and points `i`, `i+1`, with its normal pointing
/// into the pyramid.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionFrustum {
    pub apex: Vec3,
    pub boundary_points: [Vec3; 4],
    pub side_planes: [Plane; 4],
}

impl SelectionFrustum {
    pub fn build(apex: Vec3, points: [Vec3; 4]) -> Result<Self, MeshError> {
        let degenerate = |msg: &str| Err(MeshError::DegenerateSelection(msg.to_string()));
        if points.iter().any(|p| (p - apex).norm() <= 1e-6) {
            return degenerate("a boundary point coincides with the apex");
        }
        for i in 0..4 {
            for j in i + 1..4 {
                if (points[i] - points[j]).norm() <= 1e-9 {
                    return degenerate("boundary points are not distinct");
                }
            }
        }
        let rays = points.map(|p| p - apex);
        let mean = rays.iter().sum::<Vec3>() / 4.0;
        if mean.norm() <= 1e-9 {
            return degenerate("boundary points surround the apex");
        }
        let axis = mean.normalize();
        if rays.iter().any(|r| r.dot(&axis) <= 0.0) {
            return degenerate("a boundary point lies behind the apex");
        }

        let winding: f64 = (0..4).map(|i| axis.dot(&rays[i].cross(&rays[(i + 1) % 4]))).sum();
        let scale: f64 = (0..4).map(|i| rays[i].norm() * rays[(i + 1) % 4].norm()).sum();
        if winding.abs() <= 1e-12 * scale {
            return degenerate("apex lies in the plane of the boundary points");
        }
        // Positive winding about the viewing axis appears clockwise to the viewer.
        let ordered = if winding > 0.0 { [points[0], points[3], points[2], points[1]] } else { points };
        let rays = ordered.map(|p| p - apex);

        let mut side_planes = [Plane { normal: Vec3::zeros(), offset: 0.0 }; 4];
        for i in 0..4 {
            let (a, b) = (rays[i], rays[(i + 1) % 4]);
            let n = b.cross(&a);
            if n.norm() <= 1e-9 * a.norm() * b.norm() {
                return degenerate("two boundary points are collinear with the apex");
            }
            let normal = n.normalize();
            side_planes[i] = Plane { normal, offset: normal.dot(&apex) };
        }
        for plane in &side_planes {
            if ordered.iter().any(|p| plane.signed_distance(p) < -ON_PLANE * (p - apex).norm().max(1.0)) {
                return degenerate("boundary quad is not convex");
            }
        }
        Ok(Self { apex, boundary_points: ordered, side_planes })
    }

    /// On or inside all four side planes.
    pub fn contains(&self, p: &Vec3) -> bool {
        self.side_planes.iter().all(|pl| pl.signed_distance(p) >= -ON_PLANE)
    }

    /// Unit direction from the apex toward the centroid of the boundary points.
    pub fn axis(&self) -> Vec3 {
        (self.boundary_points.iter().sum::<Vec3>() / 4.0 - self.apex).normalize()
    }
}

/// Source of a selected triangle in the original mesh set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TriangleRef {
    pub chunk_id: u32,
    pub triangle: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Compactly re-indexed copy of the selected triangles (chunk id 0).
    pub mesh: TriangleMesh,
    /// `sources[i]` is where `mesh.triangles()[i]` came from.
    pub sources: Vec<TriangleRef>,
}

/// Triangles with all three vertices inside the frustum; geometry is never
/// clipped.
pub fn select_triangles<'a>(
    meshes: impl IntoIterator<Item = &'a TriangleMesh>,
    frustum: &SelectionFrustum,
) -> Result<Selection, MeshError> {
    let mut vertices: Vec<Vertex> = Vec::new();
    let mut triangles = Vec::new();
    let mut sources = Vec::new();

    for mesh in meshes {
        let bounds = mesh.bounds();
        if bounds.is_empty() {
            continue;
        }
        let corners = bounds.corners();
        let culled = frustum
            .side_planes
            .iter()
            .any(|pl| corners.iter().all(|c| pl.signed_distance(c) < -ON_PLANE));
        if culled {
            continue;
        }
        let inside: Vec<bool> = mesh.vertices().iter().map(|v| frustum.contains(&v.position)).collect();
        let mut remap: HashMap<u32, u32> = HashMap::new();
        for (t, tri) in mesh.triangles().iter().enumerate() {
            if !tri.iter().all(|&i| inside[i as usize]) {
                continue;
            }
            let out = tri.map(|i| {
                *remap.entry(i).or_insert_with(|| {
                    vertices.push(mesh.vertices()[i as usize]);
                    (vertices.len() - 1) as u32
                })
            });
            triangles.push(out);
            sources.push(TriangleRef { chunk_id: mesh.chunk_id, triangle: t as u32 });
        }
    }
    if triangles.is_empty() {
        return Err(MeshError::EmptySelection);
    }
    Ok(Selection { mesh: TriangleMesh::from_parts_unchecked(0, vertices, triangles), sources })
}

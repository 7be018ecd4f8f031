//! Spatial meshes: indexed triangle chunks, ray casting, frustum selection
//! of cutout regions and the colored OBJ interchange format.

mod frustum;
mod obj;
mod raycast;

use std::collections::BTreeMap;

pub use frustum::{select_triangles, Plane, Selection, SelectionFrustum, TriangleRef};
pub use obj::{parse_obj, write_obj, ColoredObjDocument, ObjError, ObjVertex};
pub use raycast::{ray_triangle, raycast, RayHit};

use thiserror::Error;

use crate::geometry::{SimTransform, Vec3};

/// Triangles whose area is at or below this (m²) are dropped at construction.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Linear RGB in `0..=1`.
pub type Rgb = [f32; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("triangle {triangle} references vertex {index} but the mesh has {vertex_count} vertices")]
    IndexOutOfRange { triangle: usize, index: u32, vertex_count: usize },
    #[error("degenerate selection: {0}")]
    DegenerateSelection(String),
    #[error("no triangle lies inside the selection frustum")]
    EmptySelection,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vertex {
    pub position: Vec3,
    pub color: Option<Rgb>,
}

impl Vertex {
    pub fn new(position: Vec3) -> Self {
        Self { position, color: None }
    }

    pub fn colored(position: Vec3, color: Rgb) -> Self {
        Self { position, color: Some(color) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Self { min: Vec3::repeat(f64::INFINITY), max: Vec3::repeat(f64::NEG_INFINITY) }
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (a, b) = (self.min, self.max);
        std::array::from_fn(|i| {
            Vec3::new(
                if i & 1 == 0 { a.x } else { b.x },
                if i & 2 == 0 { a.y } else { b.y },
                if i & 4 == 0 { a.z } else { b.z },
            )
        })
    }

    /// Entry distance of the ray into the box, if it reaches it at all.
    pub fn ray_entry(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        if self.is_empty() {
            return None;
        }
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        for k in 0..3 {
            if dir[k] == 0.0 {
                if origin[k] < self.min[k] || origin[k] > self.max[k] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[k];
            let (mut a, mut b) = ((self.min[k] - origin[k]) * inv, (self.max[k] - origin[k]) * inv);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

/// An indexed triangle mesh chunk as produced by the headset's spatial
/// mapping. Immutable once built; degenerate triangles never survive
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub chunk_id: u32,
    vertices: Vec<Vertex>,
    triangles: Vec<[u32; 3]>,
    bounds: Aabb,
}

fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

impl TriangleMesh {
    pub fn new(chunk_id: u32, vertices: Vec<Vertex>, triangles: Vec<[u32; 3]>) -> Result<Self, MeshError> {
        let n = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&index) = tri.iter().find(|&&i| i as usize >= n) {
                return Err(MeshError::IndexOutOfRange { triangle: t, index, vertex_count: n });
            }
        }
        let triangles = triangles
            .into_iter()
            .filter(|t| {
                let [a, b, c] = t.map(|i| vertices[i as usize].position);
                triangle_area(&a, &b, &c) > MIN_TRIANGLE_AREA
            })
            .collect();
        Ok(Self::from_parts_unchecked(chunk_id, vertices, triangles))
    }

    pub(crate) fn from_parts_unchecked(chunk_id: u32, vertices: Vec<Vertex>, triangles: Vec<[u32; 3]>) -> Self {
        let mut bounds = Aabb::empty();
        for v in &vertices {
            bounds.grow(&v.position);
        }
        Self { chunk_id, vertices, triangles, bounds }
    }

    pub fn empty(chunk_id: u32) -> Self {
        Self::from_parts_unchecked(chunk_id, Vec::new(), Vec::new())
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_positions(&self, t: usize) -> [Vec3; 3] {
        self.triangles[t].map(|i| self.vertices[i as usize].position)
    }

    pub fn with_chunk_id(mut self, chunk_id: u32) -> Self {
        self.chunk_id = chunk_id;
        self
    }

    /// Applies a similarity transform to every vertex. Scale is positive,
    /// so no triangle becomes degenerate unless it shrinks below the area
    /// threshold, in which case it is dropped.
    pub fn transformed(&self, t: &SimTransform) -> TriangleMesh {
        let vertices = self
            .vertices
            .iter()
            .map(|v| Vertex { position: t.transform_point(&v.position), color: v.color })
            .collect();
        TriangleMesh::new(self.chunk_id, vertices, self.triangles.clone()).expect("indices unchanged")
    }

    pub fn vertex_centroid(&self) -> Option<Vec3> {
        if self.vertices.is_empty() {
            return None;
        }
        Some(self.vertices.iter().map(|v| v.position).sum::<Vec3>() / self.vertices.len() as f64)
    }

    /// Euler characteristic `V − E + F`, counting only referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        let mut edges = std::collections::HashSet::new();
        for t in &self.triangles {
            for k in 0..3 {
                used[t[k] as usize] = true;
                let (a, b) = (t[k], t[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - edges.len() as i64 + self.triangles.len() as i64
    }

    /// Every edge is shared by exactly two triangles with opposite
    /// orientation.
    pub fn is_watertight(&self) -> bool {
        if self.triangles.is_empty() {
            return false;
        }
        let mut directed: std::collections::HashMap<(u32, u32), u32> = std::collections::HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                *directed.entry((t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        directed.iter().all(|(&(a, b), &n)| n == 1 && directed.get(&(b, a)) == Some(&1))
    }

    /// Sum of triangle areas.
    pub fn area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.triangle_positions(t);
                triangle_area(&a, &b, &c)
            })
            .sum()
    }

    /// Positions rounded to f32, colors to 8 bits: what survives a trip
    /// through the mesh-streaming wire format.
    pub fn quantized(&self) -> TriangleMesh {
        let all_colored = !self.vertices.is_empty() && self.vertices.iter().all(|v| v.color.is_some());
        let vertices = self
            .vertices
            .iter()
            .map(|v| Vertex {
                position: v.position.map(|c| c as f32 as f64),
                color: if all_colored { v.color.map(|c| c.map(|x| quantize_channel(x) as f32 / 255.0)) } else { None },
            })
            .collect();
        TriangleMesh::new(self.chunk_id, vertices, self.triangles.clone()).expect("indices unchanged")
    }
}

pub(crate) fn quantize_channel(x: f32) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// The versioned set of spatial-mesh chunks a peer currently holds, keyed
/// by chunk id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeshSet {
    chunks: BTreeMap<u32, TriangleMesh>,
    version: u64,
}

impl MeshSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn upsert(&mut self, mesh: TriangleMesh) {
        self.chunks.insert(mesh.chunk_id, mesh);
        self.version += 1;
    }

    pub fn remove(&mut self, chunk_id: u32) -> Option<TriangleMesh> {
        let removed = self.chunks.remove(&chunk_id);
        if removed.is_some() {
            self.version += 1;
        }
        removed
    }

    pub fn get(&self, chunk_id: u32) -> Option<&TriangleMesh> {
        self.chunks.get(&chunk_id)
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TriangleMesh> {
        self.chunks.values()
    }
}

impl<'a> IntoIterator for &'a MeshSet {
    type Item = &'a TriangleMesh;
    type IntoIter = std::collections::btree_map::Values<'a, u32, TriangleMesh>;

    fn into_iter(self) -> Self::IntoIter {
        self.chunks.values()
    }
}

/// Flat rectangular grid mesh spanning `origin + s·u + t·v` for
/// `s, t ∈ [0, 1]`, split into `nu × nv` cells of two triangles each.
pub fn grid_mesh(chunk_id: u32, origin: Vec3, u: Vec3, v: Vec3, nu: u32, nv: u32, color: Option<Rgb>) -> TriangleMesh {
    let nu = nu.max(1);
    let nv = nv.max(1);
    let mut vertices = Vec::with_capacity(((nu + 1) * (nv + 1)) as usize);
    for j in 0..=nv {
        for i in 0..=nu {
            let p = origin + u * (i as f64 / nu as f64) + v * (j as f64 / nv as f64);
            vertices.push(Vertex { position: p, color });
        }
    }
    let idx = |i: u32, j: u32| j * (nu + 1) + i;
    let mut triangles = Vec::with_capacity((2 * nu * nv) as usize);
    for j in 0..nv {
        for i in 0..nu {
            triangles.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    TriangleMesh::new(chunk_id, vertices, triangles).expect("grid indices are in range")
}

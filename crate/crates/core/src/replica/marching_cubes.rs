//! Marching cubes with a table-free, face-consistent polygonization.
//!
//! Each cube face is walked counter-clockwise as seen from outside the cube.
//! Every crossing from an outside corner to an inside corner is joined to
//! the next inside-to-outside crossing along that walk. The decision for a
//! face depends only on its four corners, so the two cubes sharing a face
//! build the same segment with opposite directions. Segments chain into
//! closed loops per cube; each loop is fanned into triangles. Vertices are
//! shared through their grid edge, so a closed level set yields a closed,
//! consistently oriented mesh with normals pointing toward larger values.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::geometry::Vec3;
use crate::mesh::{TriangleMesh, Vertex};

/// Interpolation parameter is kept off the edge endpoints by this much.
const EDGE_CLAMP: f64 = 0.01;

/// Samples on a regular grid, `x` fastest.
#[derive(Debug, Clone, Copy)]
pub struct ScalarGrid<'a> {
    pub dims: [usize; 3],
    pub origin: Vec3,
    pub voxel_size: f64,
    pub values: &'a [f32],
    /// Samples with zero weight are unobserved; cubes touching one are
    /// skipped.
    pub weights: Option<&'a [f32]>,
    pub colors: Option<&'a [[f32; 3]]>,
    /// Samples whose color weight is zero have no color of their own.
    pub color_weights: Option<&'a [f32]>,
}

fn corner_offset(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

/// Corner cycles of the six faces, counter-clockwise seen from outside.
fn face_cycles() -> &'static [[usize; 4]; 6] {
    static CYCLES: OnceLock<[[usize; 4]; 6]> = OnceLock::new();
    CYCLES.get_or_init(|| {
        let pos = |c: usize| Vec3::from(corner_offset(c).map(|x| x as f64));
        let mut out = [[0; 4]; 6];
        for axis in 0..3 {
            for side in 0..2 {
                let mut corners: Vec<usize> = (0..8).filter(|&c| corner_offset(c)[axis] == side).collect();
                let mut normal = Vec3::zeros();
                normal[axis] = if side == 1 { 1.0 } else { -1.0 };
                let center = corners.iter().map(|&c| pos(c)).sum::<Vec3>() / 4.0;
                let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
                corners.sort_by(|&p, &q| {
                    let ang = |c: usize| {
                        let d = pos(c) - center;
                        d[a2].atan2(d[a1])
                    };
                    ang(p).total_cmp(&ang(q))
                });
                let (a, b, c) = (pos(corners[0]), pos(corners[1]), pos(corners[2]));
                if (b - a).cross(&(c - b)).dot(&normal) < 0.0 {
                    corners.reverse();
                }
                out[axis * 2 + side] = [corners[0], corners[1], corners[2], corners[3]];
            }
        }
        out
    })
}

/// Extracts the `iso` level set. Samples below `iso` are inside.
pub fn marching_cubes(grid: &ScalarGrid, iso: f32) -> TriangleMesh {
    let [nx, ny, nz] = grid.dims;
    let index = |i: usize, j: usize, k: usize| (k * ny + j) * nx + i;
    let valid = |idx: usize| grid.weights.is_none_or(|w| w[idx] > 0.0);

    let mut vertices: Vec<Vertex> = Vec::new();
    let mut edge_vertex: HashMap<usize, u32> = HashMap::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    let cycles = face_cycles();

    let mut vertex_on_edge = |base: [usize; 3], axis: usize, vertices: &mut Vec<Vertex>| -> u32 {
        let key = index(base[0], base[1], base[2]) * 3 + axis;
        *edge_vertex.entry(key).or_insert_with(|| {
            let a = index(base[0], base[1], base[2]);
            let mut tip = base;
            tip[axis] += 1;
            let b = index(tip[0], tip[1], tip[2]);
            let (va, vb) = (grid.values[a] as f64, grid.values[b] as f64);
            let t = ((iso as f64 - va) / (vb - va)).clamp(EDGE_CLAMP, 1.0 - EDGE_CLAMP);
            let mut p = grid.origin + Vec3::from(base.map(|x| x as f64)) * grid.voxel_size;
            p[axis] += t * grid.voxel_size;
            let color = grid.colors.map(|colors| {
                let has = |i: usize| grid.color_weights.is_none_or(|w| w[i] > 0.0);
                match (has(a), has(b)) {
                    (true, true) => std::array::from_fn(|ch| colors[a][ch] + (colors[b][ch] - colors[a][ch]) * t as f32),
                    (true, false) => colors[a],
                    (false, true) => colors[b],
                    (false, false) => [0.5; 3],
                }
            });
            vertices.push(Vertex { position: p, color });
            (vertices.len() - 1) as u32
        })
    };

    let mut next = [usize::MAX; 12 * 8];
    for k in 0..nz.saturating_sub(1) {
        for j in 0..ny.saturating_sub(1) {
            for i in 0..nx.saturating_sub(1) {
                let corner_idx: [usize; 8] = std::array::from_fn(|c| {
                    let o = corner_offset(c);
                    index(i + o[0], j + o[1], k + o[2])
                });
                if !corner_idx.iter().all(|&c| valid(c)) {
                    continue;
                }
                let inside = corner_idx.map(|c| grid.values[c] < iso);
                if inside.iter().all(|&b| b) || inside.iter().all(|&b| !b) {
                    continue;
                }
                // Cube edges are keyed by their corner pair (a < b) as a·8 + b.
                next.fill(usize::MAX);
                let mut starts = Vec::with_capacity(12);
                for cyc in cycles {
                    let mut crossings: Vec<(usize, bool)> = Vec::with_capacity(4);
                    for m in 0..4 {
                        let (a, b) = (cyc[m], cyc[(m + 1) % 4]);
                        if inside[a] != inside[b] {
                            let key = a.min(b) * 8 + a.max(b);
                            crossings.push((key, !inside[a] && inside[b]));
                        }
                    }
                    let n = crossings.len();
                    for s in 0..n {
                        let (from, out_to_in) = crossings[s];
                        if !out_to_in {
                            continue;
                        }
                        let to = (1..n).map(|d| crossings[(s + d) % n]).find(|c| !c.1).expect("crossings alternate").0;
                        next[from] = to;
                        starts.push(from);
                    }
                }
                let mut visited = [false; 64];
                for &start in &starts {
                    if visited[start] {
                        continue;
                    }
                    let mut loop_vertices = Vec::with_capacity(12);
                    let mut e = start;
                    while !visited[e] {
                        visited[e] = true;
                        let (a, b) = (e / 8, e % 8);
                        let axis = (a ^ b).trailing_zeros() as usize;
                        let o = corner_offset(a);
                        loop_vertices.push(vertex_on_edge([i + o[0], j + o[1], k + o[2]], axis, &mut vertices));
                        e = next[e];
                    }
                    for t in 1..loop_vertices.len().saturating_sub(1) {
                        triangles.push([loop_vertices[0], loop_vertices[t], loop_vertices[t + 1]]);
                    }
                }
            }
        }
    }
    TriangleMesh::from_parts_unchecked(0, vertices, triangles)
}

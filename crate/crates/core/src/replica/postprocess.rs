//! Voxel remeshing and Laplacian smoothing.
//!
//! The remesh samples a signed distance to the input surface on a regular
//! grid and re-extracts its zero set. Grid nodes far from the surface get
//! their sign from a flood fill that starts at the grid boundary; nodes
//! near the surface use the generalized winding number, which tolerates
//! small holes in the input.

use std::collections::{HashMap, VecDeque};

use rayon::prelude::*;

use super::marching_cubes::{marching_cubes, ScalarGrid};
use super::ReplicaError;
use crate::geometry::Vec3;
use crate::mesh::{TriangleMesh, Vertex};

/// Nodes within this many voxels of a triangle get an exact distance.
const BAND_VOXELS: f64 = 2.0;

/// Padding in voxels around the input bounds.
const PADDING_VOXELS: f64 = 3.0;

/// Closest point on triangle `abc` to `p`.
pub(crate) fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Solid angle of triangle `abc` seen from `p`, over 4π.
fn winding_contribution(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let (a, b, c) = (a - p, b - p, c - p);
    let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
    let num = a.dot(&b.cross(&c));
    let den = la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
    2.0 * num.atan2(den) / (4.0 * std::f64::consts::PI)
}

/// Triangles bucketed into cubic cells. A cell far from the query point
/// contributes through the dipole term of its area-weighted normal instead
/// of triangle by triangle.
struct WindingField {
    clusters: Vec<Cluster>,
}

struct Cluster {
    triangles: Vec<[Vec3; 3]>,
    /// Sum of half cross products.
    area_vector: Vec3,
    center: Vec3,
    radius: f64,
}

impl WindingField {
    fn new(mesh: &TriangleMesh, cell: f64) -> Self {
        let mut cells: std::collections::BTreeMap<[i64; 3], Vec<[Vec3; 3]>> = Default::default();
        for t in 0..mesh.triangles().len() {
            let tri = mesh.triangle_positions(t);
            let c = (tri[0] + tri[1] + tri[2]) / 3.0;
            cells.entry([0, 1, 2].map(|a| (c[a] / cell).floor() as i64)).or_default().push(tri);
        }
        let clusters = cells
            .into_values()
            .map(|triangles| {
                let mut area_vector = Vec3::zeros();
                let mut weighted = Vec3::zeros();
                let mut total = 0.0;
                for [a, b, c] in &triangles {
                    let n = (b - a).cross(&(c - a)) * 0.5;
                    let area = n.norm();
                    area_vector += n;
                    weighted += (a + b + c) / 3.0 * area;
                    total += area;
                }
                let center = if total > 0.0 {
                    weighted / total
                } else {
                    triangles.iter().map(|[a, b, c]| (a + b + c) / 3.0).sum::<Vec3>() / triangles.len() as f64
                };
                let radius = triangles
                    .iter()
                    .flat_map(|t| t.iter())
                    .map(|v| (v - center).norm())
                    .fold(0.0, f64::max);
                Cluster { triangles, area_vector, center, radius }
            })
            .collect();
        Self { clusters }
    }

    fn at(&self, p: &Vec3) -> f64 {
        self.clusters
            .iter()
            .map(|c| {
                let d = c.center - p;
                let dist = d.norm();
                if dist > 2.0 * c.radius {
                    c.area_vector.dot(&d) / (4.0 * std::f64::consts::PI * dist.powi(3))
                } else {
                    c.triangles.iter().map(|[a, b, t]| winding_contribution(p, a, b, t)).sum()
                }
            })
            .sum()
    }
}

/// Re-extracts the surface of `mesh` from a signed distance sampled at
/// `voxel_size`. Vertex colors are taken from the nearest input vertex.
pub fn voxel_remesh(mesh: &TriangleMesh, voxel_size: f64) -> Result<TriangleMesh, ReplicaError> {
    if mesh.is_empty() {
        return Err(ReplicaError::EmptyMesh);
    }
    let h = voxel_size;
    let bounds = mesh.bounds();
    let origin = bounds.min - Vec3::repeat(PADDING_VOXELS * h);
    let extent = bounds.max - bounds.min + Vec3::repeat(2.0 * PADDING_VOXELS * h);
    let dims = extent.map(|e| (e / h).ceil() as usize + 1);
    let [nx, ny, nz] = [dims.x, dims.y, dims.z];
    let index = |i: usize, j: usize, k: usize| (k * ny + j) * nx + i;
    let node = |i: usize, j: usize, k: usize| origin + Vec3::new(i as f64, j as f64, k as f64) * h;

    // Unsigned distance in a narrow band around the triangles.
    let band = BAND_VOXELS * h;
    let mut dist = vec![f64::INFINITY; nx * ny * nz];
    for t in 0..mesh.triangles().len() {
        let [a, b, c] = mesh.triangle_positions(t);
        let lo = a.inf(&b).inf(&c) - Vec3::repeat(band);
        let hi = a.sup(&b).sup(&c) + Vec3::repeat(band);
        let lo_idx = ((lo - origin) / h).map(|x| x.floor().max(0.0) as usize);
        let hi_idx = ((hi - origin) / h).map(|x| x.ceil() as usize);
        for k in lo_idx.z..=hi_idx.z.min(nz - 1) {
            for j in lo_idx.y..=hi_idx.y.min(ny - 1) {
                for i in lo_idx.x..=hi_idx.x.min(nx - 1) {
                    let p = node(i, j, k);
                    let d = (closest_point_on_triangle(&p, &a, &b, &c) - p).norm();
                    let slot = &mut dist[index(i, j, k)];
                    if d < *slot {
                        *slot = d;
                    }
                }
            }
        }
    }
    let in_band = |idx: usize| dist[idx] <= band;

    // Nodes off the band reachable from the boundary are outside.
    let mut outside = vec![false; nx * ny * nz];
    let mut queue = VecDeque::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let boundary = i == 0 || j == 0 || k == 0 || i == nx - 1 || j == ny - 1 || k == nz - 1;
                let idx = index(i, j, k);
                if boundary && !in_band(idx) {
                    outside[idx] = true;
                    queue.push_back((i, j, k));
                }
            }
        }
    }
    while let Some((i, j, k)) = queue.pop_front() {
        let neighbors = [
            (i.wrapping_sub(1), j, k),
            (i + 1, j, k),
            (i, j.wrapping_sub(1), k),
            (i, j + 1, k),
            (i, j, k.wrapping_sub(1)),
            (i, j, k + 1),
        ];
        for (a, b, c) in neighbors {
            if a < nx && b < ny && c < nz {
                let idx = index(a, b, c);
                if !outside[idx] && !in_band(idx) {
                    outside[idx] = true;
                    queue.push_back((a, b, c));
                }
            }
        }
    }

    let winding = WindingField::new(mesh, 2.0 * h);
    let values: Vec<f32> = (0..nx * ny * nz)
        .into_par_iter()
        .map(|idx| {
            if !in_band(idx) {
                let s = if outside[idx] { 1.0 } else { -1.0 };
                return (s * band) as f32;
            }
            let (i, j, k) = (idx % nx, (idx / nx) % ny, idx / (nx * ny));
            let p = node(i, j, k);
            let w = winding.at(&p);
            let s = if w.abs() > 0.5 { -1.0 } else { 1.0 };
            (s * dist[idx]) as f32
        })
        .collect();

    let values = blur_121(&values, [nx, ny, nz]);
    let grid = ScalarGrid { dims: [nx, ny, nz], origin, voxel_size: h, values: &values, weights: None, colors: None, color_weights: None };
    let mut out = drop_small_pieces(&marching_cubes(&grid, 0.0));
    if out.is_empty() {
        return Err(ReplicaError::EmptyMesh);
    }
    if mesh.vertices().iter().all(|v| v.color.is_some()) {
        let colors = NearestColor::new(mesh.vertices(), h);
        let vertices = out.vertices().iter().map(|v| Vertex { position: v.position, color: Some(colors.at(&v.position)) }).collect();
        out = TriangleMesh::from_parts_unchecked(mesh.chunk_id, vertices, out.triangles().to_vec());
    }
    Ok(out)
}

/// Separable `[1, 2, 1] / 4` filter along each axis; border samples are
/// repeated.
fn blur_121(values: &[f32], dims: [usize; 3]) -> Vec<f32> {
    let strides = [1, dims[0], dims[0] * dims[1]];
    let mut cur = values.to_vec();
    for axis in 0..3 {
        let (stride, n) = (strides[axis], dims[axis]);
        cur = (0..cur.len())
            .into_par_iter()
            .map(|idx| {
                let c = (idx / stride) % n;
                let lo = if c > 0 { idx - stride } else { idx };
                let hi = if c + 1 < n { idx + stride } else { idx };
                0.25 * cur[lo] + 0.5 * cur[idx] + 0.25 * cur[hi]
            })
            .collect();
    }
    cur
}

/// Keeps the edge-connected pieces with at least a tenth of the largest
/// piece's triangles and discards unused vertices.
fn drop_small_pieces(mesh: &TriangleMesh) -> TriangleMesh {
    let n = mesh.vertices().len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for t in mesh.triangles() {
        let a = find(&mut parent, t[0] as usize);
        for &v in &t[1..] {
            let b = find(&mut parent, v as usize);
            parent[b.max(a)] = a.min(b);
        }
    }
    let roots: Vec<usize> = mesh.triangles().iter().map(|t| find(&mut parent, t[0] as usize)).collect();
    let mut sizes: HashMap<usize, usize> = HashMap::new();
    for &r in &roots {
        *sizes.entry(r).or_default() += 1;
    }
    let largest = sizes.values().copied().max().unwrap_or(0);
    if sizes.len() <= 1 {
        return mesh.clone();
    }
    let mut remap = vec![u32::MAX; n];
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (t, r) in mesh.triangles().iter().zip(&roots) {
        if sizes[r] * 10 < largest {
            continue;
        }
        triangles.push(t.map(|v| {
            let slot = &mut remap[v as usize];
            if *slot == u32::MAX {
                *slot = vertices.len() as u32;
                vertices.push(mesh.vertices()[v as usize]);
            }
            *slot
        }));
    }
    TriangleMesh::from_parts_unchecked(mesh.chunk_id, vertices, triangles)
}

/// Nearest-vertex color lookup over a uniform hash grid.
struct NearestColor<'a> {
    vertices: &'a [Vertex],
    cell: f64,
    buckets: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> NearestColor<'a> {
    fn new(vertices: &'a [Vertex], cell: f64) -> Self {
        let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, v) in vertices.iter().enumerate() {
            buckets.entry(Self::key(&v.position, cell)).or_default().push(i);
        }
        Self { vertices, cell, buckets }
    }

    fn key(p: &Vec3, cell: f64) -> [i64; 3] {
        [0, 1, 2].map(|a| (p[a] / cell).floor() as i64)
    }

    fn at(&self, p: &Vec3) -> [f32; 3] {
        let center = Self::key(p, self.cell);
        let mut best: Option<(f64, usize)> = None;
        // Search growing shells; once a candidate is found one more shell
        // guarantees it is the nearest.
        for r in 0..=8i64 {
            for dz in -r..=r {
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        let Some(bucket) = self.buckets.get(&[center[0] + dx, center[1] + dy, center[2] + dz]) else { continue };
                        for &i in bucket {
                            let d = (self.vertices[i].position - p).norm_squared();
                            if best.is_none_or(|(bd, bi)| d < bd || (d == bd && i < bi)) {
                                best = Some((d, i));
                            }
                        }
                    }
                }
            }
            if let Some((d, _)) = best {
                if d.sqrt() <= r as f64 * self.cell {
                    break;
                }
            }
        }
        let i = match best {
            Some((_, i)) => i,
            None => (0..self.vertices.len())
                .min_by(|&a, &b| (self.vertices[a].position - p).norm_squared().total_cmp(&(self.vertices[b].position - p).norm_squared()))
                .expect("nonempty"),
        };
        self.vertices[i].color.expect("all colored")
    }
}

/// Uniform-weight Laplacian smoothing: each pass moves every vertex
/// `lambda` of the way toward the mean of its edge neighbors.
pub fn laplacian_smooth(mesh: &TriangleMesh, iterations: usize, lambda: f64) -> TriangleMesh {
    let n = mesh.vertices().len();
    let mut neighbors: Vec<Vec<u32>> = vec![Vec::new(); n];
    for t in mesh.triangles() {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            neighbors[a as usize].push(b);
            neighbors[b as usize].push(a);
        }
    }
    for list in &mut neighbors {
        list.sort_unstable();
        list.dedup();
    }
    let mut positions: Vec<Vec3> = mesh.vertices().iter().map(|v| v.position).collect();
    for _ in 0..iterations {
        positions = (0..n)
            .into_par_iter()
            .map(|i| {
                let nb = &neighbors[i];
                if nb.is_empty() {
                    return positions[i];
                }
                let mean = nb.iter().map(|&j| positions[j as usize]).sum::<Vec3>() / nb.len() as f64;
                positions[i] + (mean - positions[i]) * lambda
            })
            .collect();
    }
    let vertices = mesh.vertices().iter().zip(positions).map(|(v, position)| Vertex { position, color: v.color }).collect();
    TriangleMesh::from_parts_unchecked(mesh.chunk_id, vertices, mesh.triangles().to_vec())
}

/// Signed volume and its centroid for a closed, outward-oriented mesh.
fn enclosed_volume(mesh: &TriangleMesh) -> (f64, Vec3) {
    let mut volume = 0.0;
    let mut moment = Vec3::zeros();
    for t in 0..mesh.triangles().len() {
        let [a, b, c] = mesh.triangle_positions(t);
        let v = a.dot(&b.cross(&c)) / 6.0;
        volume += v;
        moment += (a + b + c) * (v / 4.0);
    }
    (volume, if volume != 0.0 { moment / volume } else { Vec3::zeros() })
}

/// Voxel remesh followed by Laplacian smoothing. Smoothing shrinks a
/// closed surface, so a watertight result is scaled about its centroid
/// back to the remeshed volume.
pub fn postprocess(mesh: &TriangleMesh, voxel_size: f64, smooth_iterations: usize, lambda: f64) -> Result<TriangleMesh, ReplicaError> {
    let remeshed = voxel_remesh(mesh, voxel_size)?;
    let smoothed = laplacian_smooth(&remeshed, smooth_iterations, lambda);
    if !remeshed.is_watertight() {
        return Ok(smoothed);
    }
    let (v0, _) = enclosed_volume(&remeshed);
    let (v1, centroid) = enclosed_volume(&smoothed);
    if !(v0 > 0.0 && v1 > 0.0) || v0 == v1 {
        return Ok(smoothed);
    }
    let k = (v0 / v1).cbrt();
    let vertices = smoothed
        .vertices()
        .iter()
        .map(|v| Vertex { position: centroid + (v.position - centroid) * k, color: v.color })
        .collect();
    Ok(TriangleMesh::from_parts_unchecked(smoothed.chunk_id, vertices, smoothed.triangles().to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sdf_mesh(sdf: impl Fn(&Vec3) -> f64, half: f64, h: f64) -> TriangleMesh {
        let n = (2.0 * half / h).ceil() as usize + 1;
        let origin = Vec3::repeat(-half);
        let values: Vec<f32> = (0..n * n * n)
            .map(|idx| {
                let p = origin + Vec3::new((idx % n) as f64, ((idx / n) % n) as f64, (idx / (n * n)) as f64) * h;
                sdf(&p) as f32
            })
            .collect();
        marching_cubes(&ScalarGrid { dims: [n; 3], origin, voxel_size: h, values: &values, weights: None, colors: None, color_weights: None }, 0.0)
    }

    fn max_radial_deviation(m: &TriangleMesh, r: f64) -> f64 {
        m.vertices().iter().map(|v| (v.position.norm() - r).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn closest_point_regions() {
        let (a, b, c) = (Vec3::zeros(), Vec3::x(), Vec3::y());
        assert!((closest_point_on_triangle(&Vec3::new(0.2, 0.2, 1.0), &a, &b, &c) - Vec3::new(0.2, 0.2, 0.0)).norm() < 1e-15);
        assert_eq!(closest_point_on_triangle(&Vec3::new(-1.0, -1.0, 0.0), &a, &b, &c), a);
        assert_eq!(closest_point_on_triangle(&Vec3::new(0.5, -1.0, 0.0), &a, &b, &c), Vec3::new(0.5, 0.0, 0.0));
        let p = closest_point_on_triangle(&Vec3::new(1.0, 1.0, 0.0), &a, &b, &c);
        assert!((p - Vec3::new(0.5, 0.5, 0.0)).norm() < 1e-15);
    }

    /// Sphere tessellated at `tess`, each vertex moved radially by up to
    /// `jitter`.
    fn jittered_sphere(r: f64, tess: f64, jitter: f64, seed: u64) -> TriangleMesh {
        let clean = sdf_mesh(|p| p.norm() - r, r + 3.0 * tess, tess);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vertices: Vec<Vertex> = clean
            .vertices()
            .iter()
            .map(|v| Vertex::new(v.position * (1.0 + rng.random_range(-jitter..jitter) / r)))
            .collect();
        TriangleMesh::from_parts_unchecked(0, vertices, clean.triangles().to_vec())
    }

    #[test]
    fn smoothing_reduces_jitter_threefold() {
        // A scan-like input: tessellation finer than the remesh voxel, with
        // one voxel of radial jitter.
        let (r, h) = (0.06, 0.005);
        for seed in 0..3 {
            let noisy = jittered_sphere(r, h / 2.0, h, seed);
            let before = max_radial_deviation(&noisy, r);
            let after = max_radial_deviation(&postprocess(&noisy, h, 10, 0.5).unwrap(), r);
            assert!(before > 0.95 * h);
            assert!(after * 3.0 <= before, "seed {seed}: before {before} after {after}");
        }
    }

    #[test]
    fn smoothing_halves_jitter_at_voxel_tessellation() {
        let (r, h) = (0.06, 0.005);
        let noisy = jittered_sphere(r, h, h, 0);
        let before = max_radial_deviation(&noisy, r);
        let after = max_radial_deviation(&postprocess(&noisy, h, 10, 0.5).unwrap(), r);
        assert!(after * 2.0 <= before, "before {before} after {after}");
    }

    #[test]
    fn cube_stays_closed_genus_zero() {
        let cube = sdf_mesh(|p| p.abs().max() - 0.05, 0.07, 0.005);
        let out = postprocess(&cube, 0.005, 10, 0.5).unwrap();
        assert!(out.is_watertight());
        assert_eq!(out.euler_characteristic(), 2);
    }

    #[test]
    fn zero_lambda_is_plain_remesh() {
        let sphere = sdf_mesh(|p| p.norm() - 0.04, 0.06, 0.005);
        assert_eq!(postprocess(&sphere, 0.005, 10, 0.0).unwrap(), voxel_remesh(&sphere, 0.005).unwrap());
    }

    #[test]
    fn remesh_closes_a_small_hole_and_keeps_colors() {
        let sphere = sdf_mesh(|p| p.norm() - 0.04, 0.06, 0.005);
        let vertices: Vec<Vertex> =
            sphere.vertices().iter().map(|v| Vertex::colored(v.position, [1.0, 0.5, 0.0])).collect();
        // Drop the triangles around the top pole.
        let triangles: Vec<[u32; 3]> = sphere
            .triangles()
            .iter()
            .copied()
            .filter(|t| t.iter().any(|&i| vertices[i as usize].position.z < 0.038))
            .collect();
        let holed = TriangleMesh::from_parts_unchecked(0, vertices, triangles);
        assert!(!holed.is_watertight());
        let out = voxel_remesh(&holed, 0.005).unwrap();
        assert!(out.is_watertight());
        assert_eq!(out.euler_characteristic(), 2);
        assert!(out.vertices().iter().all(|v| v.color == Some([1.0, 0.5, 0.0])));
    }

    #[test]
    fn empty_input_rejected() {
        assert_eq!(voxel_remesh(&TriangleMesh::empty(0), 0.01), Err(ReplicaError::EmptyMesh));
    }
}

use nalgebra::{Matrix3, SymmetricEigen};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{PlaneModel, ReplicaError};
use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    /// Random three-point hypotheses tried in addition to the seed plane.
    pub iterations: usize,
    /// Inlier band half-width in meters.
    pub threshold: f64,
    pub rng_seed: u64,
    /// Hypotheses are scored on at most this many points.
    pub max_scored_points: usize,
    /// Hypotheses tilted further than this from the seed normal (radians)
    /// are discarded, so the fit refines the seed instead of locking onto
    /// some other large planar patch.
    pub max_tilt_from_seed: f64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 200,
            threshold: 0.008,
            rng_seed: 0,
            max_scored_points: 5000,
            max_tilt_from_seed: 20f64.to_radians(),
        }
    }
}

/// Centroid and covariance eigen-decomposition of a point set.
fn principal_axes<'a>(points: impl Iterator<Item = &'a Vec3> + Clone) -> Option<(Vec3, SymmetricEigen<f64, nalgebra::U3>)> {
    let n = points.clone().count();
    if n == 0 {
        return None;
    }
    let centroid = points.clone().sum::<Vec3>() / n as f64;
    let cov = points.fold(Matrix3::zeros(), |acc, p| {
        let d = p - centroid;
        acc + d * d.transpose()
    }) / n as f64;
    Some((centroid, SymmetricEigen::new(cov)))
}

/// Least-squares plane through the points, oriented along `hint`.
fn fit_least_squares<'a>(points: impl Iterator<Item = &'a Vec3> + Clone, hint: &Vec3) -> Option<(Vec3, f64)> {
    let (centroid, eig) = principal_axes(points)?;
    let k = eig.eigenvalues.imin();
    let mut normal: Vec3 = eig.eigenvectors.column(k).into();
    if normal.dot(hint) < 0.0 {
        normal = -normal;
    }
    Some((normal, normal.dot(&centroid)))
}

fn count_inliers(points: &[Vec3], idx: &[usize], normal: &Vec3, offset: f64, threshold: f64) -> usize {
    idx.iter().filter(|&&i| (normal.dot(&points[i]) - offset).abs() <= threshold).count()
}

/// Refines `seed` against `points`: the seed and random three-point planes
/// compete on inlier count, then the winner is refit by least squares on
/// its inliers. Deterministic for a given `rng_seed`. The returned normal
/// points the same way as the seed's.
pub fn fit_plane_ransac(
    points: &[Vec3],
    seed: &PlaneModel,
    params: &RansacParams,
) -> Result<(PlaneModel, Vec<bool>), ReplicaError> {
    let finite: Vec<usize> = (0..points.len()).filter(|&i| points[i].iter().all(|v| v.is_finite())).collect();
    if finite.len() < 3 {
        return Err(ReplicaError::InsufficientPoints(finite.len()));
    }
    let (_, eig) = principal_axes(finite.iter().map(|&i| &points[i])).expect("nonempty");
    let mut ev = eig.eigenvalues.as_slice().to_vec();
    ev.sort_by(f64::total_cmp);
    // Collinear sets have a single non-zero spread direction.
    if ev[1] <= 1e-12 * ev[2].max(1e-300) {
        return Err(ReplicaError::InsufficientPoints(finite.len()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let scored: Vec<usize> = if finite.len() > params.max_scored_points {
        let mut picked: Vec<usize> =
            sample(&mut rng, finite.len(), params.max_scored_points).into_iter().map(|k| finite[k]).collect();
        picked.sort_unstable();
        picked
    } else {
        finite.clone()
    };

    let seed_normal = seed.normal.normalize();
    let min_cos = params.max_tilt_from_seed.cos();
    let mut best = (seed_normal, seed.offset);
    let mut best_score = count_inliers(points, &scored, &seed_normal, seed.offset, params.threshold);
    for _ in 0..params.iterations {
        let [a, b, c] = [0; 3].map(|_| finite[rng.random_range(0..finite.len())]);
        let n = (points[b] - points[a]).cross(&(points[c] - points[a]));
        let len = n.norm();
        if len < 1e-12 {
            continue;
        }
        let mut n = n / len;
        if n.dot(&seed_normal) < 0.0 {
            n = -n;
        }
        if n.dot(&seed_normal) < min_cos {
            continue;
        }
        let d = n.dot(&points[a]);
        let score = count_inliers(points, &scored, &n, d, params.threshold);
        if score > best_score {
            best = (n, d);
            best_score = score;
        }
    }

    // Refit on inliers twice; the second pass uses the refined band.
    let (mut normal, mut offset) = best;
    for _ in 0..2 {
        let inliers: Vec<&Vec3> =
            finite.iter().map(|&i| &points[i]).filter(|p| (normal.dot(p) - offset).abs() <= params.threshold).collect();
        if inliers.len() < 3 {
            break;
        }
        match fit_least_squares(inliers.iter().copied(), &seed_normal) {
            Some((n, d)) => (normal, offset) = (n, d),
            None => break,
        }
    }

    let plane = PlaneModel { normal, offset, inlier_threshold: params.threshold };
    let mask = points.iter().map(|p| p.iter().all(|v| v.is_finite()) && plane.is_inlier(p)).collect();
    Ok((plane, mask))
}

use nalgebra::Matrix3;

use super::{GeometryError, SimTransform, UnitQuat, Vec3};

/// Half the side length of the square tripod markers, in meters.
pub const MARKER_HALF_WIDTH: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AnchorId {
    Front,
    Back,
}

/// One tripod marker as seen by a peer, paired with where that marker sits
/// relative to the 360° camera lenses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorObservation {
    pub anchor_id: AnchorId,
    pub observed_pose_in_peer_space: SimTransform,
    pub canonical_pose_in_camera_space: SimTransform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    /// Maps peer-space points into camera space.
    pub transform: SimTransform,
    /// Root-mean-square corner residual after the fit, in meters.
    pub rms_residual: f64,
}

/// Corner points of a marker in the frame described by `pose`; the marker
/// lies in its local XY plane.
pub fn marker_corners(pose: &SimTransform) -> [Vec3; 4] {
    let h = MARKER_HALF_WIDTH;
    [(-h, -h), (h, -h), (h, h), (-h, h)].map(|(x, y)| pose.transform_point(&Vec3::new(x, y, 0.0)))
}

/// Rigid peer-space → camera-space transform from the front and back tripod
/// markers, fitted over all eight marker corners in closed form (SVD-based
/// absolute orientation).
pub fn align_spaces(observations: &[AnchorObservation; 2]) -> Result<Alignment, GeometryError> {
    let [a, b] = observations;
    if a.anchor_id == b.anchor_id {
        return Err(GeometryError::InvalidAnchors(format!(
            "both observations are of the {:?} anchor",
            a.anchor_id
        )));
    }
    for obs in observations {
        let rigid = (obs.observed_pose_in_peer_space.scale - 1.0).abs() < 1e-9
            && (obs.canonical_pose_in_camera_space.scale - 1.0).abs() < 1e-9;
        if !rigid {
            return Err(GeometryError::InvalidAnchors("anchor poses must have unit scale".into()));
        }
    }
    let pa = a.observed_pose_in_peer_space.translation;
    let pb = b.observed_pose_in_peer_space.translation;
    if (pa - pb).norm() <= 1e-6 {
        return Err(GeometryError::DegenerateAnchors);
    }

    let mut source = Vec::with_capacity(8);
    let mut target = Vec::with_capacity(8);
    for obs in observations {
        source.extend(marker_corners(&obs.observed_pose_in_peer_space));
        target.extend(marker_corners(&obs.canonical_pose_in_camera_space));
    }
    let transform = fit_rigid(&source, &target);
    let sq: f64 = source
        .iter()
        .zip(&target)
        .map(|(s, t)| (transform.transform_point(s) - t).norm_squared())
        .sum();
    Ok(Alignment { transform, rms_residual: (sq / source.len() as f64).sqrt() })
}

/// Least-squares rigid motion taking `source` onto `target`.
fn fit_rigid(source: &[Vec3], target: &[Vec3]) -> SimTransform {
    let n = source.len() as f64;
    let cs = source.iter().sum::<Vec3>() / n;
    let ct = target.iter().sum::<Vec3>() / n;
    let mut h = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        h += (s - cs) * (t - ct).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    let rotation = UnitQuat::from_matrix(&r);
    SimTransform::rigid(rotation, ct - rotation * cs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canonical() -> [SimTransform; 2] {
        // Markers facing forward and backward on a tripod 1.2 m below the lenses.
        [
            SimTransform::rigid(UnitQuat::identity(), Vec3::new(0.0, -1.2, 0.04)),
            SimTransform::rigid(
                UnitQuat::from_axis_angle(&Vec3::y_axis(), std::f64::consts::PI),
                Vec3::new(0.0, -1.2, -0.04),
            ),
        ]
    }

    fn observations(observed: [SimTransform; 2]) -> [AnchorObservation; 2] {
        let c = canonical();
        [
            AnchorObservation {
                anchor_id: AnchorId::Front,
                observed_pose_in_peer_space: observed[0],
                canonical_pose_in_camera_space: c[0],
            },
            AnchorObservation {
                anchor_id: AnchorId::Back,
                observed_pose_in_peer_space: observed[1],
                canonical_pose_in_camera_space: c[1],
            },
        ]
    }

    #[test]
    fn identical_poses_give_identity() {
        let al = align_spaces(&observations(canonical())).unwrap();
        assert!(al.transform.distance(&SimTransform::identity()) < 1e-12);
        assert!(al.rms_residual < 1e-12);
    }

    #[test]
    fn recovers_known_motion() {
        // canonical = M · observed, so the fitted transform must equal M.
        let m = SimTransform::rigid(
            UnitQuat::from_axis_angle(&Vec3::y_axis(), std::f64::consts::FRAC_PI_2),
            Vec3::new(1.0, 0.0, 0.0),
        );
        let observed = canonical().map(|c| m.inverse().compose(&c));
        let al = align_spaces(&observations(observed)).unwrap();
        assert!(al.transform.distance(&m) < 1e-9, "{:?}", al.transform);
        assert!(al.rms_residual < 1e-9);
    }

    #[test]
    fn random_rigid_motions_are_exact() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let m = SimTransform::rigid(
                UnitQuat::from_scaled_axis(axis * 3.0),
                Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
            );
            let observed = canonical().map(|c| m.inverse().compose(&c));
            let al = align_spaces(&observations(observed)).unwrap();
            assert!(al.transform.distance(&m) < 1e-9);
            assert!(al.rms_residual < 1e-9);
        }
    }

    #[test]
    fn noisy_observation_reports_residual() {
        let mut observed = canonical();
        observed[0].translation.x += 0.01;
        let al = align_spaces(&observations(observed)).unwrap();
        assert!(al.rms_residual > 1e-4);
    }

    #[test]
    fn coincident_anchors_are_degenerate() {
        let c = canonical();
        let observed = [c[0], SimTransform::rigid(c[1].rotation, c[0].translation)];
        assert_eq!(align_spaces(&observations(observed)), Err(GeometryError::DegenerateAnchors));
    }

    #[test]
    fn duplicate_anchor_ids_rejected() {
        let mut obs = observations(canonical());
        obs[1].anchor_id = AnchorId::Front;
        assert!(matches!(align_spaces(&obs), Err(GeometryError::InvalidAnchors(_))));
    }
}

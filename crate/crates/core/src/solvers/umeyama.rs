use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use super::SolverError;
use crate::geom::{PoseSE3, WorldPoint};

/// `x ↦ scale · rotation · x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self { scale: 1.0, rotation: UnitQuaternion::identity(), translation: Vector3::zeros() }
    }

    pub fn apply(&self, p: &WorldPoint) -> WorldPoint {
        WorldPoint::from(self.scale * (self.rotation * p.coords) + self.translation)
    }

    /// Maps a world-to-camera pose into the target frame: the center moves
    /// with the point map, the orientation with the rotation part.
    pub fn apply_pose(&self, pose: &PoseSE3) -> PoseSE3 {
        let center = self.apply(&pose.center());
        PoseSE3::from_center(pose.rotation * self.rotation.inverse(), &center)
    }
}

/// Least-squares similarity aligning `source` onto `target`.
pub fn umeyama_similarity(source: &[WorldPoint], target: &[WorldPoint]) -> Result<SimilarityTransform, SolverError> {
    let n = source.len();
    if n < 3 || target.len() != n {
        return Err(SolverError::InsufficientCorrespondences { needed: 3, got: n.min(target.len()) });
    }
    let nf = n as f64;
    let mu_s = source.iter().map(|p| p.coords).sum::<Vector3<f64>>() / nf;
    let mu_t = target.iter().map(|p| p.coords).sum::<Vector3<f64>>() / nf;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, t) in source.iter().zip(target) {
        let ds = s.coords - mu_s;
        cov += (t.coords - mu_t) * ds.transpose();
        var_s += ds.norm_squared();
    }
    cov /= nf;
    var_s /= nf;
    if var_s <= 0.0 {
        return Err(SolverError::DegenerateConfiguration("coincident source points"));
    }
    let mut scatter = Matrix3::zeros();
    for s in source {
        let ds = s.coords - mu_s;
        scatter += ds * ds.transpose();
    }
    let sv = scatter.symmetric_eigenvalues();
    let mut ev: Vec<f64> = sv.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[1] <= 1e-12 * ev[0] {
        return Err(SolverError::DegenerateConfiguration("collinear source points"));
    }

    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Vector3::new(1.0, 1.0, 1.0);
    if u.determinant() * vt.determinant() < 0.0 {
        d[2] = -1.0;
    }
    let r = u * Matrix3::from_diagonal(&d) * vt;
    let trace: f64 = svd.singular_values.iter().zip(d.iter()).map(|(s, d)| s * d).sum();
    let scale = trace / var_s;
    if !(scale > 0.0) {
        return Err(SolverError::DegenerateConfiguration("non-positive scale"));
    }
    let rotation = UnitQuaternion::from_matrix(&r);
    let translation = mu_t - scale * (rotation * mu_s);
    Ok(SimilarityTransform { scale, rotation, translation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<WorldPoint> {
        (0..n)
            .map(|_| WorldPoint::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
            .collect()
    }

    fn rss(t: &SimilarityTransform, s: &[WorldPoint], d: &[WorldPoint]) -> f64 {
        s.iter().zip(d).map(|(a, b)| (t.apply(a) - b).norm_squared()).sum()
    }

    #[test]
    fn self_alignment_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let src = cloud(&mut rng, 10);
        let t = umeyama_similarity(&src, &src).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-12);
        assert!(t.rotation.angle() < 1e-12);
        assert!(t.translation.norm() < 1e-12);
    }

    #[test]
    fn recovers_known_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let src = cloud(&mut rng, 20);
        let truth = SimilarityTransform {
            scale: 2.0,
            rotation: UnitQuaternion::from_euler_angles(0.3, -1.1, 2.0),
            translation: Vector3::new(1.0, -4.0, 0.5),
        };
        let dst: Vec<_> = src.iter().map(|p| truth.apply(p)).collect();
        let t = umeyama_similarity(&src, &dst).unwrap();
        assert!((t.scale - 2.0).abs() < 1e-9);
        assert!(t.rotation.angle_to(&truth.rotation) < 1e-9);
        assert!((t.translation - truth.translation).norm() < 1e-9);
    }

    #[test]
    fn collinear_sources_are_degenerate() {
        let src: Vec<_> = (0..5).map(|i| WorldPoint::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(umeyama_similarity(&src, &src), Err(SolverError::DegenerateConfiguration(_))));
    }

    #[test]
    fn beats_random_competitors_on_noisy_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let src = cloud(&mut rng, 30);
        let truth = SimilarityTransform {
            scale: 0.7,
            rotation: UnitQuaternion::from_euler_angles(1.0, 0.2, -0.4),
            translation: Vector3::new(3.0, 0.0, -1.0),
        };
        let dst: Vec<_> = src
            .iter()
            .map(|p| {
                let q = truth.apply(p);
                WorldPoint::new(q.x + rng.random_range(-0.3..0.3), q.y + rng.random_range(-0.3..0.3), q.z + rng.random_range(-0.3..0.3))
            })
            .collect();
        let t = umeyama_similarity(&src, &dst).unwrap();
        let best = rss(&t, &src, &dst);
        for _ in 0..100 {
            // competitors are perturbations of the estimate, so they are close
            let c = SimilarityTransform {
                scale: t.scale * rng.random_range(0.9..1.1),
                rotation: UnitQuaternion::from_euler_angles(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1))
                    * t.rotation,
                translation: t.translation + Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)),
            };
            assert!(best <= rss(&c, &src, &dst));
        }
    }

    #[test]
    fn pose_mapping_keeps_projection_geometry() {
        let t = SimilarityTransform {
            scale: 3.0,
            rotation: UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3),
            translation: Vector3::new(1.0, 2.0, 3.0),
        };
        let pose = PoseSE3::new(UnitQuaternion::from_euler_angles(-0.4, 0.5, 0.0), Vector3::new(0.2, -0.1, 2.0));
        let p = WorldPoint::new(0.3, 0.4, 1.0);
        let before = pose.transform_point(&p);
        let after = t.apply_pose(&pose).transform_point(&t.apply(&p));
        assert!((after - 3.0 * before).norm() < 1e-12);
    }
}

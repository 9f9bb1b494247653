use nalgebra::{Matrix6, Vector6};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{solve_p3p, SolverError};
use crate::geom::{jacobians_at, CameraIntrinsics, PixelPoint, PoseSE3, WorldPoint};
use crate::model::LandmarkId;

/// A query feature paired with the landmark it was matched to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence2D3D {
    pub feature: usize,
    pub pixel: PixelPoint,
    pub point_id: LandmarkId,
    pub world: WorldPoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub max_iterations: usize,
    pub inlier_threshold: f64,
    pub min_inliers: usize,
    pub confidence: f64,
    pub rng_seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { max_iterations: 1000, inlier_threshold: 4.0, min_inliers: 15, confidence: 0.999, rng_seed: 0 }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.inlier_threshold > 0.0) {
            return Err("inlier_threshold must be positive".into());
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err("confidence must lie in (0, 1)".into());
        }
        if self.max_iterations == 0 {
            return Err("max_iterations must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnpResult {
    pub pose: PoseSE3,
    /// Indices into the input correspondences, ascending.
    pub inliers: Vec<usize>,
    pub iterations: usize,
}

/// Number of hypotheses needed so that an all-inlier sample of size
/// `sample_size` is drawn with probability `confidence`.
pub(crate) fn adaptive_iterations(inlier_ratio: f64, sample_size: i32, confidence: f64, cap: usize) -> usize {
    let good = inlier_ratio.powi(sample_size);
    if good <= 0.0 {
        return cap;
    }
    if good >= 1.0 {
        return 1;
    }
    let n = (1.0 - confidence).ln() / (1.0 - good).ln();
    if !n.is_finite() {
        return cap;
    }
    (n.ceil() as usize).clamp(1, cap)
}

fn sq_error(intr: &CameraIntrinsics, pose: &PoseSE3, c: &Correspondence2D3D) -> f64 {
    match intr.project_camera_point(&pose.transform_point(&c.world)) {
        Some(px) => (px - c.pixel).norm_squared(),
        None => f64::INFINITY,
    }
}

fn score(intr: &CameraIntrinsics, pose: &PoseSE3, corrs: &[Correspondence2D3D], thr2: f64) -> (usize, f64) {
    let mut count = 0;
    let mut cost = 0.0;
    for c in corrs {
        let e = sq_error(intr, pose, c);
        if e <= thr2 {
            count += 1;
            cost += e;
        } else {
            cost += thr2;
        }
    }
    (count, cost)
}

fn inlier_set(intr: &CameraIntrinsics, pose: &PoseSE3, corrs: &[Correspondence2D3D], thr2: f64) -> Vec<usize> {
    corrs
        .iter()
        .enumerate()
        .filter(|(_, c)| sq_error(intr, pose, c) <= thr2)
        .map(|(i, _)| i)
        .collect()
}

/// P3P hypotheses disambiguated by a fourth correspondence, scored by inlier
/// count (ties broken by truncated squared error), then refined on the
/// inliers and re-scored.
pub fn ransac_pnp(
    corrs: &[Correspondence2D3D],
    intr: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<PnpResult, SolverError> {
    if corrs.len() < 4 {
        return Err(SolverError::InsufficientCorrespondences { needed: 4, got: corrs.len() });
    }
    let thr2 = cfg.inlier_threshold * cfg.inlier_threshold;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut best: Option<(PoseSE3, usize, f64)> = None;
    let mut needed = cfg.max_iterations;
    let mut iter = 0;
    while iter < needed.min(cfg.max_iterations) {
        iter += 1;
        let idx = sample(&mut rng, corrs.len(), 4);
        let minimal = [corrs[idx.index(0)], corrs[idx.index(1)], corrs[idx.index(2)]];
        let check = &corrs[idx.index(3)];
        let Ok(cands) = solve_p3p(&minimal, intr) else { continue };
        let Some(pose) = cands
            .into_iter()
            .map(|p| (sq_error(intr, &p, check), p))
            .filter(|(e, _)| e.is_finite())
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, p)| p)
        else {
            continue;
        };
        let (count, cost) = score(intr, &pose, corrs, thr2);
        let better = match &best {
            None => true,
            Some((_, bc, bcost)) => count > *bc || (count == *bc && cost < *bcost),
        };
        if better {
            best = Some((pose, count, cost));
            needed = adaptive_iterations(count as f64 / corrs.len() as f64, 4, cfg.confidence, cfg.max_iterations);
        }
    }
    let Some((pose, count, _)) = best else {
        return Err(SolverError::NoConsensus { best: 0, required: cfg.min_inliers });
    };
    if count < cfg.min_inliers || count < 4 {
        return Err(SolverError::NoConsensus { best: count, required: cfg.min_inliers });
    }

    let mut pose = pose;
    let mut inliers = inlier_set(intr, &pose, corrs, thr2);
    for _ in 0..3 {
        let subset: Vec<_> = inliers.iter().map(|&i| corrs[i]).collect();
        pose = refine_pose(intr, &pose, &subset, 20);
        let next = inlier_set(intr, &pose, corrs, thr2);
        if next == inliers {
            break;
        }
        inliers = next;
    }
    if inliers.len() < cfg.min_inliers {
        return Err(SolverError::NoConsensus { best: inliers.len(), required: cfg.min_inliers });
    }
    Ok(PnpResult { pose, inliers, iterations: iter })
}

/// Levenberg-Marquardt on the pose alone, squared reprojection error.
pub fn refine_pose(
    intr: &CameraIntrinsics,
    initial: &PoseSE3,
    corrs: &[Correspondence2D3D],
    max_iterations: usize,
) -> PoseSE3 {
    let cost_of = |pose: &PoseSE3| corrs.iter().map(|c| sq_error(intr, pose, c)).sum::<f64>();
    let mut pose = *initial;
    let mut cost = cost_of(&pose);
    let mut lambda = 1e-4;
    for _ in 0..max_iterations {
        if !(cost > 1e-24 * corrs.len() as f64) {
            break;
        }
        let rot = pose.rotation_matrix();
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for c in corrs {
            let xc = rot * c.world.coords + pose.translation;
            if xc.z <= 0.0 {
                continue;
            }
            let (jp, _) = jacobians_at(intr, &rot, &xc);
            let r = nalgebra::Vector2::new(intr.fx * xc.x / xc.z + intr.cx, intr.fy * xc.y / xc.z + intr.cy) - c.pixel.coords;
            h += jp.transpose() * jp;
            g += jp.transpose() * r;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut hd = h;
            for i in 0..6 {
                hd[(i, i)] += lambda * h[(i, i)].max(1e-6);
            }
            let Some(step) = hd.cholesky().map(|ch| ch.solve(&(-g))) else {
                lambda *= 10.0;
                continue;
            };
            let cand = pose.retract(&step);
            let cand_cost = cost_of(&cand);
            if cand_cost < cost {
                let rel = (cost - cand_cost) / cost;
                pose = cand;
                cost = cand_cost;
                lambda = (lambda / 10.0).max(1e-12);
                improved = rel > 1e-14;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    pose
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{UnitQuaternion, Vector3};
    use rand::Rng;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn scene(rng: &mut ChaCha8Rng, n: usize, outlier_frac: f64) -> (PoseSE3, Vec<Correspondence2D3D>, Vec<usize>) {
        let pose = PoseSE3::new(
            UnitQuaternion::from_euler_angles(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-3.0..3.0)),
            Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
        );
        let inv = pose.inverse();
        let n_out = (n as f64 * outlier_frac).round() as usize;
        let mut corrs = Vec::new();
        let mut clean = Vec::new();
        for i in 0..n {
            let xc = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-1.5..1.5), rng.random_range(4.0..10.0));
            let world = WorldPoint::from(inv.transform_point(&WorldPoint::from(xc)));
            let truth = intr().project_camera_point(&xc).unwrap();
            let pixel = if i < n_out {
                loop {
                    let p = PixelPoint::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
                    if (p - truth).norm() > 10.0 {
                        break p;
                    }
                }
            } else {
                clean.push(i);
                truth
            };
            corrs.push(Correspondence2D3D { feature: i, pixel, point_id: i as u32, world });
        }
        (pose, corrs, clean)
    }

    #[test]
    fn planted_inliers_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (pose, corrs, clean) = scene(&mut rng, 100, 0.3);
        let res = ransac_pnp(&corrs, &intr(), &RansacConfig { rng_seed: 9, ..Default::default() }).unwrap();
        assert_eq!(res.inliers, clean);
        assert!(res.pose.rotation_angle_to(&pose) < 1e-8);
        assert!((res.pose.translation - pose.translation).norm() < 1e-8);
    }

    #[test]
    fn three_correspondences_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, corrs, _) = scene(&mut rng, 3, 0.0);
        assert_eq!(
            ransac_pnp(&corrs, &intr(), &RansacConfig::default()),
            Err(SolverError::InsufficientCorrespondences { needed: 4, got: 3 })
        );
    }

    #[test]
    fn below_consensus_floor_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (_, corrs, clean) = scene(&mut rng, 60, 50.0 / 60.0);
        assert_eq!(clean.len(), 10);
        assert!(matches!(
            ransac_pnp(&corrs, &intr(), &RansacConfig::default()),
            Err(SolverError::NoConsensus { .. })
        ));
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (_, mut corrs, _) = scene(&mut rng, 80, 0.4);
        for c in corrs.iter_mut() {
            c.pixel.x += rng.random_range(-0.5..0.5);
        }
        let cfg = RansacConfig { rng_seed: 77, ..Default::default() };
        let a = ransac_pnp(&corrs, &intr(), &cfg).unwrap();
        let b = ransac_pnp(&corrs, &intr(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adaptive_iteration_count() {
        assert_eq!(adaptive_iterations(1.0, 4, 0.999, 1000), 1);
        assert_eq!(adaptive_iterations(0.0, 4, 0.999, 1000), 1000);
        // 0.5^4 = 1/16 -> ln(0.001)/ln(15/16) = 107.03
        assert_eq!(adaptive_iterations(0.5, 4, 0.999, 1000), 108);
    }
}

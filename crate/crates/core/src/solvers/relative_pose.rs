use nalgebra::{DMatrix, Matrix3, SMatrix, UnitQuaternion, Vector2, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::pnp::adaptive_iterations;
use super::{RansacConfig, SolverError};
use crate::geom::{angle_between, CameraIntrinsics, PixelPoint, PoseSE3};

/// Second camera relative to the first (the first sits at the identity);
/// the translation has unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativePose {
    pub pose: PoseSE3,
    pub inliers: Vec<usize>,
    /// Median triangulation angle of the inliers, degrees.
    pub median_parallax_deg: f64,
}

/// Share of pairs explained by a pure rotation above which the views are
/// treated as having no baseline.
const ROTATION_ONLY_SHARE: f64 = 0.9;

/// Eight-point estimate on Hartley-normalized coordinates, projected onto
/// the essential manifold.
fn eight_point(x1: &[Vector2<f64>], x2: &[Vector2<f64>]) -> Option<Matrix3<f64>> {
    let conditioning = |pts: &[Vector2<f64>]| {
        let n = pts.len() as f64;
        let mean = pts.iter().sum::<Vector2<f64>>() / n;
        let spread = pts.iter().map(|p| (p - mean).norm()).sum::<f64>() / n;
        let s = if spread > 0.0 { std::f64::consts::SQRT_2 / spread } else { 1.0 };
        Matrix3::new(s, 0.0, -s * mean.x, 0.0, s, -s * mean.y, 0.0, 0.0, 1.0)
    };
    let t1 = conditioning(x1);
    let t2 = conditioning(x2);
    let mut a = DMatrix::<f64>::zeros(x1.len().max(9), 9);
    for (i, (p, q)) in x1.iter().zip(x2).enumerate() {
        let p = t1 * Vector3::new(p.x, p.y, 1.0);
        let q = t2 * Vector3::new(q.x, q.y, 1.0);
        for r in 0..3 {
            for c in 0..3 {
                a[(i, 3 * r + c)] = q[r] * p[c];
            }
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t?;
    let (imin, _) = svd.singular_values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1))?;
    let e = vt.row(imin);
    let en = Matrix3::new(e[0], e[1], e[2], e[3], e[4], e[5], e[6], e[7], e[8]);
    let e = t2.transpose() * en * t1;
    let svd = e.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let e = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0)) * vt;
    let n = e.norm();
    if n == 0.0 {
        return None;
    }
    Some(e / n)
}

fn sampson(e: &Matrix3<f64>, p: &Vector2<f64>, q: &Vector2<f64>) -> f64 {
    let x1 = Vector3::new(p.x, p.y, 1.0);
    let x2 = Vector3::new(q.x, q.y, 1.0);
    let ex1 = e * x1;
    let etx2 = e.transpose() * x2;
    let num = x2.dot(&ex1);
    let den = ex1.x * ex1.x + ex1.y * ex1.y + etx2.x * etx2.x + etx2.y * etx2.y;
    if den <= 0.0 {
        return f64::INFINITY;
    }
    num * num / den
}

/// Depths `(d1, d2)` with `d2 b2 ≈ d1 R b1 + t`.
fn two_view_depths(r: &Matrix3<f64>, t: &Vector3<f64>, b1: &Vector3<f64>, b2: &Vector3<f64>) -> Option<(f64, f64)> {
    let rb1 = r * b1;
    let m = SMatrix::<f64, 3, 2>::from_columns(&[rb1, -b2]);
    let mtm = m.transpose() * m;
    let sol = mtm.try_inverse()? * (m.transpose() * (-t));
    Some((sol[0], sol[1]))
}

fn decompose(e: &Matrix3<f64>) -> Vec<(Matrix3<f64>, Vector3<f64>)> {
    let svd = e.svd(true, true);
    let (mut u, mut vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    if u.determinant() < 0.0 {
        u = -u;
    }
    if vt.determinant() < 0.0 {
        vt = -vt;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let t: Vector3<f64> = u.column(2).into();
    let r1 = u * w * vt;
    let r2 = u * w.transpose() * vt;
    vec![(r1, t), (r1, -t), (r2, t), (r2, -t)]
}

/// Best pure rotation (Kabsch on bearing pairs, two-pair samples) and the
/// share of pairs it explains.
fn rotation_only_share(b1: &[Vector3<f64>], b2: &[Vector3<f64>], thr_rad: f64, rng: &mut ChaCha8Rng) -> f64 {
    let n = b1.len();
    let kabsch = |idx: &[usize]| {
        let mut h = Matrix3::zeros();
        for &i in idx {
            h += b2[i] * b1[i].transpose();
        }
        let svd = h.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut d = Matrix3::identity();
        if (u * vt).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        u * d * vt
    };
    let mut best = 0usize;
    for _ in 0..50 {
        let s = sample(rng, n, 2);
        let r = kabsch(&[s.index(0), s.index(1)]);
        let count = (0..n).filter(|&i| angle_between(&(r * b1[i]), &b2[i]) <= thr_rad).count();
        best = best.max(count);
    }
    best as f64 / n as f64
}

/// Normalized eight-point essential matrix inside RANSAC on the Sampson
/// distance; the pose is picked among the four decompositions by a
/// cheirality vote over the inliers.
pub fn estimate_relative_pose(
    matches: &[(PixelPoint, PixelPoint)],
    intr: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<RelativePose, SolverError> {
    if matches.len() < 8 {
        return Err(SolverError::InsufficientCorrespondences { needed: 8, got: matches.len() });
    }
    let x1: Vec<Vector2<f64>> = matches.iter().map(|(a, _)| intr.normalize(a).xy()).collect();
    let x2: Vec<Vector2<f64>> = matches.iter().map(|(_, b)| intr.normalize(b).xy()).collect();
    let f = 0.5 * (intr.fx + intr.fy);
    let thr = cfg.inlier_threshold / f;
    let thr2 = thr * thr;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);

    let b1: Vec<Vector3<f64>> = x1.iter().map(|p| Vector3::new(p.x, p.y, 1.0).normalize()).collect();
    let b2: Vec<Vector3<f64>> = x2.iter().map(|p| Vector3::new(p.x, p.y, 1.0).normalize()).collect();
    if rotation_only_share(&b1, &b2, thr, &mut rng) >= ROTATION_ONLY_SHARE {
        return Err(SolverError::DegenerateConfiguration("no translation between the views"));
    }

    let n = matches.len();
    let inliers_of = |e: &Matrix3<f64>| (0..n).filter(|&i| sampson(e, &x1[i], &x2[i]) <= thr2).collect::<Vec<_>>();
    let mut best: Option<(Matrix3<f64>, usize, f64)> = None;
    let mut needed = cfg.max_iterations;
    let mut iter = 0;
    while iter < needed.min(cfg.max_iterations) {
        iter += 1;
        let idx = sample(&mut rng, n, 8);
        let s1: Vec<_> = idx.iter().map(|i| x1[i]).collect();
        let s2: Vec<_> = idx.iter().map(|i| x2[i]).collect();
        let Some(e) = eight_point(&s1, &s2) else { continue };
        let mut count = 0;
        let mut cost = 0.0;
        for i in 0..n {
            let d = sampson(&e, &x1[i], &x2[i]);
            if d <= thr2 {
                count += 1;
                cost += d;
            } else {
                cost += thr2;
            }
        }
        let better = match &best {
            None => true,
            Some((_, bc, bcost)) => count > *bc || (count == *bc && cost < *bcost),
        };
        if better {
            best = Some((e, count, cost));
            needed = adaptive_iterations(count as f64 / n as f64, 8, cfg.confidence, cfg.max_iterations);
        }
    }
    let Some((mut e, count, _)) = best else {
        return Err(SolverError::NoConsensus { best: 0, required: cfg.min_inliers });
    };
    if count < cfg.min_inliers.max(8) {
        return Err(SolverError::NoConsensus { best: count, required: cfg.min_inliers.max(8) });
    }
    let mut inliers = inliers_of(&e);
    for _ in 0..3 {
        let s1: Vec<_> = inliers.iter().map(|&i| x1[i]).collect();
        let s2: Vec<_> = inliers.iter().map(|&i| x2[i]).collect();
        let Some(refit) = eight_point(&s1, &s2) else { break };
        let next = inliers_of(&refit);
        if next.len() < inliers.len() {
            break;
        }
        e = refit;
        let done = next == inliers;
        inliers = next;
        if done {
            break;
        }
    }

    let mut best_pose: Option<(usize, Matrix3<f64>, Vector3<f64>)> = None;
    for (r, t) in decompose(&e) {
        let votes = inliers
            .iter()
            .filter(|&&i| matches!(two_view_depths(&r, &t, &b1[i], &b2[i]), Some((d1, d2)) if d1 > 0.0 && d2 > 0.0))
            .count();
        if best_pose.as_ref().is_none_or(|(v, _, _)| votes > *v) {
            best_pose = Some((votes, r, t));
        }
    }
    let (votes, r, t) = best_pose.unwrap();
    if votes * 2 < inliers.len() {
        return Err(SolverError::CheiralityFailure);
    }
    inliers.retain(|&i| matches!(two_view_depths(&r, &t, &b1[i], &b2[i]), Some((d1, d2)) if d1 > 0.0 && d2 > 0.0));

    let mut angles: Vec<f64> = inliers
        .iter()
        .map(|&i| {
            let (d1, _) = two_view_depths(&r, &t, &b1[i], &b2[i]).unwrap();
            // ray from camera 1 center (origin) and from camera 2 center (-Rᵀt)
            let x = b1[i] * d1;
            let c2 = -(r.transpose() * t);
            angle_between(&x, &(x - c2)).to_degrees()
        })
        .collect();
    angles.sort_by(|a, b| a.total_cmp(b));
    let median_parallax_deg = if angles.is_empty() { 0.0 } else { angles[angles.len() / 2] };
    let rotation = UnitQuaternion::from_matrix(&r);
    Ok(RelativePose { pose: PoseSE3::new(rotation, t.normalize()), inliers, median_parallax_deg })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{project, WorldPoint};
    use rand::Rng;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn two_view(rng: &mut ChaCha8Rng, rel: &PoseSE3, n: usize) -> Vec<(PixelPoint, PixelPoint)> {
        let mut out = Vec::new();
        while out.len() < n {
            let p = WorldPoint::new(rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0), rng.random_range(4.0..12.0));
            let (Some(a), Some(b)) = (project(&intr(), &PoseSE3::identity(), &p), project(&intr(), rel, &p)) else { continue };
            if intr().contains(&a) && intr().contains(&b) {
                out.push((a, b));
            }
        }
        out
    }

    #[test]
    fn noise_free_relative_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let rel = PoseSE3::new(UnitQuaternion::from_euler_angles(0.05, -0.1, 0.02), Vector3::new(1.0, 0.2, -0.1));
        let m = two_view(&mut rng, &rel, 60);
        let res = estimate_relative_pose(&m, &intr(), &RansacConfig { min_inliers: 8, ..Default::default() }).unwrap();
        assert!(res.pose.rotation_angle_to(&rel) < 1e-6);
        assert!(angle_between(&res.pose.translation, &rel.translation) < 1e-6);
        assert!((res.pose.translation.norm() - 1.0).abs() < 1e-12);
        assert_eq!(res.inliers.len(), 60);
    }

    #[test]
    fn zero_baseline_is_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let rel = PoseSE3::new(UnitQuaternion::from_euler_angles(0.05, -0.1, 0.02), Vector3::zeros());
        let m = two_view(&mut rng, &rel, 60);
        assert!(matches!(
            estimate_relative_pose(&m, &intr(), &RansacConfig::default()),
            Err(SolverError::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn seven_matches_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let rel = PoseSE3::new(UnitQuaternion::identity(), Vector3::new(1.0, 0.0, 0.0));
        let m = two_view(&mut rng, &rel, 7);
        assert_eq!(
            estimate_relative_pose(&m, &intr(), &RansacConfig::default()),
            Err(SolverError::InsufficientCorrespondences { needed: 8, got: 7 })
        );
    }

    #[test]
    fn outliers_are_excluded() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let rel = PoseSE3::new(UnitQuaternion::from_euler_angles(0.0, 0.2, 0.0), Vector3::new(-1.0, 0.0, 0.3));
        let mut m = two_view(&mut rng, &rel, 100);
        for pair in m.iter_mut().take(20) {
            pair.1 = PixelPoint::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
        }
        let cfg = RansacConfig { rng_seed: 5, ..Default::default() };
        let a = estimate_relative_pose(&m, &intr(), &cfg).unwrap();
        let b = estimate_relative_pose(&m, &intr(), &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.pose.rotation_angle_to(&rel) < 1e-6);
        assert!(a.inliers.iter().filter(|&&i| i >= 20).count() == 80);
    }
}

use nalgebra::{DMatrix, Vector3};

use super::SolverError;
use crate::geom::{angle_between, CameraIntrinsics, PixelPoint, PoseSE3, WorldPoint};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangulationConfig {
    pub min_angle_deg: f64,
    pub max_reprojection: f64,
}

impl Default for TriangulationConfig {
    fn default() -> Self {
        Self { min_angle_deg: 1.5, max_reprojection: 4.0 }
    }
}

/// Largest pairwise angle, degrees, between the rays from the camera
/// centers to `point`.
pub fn triangulation_angle(poses: &[PoseSE3], point: &WorldPoint) -> f64 {
    let rays: Vec<Vector3<f64>> = poses.iter().map(|p| point - p.center()).collect();
    let mut best = 0.0f64;
    for i in 0..rays.len() {
        for j in i + 1..rays.len() {
            best = best.max(angle_between(&rays[i], &rays[j]));
        }
    }
    best.to_degrees()
}

/// Linear triangulation in normalized image coordinates, expressed about the
/// mean camera center for conditioning. A second solve reweights each view by
/// its inverse depth so the algebraic error approximates the image error.
/// No acceptance checks.
pub fn triangulate_dlt(
    intr: &CameraIntrinsics,
    poses: &[PoseSE3],
    pixels: &[PixelPoint],
) -> Result<WorldPoint, SolverError> {
    if poses.len() < 2 || poses.len() != pixels.len() {
        return Err(SolverError::InsufficientCorrespondences { needed: 2, got: poses.len().min(pixels.len()) });
    }
    let origin = poses.iter().map(|p| p.center().coords).sum::<Vector3<f64>>() / poses.len() as f64;
    let scale = poses.iter().map(|p| (p.center().coords - origin).norm()).fold(0.0, f64::max).max(1e-12);
    let mut weights = vec![1.0; poses.len()];
    let mut point = None;
    for _ in 0..2 {
        let x = solve_weighted(intr, poses, pixels, &origin, scale, &weights)?;
        let depths: Vec<f64> = poses.iter().map(|p| p.transform_point(&x).z).collect();
        point = Some(x);
        if depths.iter().any(|z| *z <= 0.0) {
            break;
        }
        weights = depths.iter().map(|z| scale / z).collect();
    }
    Ok(point.expect("at least one solve"))
}

fn solve_weighted(
    intr: &CameraIntrinsics,
    poses: &[PoseSE3],
    pixels: &[PixelPoint],
    origin: &Vector3<f64>,
    scale: f64,
    weights: &[f64],
) -> Result<WorldPoint, SolverError> {
    // unknown is [ (X - origin) / scale ; 1 ] up to scale
    let mut a = DMatrix::<f64>::zeros(2 * poses.len(), 4);
    for (k, (pose, px)) in poses.iter().zip(pixels).enumerate() {
        let r = pose.rotation_matrix();
        let t = (pose.translation + r * origin) / scale;
        let x = intr.normalize(px);
        for (axis, coord) in [(0, x.x), (1, x.y)] {
            let row = 2 * k + axis;
            for c in 0..3 {
                a[(row, c)] = weights[k] * (coord * r[(2, c)] - r[(axis, c)]);
            }
            a[(row, 3)] = weights[k] * (coord * t.z - t[axis]);
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.ok_or(SolverError::NumericalFailure("svd"))?;
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(SolverError::NumericalFailure("svd"))?;
    let h = vt.row(imin);
    if h[3].abs() < 1e-14 {
        return Err(SolverError::InsufficientParallax);
    }
    Ok(WorldPoint::from(origin + Vector3::new(h[0], h[1], h[2]) * (scale / h[3])))
}

/// DLT triangulation followed by the acceptance tests: distinct centers,
/// positive depth in every view, triangulation angle, reprojection error.
pub fn triangulate(
    intr: &CameraIntrinsics,
    poses: &[PoseSE3],
    pixels: &[PixelPoint],
    cfg: &TriangulationConfig,
) -> Result<WorldPoint, SolverError> {
    if poses.len() < 2 || poses.len() != pixels.len() {
        return Err(SolverError::InsufficientCorrespondences { needed: 2, got: poses.len().min(pixels.len()) });
    }
    let centers: Vec<WorldPoint> = poses.iter().map(|p| p.center()).collect();
    let spread = centers.iter().flat_map(|a| centers.iter().map(move |b| (a - b).norm())).fold(0.0, f64::max);
    let scale = centers.iter().map(|c| c.coords.norm()).fold(1.0, f64::max);
    if spread <= 1e-12 * scale {
        return Err(SolverError::InsufficientParallax);
    }
    let point = triangulate_dlt(intr, poses, pixels)?;
    if poses.iter().any(|p| p.transform_point(&point).z <= 0.0) {
        return Err(SolverError::CheiralityFailure);
    }
    if triangulation_angle(poses, &point) < cfg.min_angle_deg {
        return Err(SolverError::InsufficientParallax);
    }
    let max2 = cfg.max_reprojection * cfg.max_reprojection;
    for (pose, px) in poses.iter().zip(pixels) {
        match intr.project_camera_point(&pose.transform_point(&point)) {
            Some(proj) if (proj - px).norm_squared() <= max2 => {}
            _ => return Err(SolverError::ReprojectionTooLarge),
        }
    }
    Ok(point)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::project;
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn orbit(deg: f64, target: &WorldPoint, dist: f64) -> PoseSE3 {
        // camera on a circle around `target` in the xz plane, looking at it
        let a = deg.to_radians();
        let center = WorldPoint::new(target.x + dist * a.sin(), target.y, target.z - dist * a.cos());
        let rot = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), a);
        PoseSE3::from_center(rot, &center)
    }

    #[test]
    fn two_views_ten_degrees_apart() {
        let target = WorldPoint::new(0.3, -0.2, 5.0);
        let poses = [orbit(0.0, &target, 5.0), orbit(10.0, &target, 5.0)];
        assert!(poses[1].transform_point(&target).x.abs() < 1e-12);
        let x = WorldPoint::new(0.5, 0.1, 5.4);
        let px: Vec<_> = poses.iter().map(|p| project(&intr(), p, &x).unwrap()).collect();
        let got = triangulate(&intr(), &poses, &px, &TriangulationConfig::default()).unwrap();
        assert!((got - x).norm() < 1e-8);
    }

    #[test]
    fn identical_poses_lack_parallax() {
        let p = PoseSE3::identity();
        let px = PixelPoint::new(300.0, 200.0);
        assert_eq!(
            triangulate(&intr(), &[p, p], &[px, px], &TriangulationConfig::default()),
            Err(SolverError::InsufficientParallax)
        );
    }

    #[test]
    fn behind_second_camera_is_rejected() {
        let a = PoseSE3::identity();
        // second camera at z = 10 looking along +z: the point at z = 5 is behind it
        let b = PoseSE3::from_center(UnitQuaternion::identity(), &WorldPoint::new(1.0, 0.0, 10.0));
        let x = WorldPoint::new(0.2, 0.1, 5.0);
        let xc = b.transform_point(&x);
        assert!(xc.z < 0.0);
        let pb = PixelPoint::new(500.0 * xc.x / xc.z + 320.0, 500.0 * xc.y / xc.z + 240.0);
        let pa = project(&intr(), &a, &x).unwrap();
        assert_eq!(
            triangulate(&intr(), &[a, b], &[pa, pb], &TriangulationConfig::default()),
            Err(SolverError::CheiralityFailure)
        );
    }

    #[test]
    fn large_reprojection_is_rejected() {
        let target = WorldPoint::new(0.0, 0.0, 5.0);
        let poses = [orbit(-8.0, &target, 5.0), orbit(0.0, &target, 5.0), orbit(8.0, &target, 5.0)];
        let mut px: Vec<_> = poses.iter().map(|p| project(&intr(), p, &target).unwrap()).collect();
        px[1].y += 30.0;
        assert_eq!(
            triangulate(&intr(), &poses, &px, &TriangulationConfig::default()),
            Err(SolverError::ReprojectionTooLarge)
        );
    }

    proptest! {
        #[test]
        fn view_order_does_not_matter(a in -20.0f64..-3.0, b in 3.0f64..20.0, c in -2.0f64..2.0,
                                      x in -0.5f64..0.5, y in -0.5f64..0.5, z in 4.5f64..5.5, noise in -1.0f64..1.0) {
            let target = WorldPoint::new(0.0, 0.0, 5.0);
            let poses = [orbit(a, &target, 5.0), orbit(b, &target, 5.0), orbit(c, &target, 5.0)];
            let p = WorldPoint::new(x, y, z);
            let mut px: Vec<_> = poses.iter().map(|q| project(&intr(), q, &p).unwrap()).collect();
            px[0].x += noise;
            let fwd = triangulate_dlt(&intr(), &poses, &px).unwrap();
            let rp = [poses[2], poses[0], poses[1]];
            let rpx = [px[2], px[0], px[1]];
            let rev = triangulate_dlt(&intr(), &rp, &rpx).unwrap();
            prop_assert!((fwd - rev).norm() < 1e-9);
        }
    }
}

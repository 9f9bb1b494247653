//! Grunert-style P3P: distances along the three bearing rays from a quartic,
//! then absolute orientation from the three camera/world point pairs.

use nalgebra::{Matrix3, Matrix4, UnitQuaternion, Vector3};

use super::{Correspondence2D3D, SolverError};
use crate::geom::{CameraIntrinsics, PoseSE3, WorldPoint};

/// All poses consistent with three 2D-3D correspondences that put every
/// point in front of the camera.
pub fn solve_p3p(corrs: &[Correspondence2D3D], intr: &CameraIntrinsics) -> Result<Vec<PoseSE3>, SolverError> {
    if corrs.len() != 3 {
        return Err(SolverError::InsufficientCorrespondences { needed: 3, got: corrs.len() });
    }
    let bearings = [
        intr.bearing(&corrs[0].pixel),
        intr.bearing(&corrs[1].pixel),
        intr.bearing(&corrs[2].pixel),
    ];
    let world = [corrs[0].world, corrs[1].world, corrs[2].world];
    solve_p3p_bearings(&bearings, &world)
}

pub fn solve_p3p_bearings(
    bearings: &[Vector3<f64>; 3],
    world: &[WorldPoint; 3],
) -> Result<Vec<PoseSE3>, SolverError> {
    let [p1, p2, p3] = world;
    let d12 = p2 - p1;
    let d13 = p3 - p1;
    let scale = d12.norm_squared().max(d13.norm_squared());
    if scale == 0.0 || d12.cross(&d13).norm_squared() <= 1e-20 * scale * scale {
        return Err(SolverError::DegenerateConfiguration("collinear world points"));
    }
    let j = bearings;
    let (cos_a, cos_b, cos_g) = (j[1].dot(&j[2]), j[0].dot(&j[2]), j[0].dot(&j[1]));
    if cos_a > 1.0 - 1e-14 || cos_b > 1.0 - 1e-14 || cos_g > 1.0 - 1e-14 {
        return Err(SolverError::DegenerateConfiguration("coincident bearings"));
    }
    let a2 = (p2 - p3).norm_squared();
    let b2 = (p1 - p3).norm_squared();
    let c2 = (p1 - p2).norm_squared();

    let amc = (a2 - c2) / b2;
    let apc = (a2 + c2) / b2;
    let coeffs = [
        (1.0 + amc).powi(2) - 4.0 * a2 / b2 * cos_g * cos_g,
        4.0 * (-amc * (1.0 + amc) * cos_b + 2.0 * a2 / b2 * cos_g * cos_g * cos_b
            - (1.0 - apc) * cos_a * cos_g),
        2.0 * (amc * amc - 1.0 + 2.0 * amc * amc * cos_b * cos_b + 2.0 * (b2 - c2) / b2 * cos_a * cos_a
            - 4.0 * apc * cos_a * cos_b * cos_g
            + 2.0 * (b2 - a2) / b2 * cos_g * cos_g),
        4.0 * (amc * (1.0 - amc) * cos_b - (1.0 - apc) * cos_a * cos_g + 2.0 * c2 / b2 * cos_a * cos_a * cos_b),
        (amc - 1.0).powi(2) - 4.0 * c2 / b2 * cos_a * cos_a,
    ];

    let mut poses: Vec<PoseSE3> = Vec::new();
    for v in real_quartic_roots(&coeffs) {
        if v <= 0.0 {
            continue;
        }
        let s1_sq = b2 / (1.0 + v * v - 2.0 * v * cos_b);
        if !(s1_sq > 0.0) {
            continue;
        }
        let s1 = s1_sq.sqrt();
        for u in u_candidates(v, s1_sq, a2, c2, cos_a, cos_g) {
            if u <= 0.0 {
                continue;
            }
            let Some(depths) = polish_depths([s1, u * s1, v * s1], j, a2, b2, c2, cos_a, cos_b, cos_g) else {
                continue;
            };
            if depths.iter().any(|d| *d <= 0.0) {
                continue;
            }
            let cam = [j[0] * depths[0], j[1] * depths[1], j[2] * depths[2]];
            let Some(pose) = absolute_orientation(world, &cam) else { continue };
            if poses.iter().any(|p| {
                p.rotation.angle_to(&pose.rotation) < 1e-9 && (p.translation - pose.translation).norm() < 1e-9
            }) {
                continue;
            }
            poses.push(pose);
        }
    }
    Ok(poses)
}

/// `u = s2 / s1` given `v = s3 / s1`. The linear formula is used when
/// well conditioned; otherwise both roots of the `c` constraint are tried.
fn u_candidates(v: f64, s1_sq: f64, a2: f64, c2: f64, cos_a: f64, cos_g: f64) -> Vec<f64> {
    let den = 2.0 * (cos_g - v * cos_a);
    let num = (a2 - c2) / s1_sq - v * v + 1.0;
    if den.abs() > 1e-8 {
        return vec![num / den];
    }
    // u^2 - 2u cos_g + 1 - c2/s1^2 = 0
    let disc = cos_g * cos_g - 1.0 + c2 / s1_sq;
    if disc < 0.0 {
        return vec![cos_g];
    }
    let r = disc.sqrt();
    vec![cos_g + r, cos_g - r]
}

/// Newton iterations on the three law-of-cosines constraints.
#[allow(clippy::too_many_arguments)]
fn polish_depths(
    mut s: [f64; 3],
    _j: &[Vector3<f64>; 3],
    a2: f64,
    b2: f64,
    c2: f64,
    cos_a: f64,
    cos_b: f64,
    cos_g: f64,
) -> Option<[f64; 3]> {
    let residual = |s: &[f64; 3]| {
        Vector3::new(
            s[1] * s[1] + s[2] * s[2] - 2.0 * s[1] * s[2] * cos_a - a2,
            s[0] * s[0] + s[2] * s[2] - 2.0 * s[0] * s[2] * cos_b - b2,
            s[0] * s[0] + s[1] * s[1] - 2.0 * s[0] * s[1] * cos_g - c2,
        )
    };
    let scale = a2.max(b2).max(c2);
    let mut r = residual(&s);
    for _ in 0..8 {
        if r.norm() <= 1e-15 * scale {
            break;
        }
        let jac = Matrix3::new(
            0.0,
            2.0 * s[1] - 2.0 * s[2] * cos_a,
            2.0 * s[2] - 2.0 * s[1] * cos_a,
            2.0 * s[0] - 2.0 * s[2] * cos_b,
            0.0,
            2.0 * s[2] - 2.0 * s[0] * cos_b,
            2.0 * s[0] - 2.0 * s[1] * cos_g,
            2.0 * s[1] - 2.0 * s[0] * cos_g,
            0.0,
        );
        let Some(step) = jac.lu().solve(&r) else { break };
        let next = [s[0] - step[0], s[1] - step[1], s[2] - step[2]];
        let rn = residual(&next);
        if rn.norm() >= r.norm() {
            break;
        }
        s = next;
        r = rn;
    }
    if r.norm() > 1e-6 * scale {
        return None;
    }
    Some(s)
}

/// Rigid transform mapping three world points onto their camera-frame
/// positions (Kabsch on the centered triangles).
fn absolute_orientation(world: &[WorldPoint; 3], cam: &[Vector3<f64>; 3]) -> Option<PoseSE3> {
    let wc = (world[0].coords + world[1].coords + world[2].coords) / 3.0;
    let cc = (cam[0] + cam[1] + cam[2]) / 3.0;
    let mut h = Matrix3::zeros();
    for i in 0..3 {
        h += (cam[i] - cc) * (world[i].coords - wc).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * vt;
    let rotation = UnitQuaternion::from_matrix(&r);
    let translation = cc - rotation * wc;
    Some(PoseSE3::new(rotation, translation))
}

/// Real roots of `c[0] + c[1] x + ... + c[4] x^4`, polished by Newton steps.
pub(crate) fn real_quartic_roots(c: &[f64; 5]) -> Vec<f64> {
    let lead = c[4];
    let maxc = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if maxc == 0.0 {
        return Vec::new();
    }
    if lead.abs() < 1e-14 * maxc {
        return real_cubic_roots(c[0], c[1], c[2], c[3]);
    }
    let mut comp = Matrix4::zeros();
    for i in 1..4 {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..4 {
        comp[(i, 3)] = -c[i] / lead;
    }
    let eig = comp.complex_eigenvalues();
    let mut roots = Vec::new();
    for z in eig.iter() {
        if z.im.abs() > 1e-4 * (1.0 + z.re.abs()) {
            continue;
        }
        roots.push(newton_polish(c, z.re));
    }
    roots
}

fn newton_polish(c: &[f64; 5], mut x: f64) -> f64 {
    for _ in 0..10 {
        let f = (((c[4] * x + c[3]) * x + c[2]) * x + c[1]) * x + c[0];
        let df = ((4.0 * c[4] * x + 3.0 * c[3]) * x + 2.0 * c[2]) * x + c[1];
        if df == 0.0 {
            break;
        }
        let step = f / df;
        x -= step;
        if step.abs() <= 1e-16 * (1.0 + x.abs()) {
            break;
        }
    }
    x
}

fn real_cubic_roots(d: f64, cc: f64, b: f64, a: f64) -> Vec<f64> {
    // a x^3 + b x^2 + cc x + d
    let maxc = a.abs().max(b.abs()).max(cc.abs()).max(d.abs());
    if a.abs() < 1e-14 * maxc {
        if b.abs() < 1e-14 * maxc {
            return if cc != 0.0 { vec![-d / cc] } else { Vec::new() };
        }
        let disc = cc * cc - 4.0 * b * d;
        if disc < 0.0 {
            return Vec::new();
        }
        let r = disc.sqrt();
        return vec![(-cc + r) / (2.0 * b), (-cc - r) / (2.0 * b)];
    }
    let m = nalgebra::Matrix3::new(0.0, 0.0, -d / a, 1.0, 0.0, -cc / a, 0.0, 1.0, -b / a);
    let coeffs = [d, cc, b, a, 0.0];
    m.complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-4 * (1.0 + z.re.abs()))
        .map(|z| newton_polish(&coeffs, z.re))
        .collect()
}

//! Levenberg-Marquardt bundle adjustment over the free part of a model.
//!
//! Landmarks are eliminated first (Schur complement); the reduced camera
//! system is stored as a skyline matrix after a reverse Cuthill-McKee
//! ordering of the camera graph and factored with an envelope Cholesky.
//! Sequential captures give a narrow band, so cost grows roughly linearly
//! in the number of cameras.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::{Matrix3, Matrix6, Matrix6x3, Vector2, Vector3, Vector6};
use rayon::prelude::*;

use super::SolverError;
use crate::geom::{jacobians_at, CameraIntrinsics, PixelPoint, PoseSE3, WorldPoint};
use crate::model::{FrameId, LandmarkId, SfMModel};

/// Parameters held constant during bundle adjustment. A fixed translation
/// axis pins one component of the translation increment of that frame.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FreezeMask {
    pub frozen_frames: BTreeSet<FrameId>,
    pub frozen_landmarks: BTreeSet<LandmarkId>,
    pub fixed_translation_axes: Vec<(FrameId, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BundleConfig {
    pub max_lm_iterations: usize,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub convergence_tol: f64,
    pub huber_delta: f64,
}

impl Default for BundleConfig {
    fn default() -> Self {
        Self {
            max_lm_iterations: 50,
            initial_damping: 1e-4,
            damping_up: 10.0,
            damping_down: 10.0,
            convergence_tol: 1e-10,
            huber_delta: 2.0,
        }
    }
}

impl BundleConfig {
    pub fn validate(&self) -> Result<(), String> {
        let ok = self.max_lm_iterations > 0
            && self.initial_damping > 0.0
            && self.damping_up > 1.0
            && self.damping_down > 1.0
            && self.convergence_tol > 0.0
            && self.huber_delta > 0.0;
        if ok {
            Ok(())
        } else {
            Err("bundle parameters must be positive (damping factors above 1)".into())
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BundleReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Robust cost after each accepted step.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub num_residuals: usize,
    pub free_frames: usize,
    pub free_landmarks: usize,
    pub no_free_parameters: bool,
    pub converged: bool,
}

impl BundleReport {
    /// Mean reprojection error of the included observations at the end, pixels.
    pub fn final_rms(&self) -> f64 {
        if self.num_residuals == 0 {
            0.0
        } else {
            (2.0 * self.final_cost / self.num_residuals as f64).sqrt()
        }
    }
}

struct Obs {
    cam: usize,
    pixel: PixelPoint,
}

struct Problem {
    intr: Vec<CameraIntrinsics>,
    poses: Vec<PoseSE3>,
    frame_ids: Vec<FrameId>,
    /// Position in the solve order, `None` for frozen cameras.
    cam_slot: Vec<Option<usize>>,
    n_free_cams: usize,
    points: Vec<WorldPoint>,
    point_ids: Vec<LandmarkId>,
    point_free: Vec<bool>,
    obs: Vec<Vec<Obs>>,
    fixed_dofs: BTreeSet<usize>,
    /// First coupled camera slot for each camera slot (skyline profile).
    first_block: Vec<usize>,
}

#[inline]
fn huber(sq: f64, delta: f64) -> (f64, f64) {
    // (cost, IRLS weight)
    if sq <= delta * delta {
        (0.5 * sq, 1.0)
    } else {
        let n = sq.sqrt();
        (delta * (n - 0.5 * delta), delta / n)
    }
}

fn residual(intr: &CameraIntrinsics, pose: &PoseSE3, p: &WorldPoint, px: &PixelPoint) -> Option<Vector2<f64>> {
    let xc = pose.rotation * p.coords + pose.translation;
    if xc.z <= 0.0 {
        return None;
    }
    Some(Vector2::new(intr.fx * xc.x / xc.z + intr.cx - px.x, intr.fy * xc.y / xc.z + intr.cy - px.y))
}

impl Problem {
    fn cost(&self, poses: &[PoseSE3], points: &[WorldPoint], delta: f64) -> f64 {
        let per_point: Vec<f64> = (0..self.points.len())
            .into_par_iter()
            .map(|p| {
                let mut c = 0.0;
                for o in &self.obs[p] {
                    match residual(&self.intr[o.cam], &poses[o.cam], &points[p], &o.pixel) {
                        Some(r) => c += huber(r.norm_squared(), delta).0,
                        None => return f64::INFINITY,
                    }
                }
                c
            })
            .collect();
        per_point.iter().sum()
    }
}

/// Per-landmark linearization: its own 3×3 block and gradient, plus the
/// camera blocks it touches.
struct PointBlock {
    v: Matrix3<f64>,
    g: Vector3<f64>,
    w: Vec<(usize, Matrix6x3<f64>)>,
    u: Vec<(usize, Matrix6<f64>, Vector6<f64>)>,
}

fn linearize(prob: &Problem, delta: f64) -> Vec<PointBlock> {
    (0..prob.points.len())
        .into_par_iter()
        .map(|p| {
            let mut blk = PointBlock { v: Matrix3::zeros(), g: Vector3::zeros(), w: Vec::new(), u: Vec::new() };
            let x = prob.points[p];
            for o in &prob.obs[p] {
                let pose = &prob.poses[o.cam];
                let intr = &prob.intr[o.cam];
                let rot = pose.rotation_matrix();
                let xc = rot * x.coords + pose.translation;
                if xc.z <= 0.0 {
                    continue;
                }
                let r = Vector2::new(intr.fx * xc.x / xc.z + intr.cx - o.pixel.x, intr.fy * xc.y / xc.z + intr.cy - o.pixel.y);
                let (_, wt) = huber(r.norm_squared(), delta);
                let (jc, jp) = jacobians_at(intr, &rot, &xc);
                if prob.point_free[p] {
                    blk.v += wt * jp.transpose() * jp;
                    blk.g += wt * jp.transpose() * r;
                }
                if let Some(slot) = prob.cam_slot[o.cam] {
                    blk.u.push((slot, wt * jc.transpose() * jc, wt * jc.transpose() * r));
                    if prob.point_free[p] {
                        blk.w.push((slot, wt * jc.transpose() * jp));
                    }
                }
            }
            blk
        })
        .collect()
}

/// Lower-triangular skyline storage: row `i` holds columns `first[i]..=i`.
struct Skyline {
    first: Vec<usize>,
    rows: Vec<Vec<f64>>,
}

impl Skyline {
    fn new(first: Vec<usize>) -> Self {
        let rows = first.iter().enumerate().map(|(i, &f)| vec![0.0; i - f + 1]).collect();
        Self { first, rows }
    }

    #[inline]
    fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j <= i && j >= self.first[i]);
        let f = self.first[i];
        self.rows[i][j - f] += v;
    }

    /// In-place envelope Cholesky; `false` if not positive definite.
    fn factor(&mut self) -> bool {
        let n = self.rows.len();
        for i in 0..n {
            let fi = self.first[i];
            for j in fi..=i {
                let fj = self.first[j];
                let k0 = fi.max(fj);
                let mut s = self.rows[i][j - fi];
                for k in k0..j {
                    s -= self.rows[i][k - fi] * self.rows[j][k - fj];
                }
                if j == i {
                    if !(s > 0.0) || !s.is_finite() {
                        return false;
                    }
                    self.rows[i][i - fi] = s.sqrt();
                } else {
                    self.rows[i][j - fi] = s / self.rows[j][j - fj];
                }
            }
        }
        true
    }

    fn solve(&self, b: &mut [f64]) {
        let n = b.len();
        for i in 0..n {
            let fi = self.first[i];
            let mut s = b[i];
            for k in fi..i {
                s -= self.rows[i][k - fi] * b[k];
            }
            b[i] = s / self.rows[i][i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            b[i] /= self.rows[i][i - fi];
            let bi = b[i];
            for k in fi..i {
                b[k] -= self.rows[i][k - fi] * bi;
            }
        }
    }
}

/// Reverse Cuthill-McKee order of the free cameras; deterministic
/// (ties broken by frame id).
fn rcm_order(n: usize, adj: &[BTreeSet<usize>], ids: &[FrameId]) -> Vec<usize> {
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut starts: Vec<usize> = (0..n).collect();
    starts.sort_by_key(|&i| (adj[i].len(), ids[i]));
    for s in starts {
        if visited[s] {
            continue;
        }
        visited[s] = true;
        let mut q = VecDeque::from([s]);
        while let Some(v) = q.pop_front() {
            order.push(v);
            let mut nb: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
            nb.sort_by_key(|&u| (adj[u].len(), ids[u]));
            for u in nb {
                visited[u] = true;
                q.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

fn build_problem(model: &SfMModel, mask: &FreezeMask) -> Problem {
    let mut cam_index: BTreeMap<FrameId, usize> = BTreeMap::new();
    let mut prob = Problem {
        intr: Vec::new(),
        poses: Vec::new(),
        frame_ids: Vec::new(),
        cam_slot: Vec::new(),
        n_free_cams: 0,
        points: Vec::new(),
        point_ids: Vec::new(),
        point_free: Vec::new(),
        obs: Vec::new(),
        fixed_dofs: BTreeSet::new(),
        first_block: Vec::new(),
    };
    let mut cam_free: Vec<bool> = Vec::new();
    for (lid, lm) in model.landmarks() {
        let lm_free = !mask.frozen_landmarks.contains(lid);
        let mut obs = Vec::new();
        let mut touches_free = false;
        for e in &lm.track {
            let Some(frame) = model.frames.get(&e.frame) else { continue };
            let Some(pose) = frame.pose else { continue };
            if !frame.status.requires_pose() {
                continue;
            }
            // observations already behind the camera are left out
            if pose.transform_point(&lm.position).z <= 0.0 {
                continue;
            }
            let cam = *cam_index.entry(e.frame).or_insert_with(|| {
                prob.intr.push(frame.intrinsics);
                prob.poses.push(pose);
                prob.frame_ids.push(e.frame);
                cam_free.push(!mask.frozen_frames.contains(&e.frame));
                prob.poses.len() - 1
            });
            touches_free |= cam_free[cam];
            obs.push(Obs { cam, pixel: frame.features.pixel(e.feature as usize) });
        }
        if obs.is_empty() || !(lm_free || touches_free) {
            continue;
        }
        prob.points.push(lm.position);
        prob.point_ids.push(*lid);
        prob.point_free.push(lm_free);
        prob.obs.push(obs);
    }

    // camera graph over free cameras, coupled through free landmarks
    let free_cams: Vec<usize> = (0..prob.poses.len()).filter(|&c| cam_free[c]).collect();
    let mut local = vec![usize::MAX; prob.poses.len()];
    for (k, &c) in free_cams.iter().enumerate() {
        local[c] = k;
    }
    let mut adj = vec![BTreeSet::new(); free_cams.len()];
    for (p, obs) in prob.obs.iter().enumerate() {
        if !prob.point_free[p] {
            continue;
        }
        let cams: Vec<usize> = obs.iter().filter(|o| cam_free[o.cam]).map(|o| local[o.cam]).collect();
        for &a in &cams {
            for &b in &cams {
                if a != b {
                    adj[a].insert(b);
                }
            }
        }
    }
    let ids: Vec<FrameId> = free_cams.iter().map(|&c| prob.frame_ids[c]).collect();
    let order = rcm_order(free_cams.len(), &adj, &ids);
    let mut slot_of_local = vec![0; free_cams.len()];
    for (slot, &l) in order.iter().enumerate() {
        slot_of_local[l] = slot;
    }
    prob.cam_slot = (0..prob.poses.len()).map(|c| cam_free[c].then(|| slot_of_local[local[c]])).collect();
    prob.n_free_cams = free_cams.len();
    prob.first_block = (0..free_cams.len()).collect();
    for l in 0..free_cams.len() {
        let s = slot_of_local[l];
        for &m in &adj[l] {
            let t = slot_of_local[m];
            if t < s {
                prob.first_block[s] = prob.first_block[s].min(t);
            }
        }
    }
    for &(fid, axis) in &mask.fixed_translation_axes {
        if axis > 2 {
            continue;
        }
        if let Some(&c) = cam_index.get(&fid) {
            if let Some(slot) = prob.cam_slot[c] {
                prob.fixed_dofs.insert(6 * slot + 3 + axis);
            }
        }
    }
    prob
}

struct Step {
    cams: Vec<Vector6<f64>>,
    points: Vec<Vector3<f64>>,
}

fn damp3(m: &Matrix3<f64>, lambda: f64) -> Matrix3<f64> {
    let mut d = *m;
    for i in 0..3 {
        d[(i, i)] += lambda * m[(i, i)].max(1e-6);
    }
    d
}

fn solve_step(prob: &Problem, blocks: &[PointBlock], lambda: f64) -> Option<Step> {
    let nc = prob.n_free_cams;
    let n = 6 * nc;
    let first: Vec<usize> = (0..n).map(|i| 6 * prob.first_block[i / 6]).collect();
    let mut s = Skyline::new(first);
    let mut rhs = vec![0.0; n];

    // camera diagonal blocks
    let mut u_diag = vec![Matrix6::<f64>::zeros(); nc];
    let mut g_c = vec![Vector6::<f64>::zeros(); nc];
    for b in blocks {
        for (slot, u, g) in &b.u {
            u_diag[*slot] += u;
            g_c[*slot] += g;
        }
    }
    for c in 0..nc {
        let mut u = u_diag[c];
        for i in 0..6 {
            u[(i, i)] += lambda * u_diag[c][(i, i)].max(1e-6);
        }
        for i in 0..6 {
            rhs[6 * c + i] -= g_c[c][i];
            for j in 0..=i {
                s.add(6 * c + i, 6 * c + j, u[(i, j)]);
            }
        }
    }

    // Schur complement of the free landmarks
    let mut vinv = Vec::with_capacity(blocks.len());
    for (p, b) in blocks.iter().enumerate() {
        if !prob.point_free[p] || b.w.is_empty() {
            vinv.push(damp3(&b.v, lambda).try_inverse());
            continue;
        }
        let vi = damp3(&b.v, lambda).try_inverse()?;
        let wv: Vec<(usize, Matrix6x3<f64>)> = b.w.iter().map(|(c, w)| (*c, w * vi)).collect();
        for (a, wva) in &wv {
            let r = wva * b.g;
            for i in 0..6 {
                rhs[6 * a + i] += r[i];
            }
            for (c, w) in &b.w {
                if c > a {
                    continue;
                }
                let blk = wva * w.transpose();
                for i in 0..6 {
                    let jmax = if c == a { i + 1 } else { 6 };
                    for j in 0..jmax {
                        s.add(6 * a + i, 6 * c + j, -blk[(i, j)]);
                    }
                }
            }
        }
        vinv.push(Some(vi));
    }

    for &d in &prob.fixed_dofs {
        let fd = s.first[d];
        for v in s.rows[d].iter_mut() {
            *v = 0.0;
        }
        s.rows[d][d - fd] = 1.0;
        for i in d + 1..n {
            if s.first[i] <= d {
                let fi = s.first[i];
                s.rows[i][d - fi] = 0.0;
            }
        }
        rhs[d] = 0.0;
    }

    if !s.factor() {
        return None;
    }
    s.solve(&mut rhs);
    let cams: Vec<Vector6<f64>> = (0..nc).map(|c| Vector6::from_column_slice(&rhs[6 * c..6 * c + 6])).collect();

    let mut points = vec![Vector3::zeros(); blocks.len()];
    for (p, b) in blocks.iter().enumerate() {
        if !prob.point_free[p] {
            continue;
        }
        let vi = vinv[p]?;
        let mut r = -b.g;
        for (c, w) in &b.w {
            r -= w.transpose() * cams[*c];
        }
        points[p] = vi * r;
    }
    if cams.iter().any(|c| !c.iter().all(|v| v.is_finite())) || points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
        return None;
    }
    Some(Step { cams, points })
}

/// Robust LM over every pose and landmark not named in `mask`. Frozen
/// entities are never written. Observations in frames without a pose are
/// ignored.
pub fn bundle_adjust(model: &mut SfMModel, mask: &FreezeMask, cfg: &BundleConfig) -> Result<BundleReport, SolverError> {
    let mut prob = build_problem(model, mask);
    let num_residuals: usize = prob.obs.iter().map(|o| o.len()).sum();
    let free_landmarks = prob.point_free.iter().filter(|f| **f).count();
    let mut report = BundleReport {
        num_residuals,
        free_frames: prob.n_free_cams,
        free_landmarks,
        ..Default::default()
    };
    let delta = cfg.huber_delta;
    let mut cost = prob.cost(&prob.poses, &prob.points, delta);
    report.initial_cost = cost;
    report.final_cost = cost;
    if prob.n_free_cams == 0 && free_landmarks == 0 {
        report.no_free_parameters = true;
        report.converged = true;
        return Ok(report);
    }

    let mut lambda = cfg.initial_damping;
    let mut blocks = linearize(&prob, delta);
    while report.iterations < cfg.max_lm_iterations {
        if cost <= 1e-20 * num_residuals.max(1) as f64 {
            report.converged = true;
            break;
        }
        report.iterations += 1;
        let Some(step) = solve_step(&prob, &blocks, lambda) else {
            lambda *= cfg.damping_up;
            report.rejected += 1;
            if lambda > 1e16 {
                return Err(SolverError::NumericalFailure("normal equations singular after damping"));
            }
            continue;
        };
        let mut poses = prob.poses.clone();
        for (c, slot) in prob.cam_slot.iter().enumerate() {
            if let Some(s) = slot {
                poses[c] = poses[c].retract(&step.cams[*s]);
            }
        }
        let mut points = prob.points.clone();
        for (p, d) in step.points.iter().enumerate() {
            if prob.point_free[p] {
                points[p] += d;
            }
        }
        let new_cost = prob.cost(&poses, &points, delta);
        if new_cost < cost {
            let rel = (cost - new_cost) / cost;
            prob.poses = poses;
            prob.points = points;
            cost = new_cost;
            report.accepted += 1;
            report.cost_history.push(cost);
            lambda = (lambda / cfg.damping_down).max(1e-15);
            if rel < cfg.convergence_tol {
                report.converged = true;
                break;
            }
            blocks = linearize(&prob, delta);
        } else {
            report.rejected += 1;
            lambda *= cfg.damping_up;
            if lambda > 1e16 {
                // no decrease possible at any damping: at a minimum
                report.converged = true;
                break;
            }
        }
    }
    report.final_cost = cost;

    for (c, slot) in prob.cam_slot.iter().enumerate() {
        if slot.is_some() {
            if let Some(f) = model.frame_mut(prob.frame_ids[c]) {
                f.pose = Some(prob.poses[c]);
            }
        }
    }
    for (p, free) in prob.point_free.iter().enumerate() {
        if *free {
            model.set_landmark_position(prob.point_ids[p], prob.points[p]);
        }
    }
    Ok(report)
}

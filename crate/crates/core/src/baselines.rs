//! Comparison methods: stateless per-frame localization against the
//! reference, and incremental structure from motion on the sequence alone.

use std::collections::{BTreeMap, BTreeSet};

use log::{debug, info};
use rayon::prelude::*;
use thiserror::Error;

use crate::eval::{FrameRecord, Trajectory};
use crate::geom::{PixelPoint, PoseSE3, WorldPoint};
use crate::matching::{global_descriptor, match_features, retrieve_top_k, temporal_candidates, TimeDirection};
use crate::model::{FrameId, FrameStatus, NewLandmark, SfMModel, TrackEntry};
use crate::pipeline::{
    attempt_registration, augment_with_sequence, commit_registration, filter_observations, frame_seed,
    reference_globals, triangulate_new_points, PipelineConfig, PipelineError,
};
use crate::solvers::{bundle_adjust, estimate_relative_pose, triangulate, umeyama_similarity, FreezeMask, RansacConfig};

pub type BaselineReport = Trajectory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("no frame pair suitable for initialization")]
    InitializationFailure,
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

const INIT_STRIDE: usize = 5;
const INIT_MAX_GAP: usize = 50;
const INIT_MIN_PARALLAX_DEG: f64 = 2.0;

fn sorted_by_time(model: &SfMModel) -> Vec<FrameId> {
    let mut v: Vec<(f64, FrameId)> = model.frames.values().map(|f| (f.timestamp, f.id)).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    v.into_iter().map(|x| x.1).collect()
}

/// Every sequence frame localized on its own: retrieval of the top-k
/// reference frames, matching, PnP. Nothing carries over between frames.
pub fn single_image_localize(
    reference: &SfMModel,
    sequence: &SfMModel,
    cfg: &PipelineConfig,
) -> Result<BaselineReport, BaselineError> {
    let model = augment_with_sequence(reference, sequence)?;
    let globals = reference_globals(&model);
    let ids: Vec<FrameId> = sequence.frames.keys().copied().collect();
    let records: Vec<FrameRecord> = ids
        .par_iter()
        .map(|&id| {
            let frame = &model.frames[&id];
            let cands = match global_descriptor(&frame.features) {
                Ok(d) => retrieve_top_k(&d, &globals, cfg.k_retrieval),
                Err(_) => Vec::new(),
            };
            let attempt = attempt_registration(&model, id, &cands, cfg);
            let mut rec = FrameRecord::pending(id, frame.timestamp);
            rec.candidates = cands.len();
            rec.correspondences = attempt.corrs.len();
            match attempt.pnp {
                Some(p) => {
                    rec.inliers = p.inliers.len();
                    rec.pose = Some(p.pose);
                    rec.status = FrameStatus::Registered;
                }
                None => rec.status = FrameStatus::Failed,
            }
            rec
        })
        .collect();
    let mut out = Trajectory::new("single-image");
    out.frames = records.into_iter().map(|r| (r.id, r)).collect();
    Ok(out)
}

struct InitPair {
    first: FrameId,
    second: FrameId,
    pose: PoseSE3,
    points: Vec<NewLandmark>,
}

fn try_init_pair(model: &SfMModel, a: FrameId, b: FrameId, cfg: &PipelineConfig) -> Option<(usize, InitPair)> {
    let (fa, fb) = (&model.frames[&a], &model.frames[&b]);
    if fa.intrinsics != fb.intrinsics {
        return None;
    }
    let intr = fa.intrinsics;
    let matches = match_features(&fa.features, &fb.features, cfg.match_ratio, cfg.mutual_matching);
    let pairs: Vec<(PixelPoint, PixelPoint)> =
        matches.iter().map(|m| (fa.features.pixel(m.query), fb.features.pixel(m.target))).collect();
    let rc = RansacConfig { rng_seed: frame_seed(cfg.ransac.rng_seed, a ^ (b << 16)), ..cfg.ransac };
    let rel = estimate_relative_pose(&pairs, &intr, &rc).ok()?;
    if rel.median_parallax_deg < INIT_MIN_PARALLAX_DEG {
        return None;
    }
    let poses = [PoseSE3::identity(), rel.pose];
    let points: Vec<NewLandmark> = rel
        .inliers
        .iter()
        .filter_map(|&i| {
            let m = &matches[i];
            let x = triangulate(&intr, &poses, &[pairs[i].0, pairs[i].1], &cfg.triangulation).ok()?;
            Some(NewLandmark {
                position: x,
                track: vec![
                    TrackEntry { frame: a, feature: m.query as u32 },
                    TrackEntry { frame: b, feature: m.target as u32 },
                ],
            })
        })
        .collect();
    if points.len() < cfg.min_2d3d {
        return None;
    }
    Some((points.len(), InitPair { first: a, second: b, pose: rel.pose, points }))
}

/// Gauge for a sequence-only reconstruction: the first camera is fixed and
/// the second camera's dominant translation component sets the scale.
fn gauge_mask(model: &SfMModel, first: FrameId, second: FrameId) -> FreezeMask {
    let t = model.frames[&second].pose.expect("initialized").translation;
    let axis = t.iamax();
    FreezeMask {
        frozen_frames: BTreeSet::from([first]),
        frozen_landmarks: BTreeSet::new(),
        fixed_translation_axes: vec![(second, axis)],
    }
}

struct Incremental<'a> {
    cfg: &'a PipelineConfig,
    model: SfMModel,
    order: Vec<FrameId>,
    records: BTreeMap<FrameId, FrameRecord>,
    mask: FreezeMask,
    since_ba: usize,
}

impl Incremental<'_> {
    fn run_ba(&mut self) {
        if let Err(e) = bundle_adjust(&mut self.model, &self.mask, &self.cfg.bundle) {
            debug!("bundle adjustment failed: {e}");
        }
        let posed: BTreeSet<FrameId> =
            self.model.frames.values().filter(|f| f.status.is_localized()).map(|f| f.id).collect();
        filter_observations(&mut self.model, &posed, self.cfg.ransac.inlier_threshold);
        self.since_ba = 0;
    }

    fn pass(&mut self, frames: &[FrameId], direction: TimeDirection) {
        for &id in frames {
            if self.model.frames[&id].status.is_localized() {
                continue;
            }
            let ts = self.model.frames[&id].timestamp;
            let cands =
                temporal_candidates(ts, self.order.iter().map(|s| &self.model.frames[s]), self.cfg.n_temporal, direction);
            let attempt = attempt_registration(&self.model, id, &cands, self.cfg);
            let rec = self.records.get_mut(&id).unwrap();
            rec.candidates = cands.len();
            rec.correspondences = attempt.corrs.len();
            if let Some(p) = &attempt.pnp {
                rec.inliers = p.inliers.len();
                commit_registration(&mut self.model, id, FrameStatus::Registered, &attempt);
                triangulate_new_points(&mut self.model, id, &attempt, self.cfg);
                self.since_ba += 1;
                if self.since_ba >= self.cfg.ba_period {
                    self.run_ba();
                }
            } else {
                self.model.frame_mut(id).unwrap().status = FrameStatus::Failed;
            }
        }
    }
}

/// Incremental reconstruction of the sequence without a reference. The
/// initial pair is the best-supported pair with enough parallax. When
/// ground-truth centers are given the result is aligned to them with a
/// similarity transform. Returns the reconstruction and its trajectory.
pub fn onthefly_sfm(
    sequence: &SfMModel,
    cfg: &PipelineConfig,
    gt_centers: Option<&BTreeMap<FrameId, WorldPoint>>,
) -> Result<(SfMModel, BaselineReport), BaselineError> {
    let mut model = SfMModel::new();
    for f in sequence.frames.values() {
        let mut f = f.clone();
        f.pose = None;
        f.status = FrameStatus::Pending;
        model.insert_frame(f);
    }
    let order = sorted_by_time(&model);

    let mut pairs = Vec::new();
    for i in (0..order.len()).step_by(INIT_STRIDE) {
        for gap in (1..INIT_STRIDE).chain((INIT_STRIDE..=INIT_MAX_GAP).step_by(INIT_STRIDE)) {
            if i + gap < order.len() {
                pairs.push((order[i], order[i + gap]));
            }
        }
    }
    let init = pairs
        .par_iter()
        .filter_map(|&(a, b)| try_init_pair(&model, a, b, cfg))
        .collect::<Vec<_>>()
        .into_iter()
        .max_by(|x, y| x.0.cmp(&y.0).then(y.1.first.cmp(&x.1.first)))
        .map(|x| x.1)
        .ok_or(BaselineError::InitializationFailure)?;
    info!("initial pair {} / {} with {} points", init.first, init.second, init.points.len());

    for (id, pose) in [(init.first, PoseSE3::identity()), (init.second, init.pose)] {
        let f = model.frame_mut(id).unwrap();
        f.pose = Some(pose);
        f.status = FrameStatus::Registered;
    }
    model.merge_new_landmarks(init.first, init.points);
    let mask = gauge_mask(&model, init.first, init.second);
    let records = order.iter().map(|id| (*id, FrameRecord::pending(*id, model.frames[id].timestamp))).collect();
    let mut inc = Incremental { cfg, model, order: order.clone(), records, mask, since_ba: 0 };
    inc.run_ba();

    let t0 = inc.model.frames[&init.first].timestamp;
    let forward: Vec<FrameId> = order.iter().copied().filter(|id| inc.model.frames[id].timestamp > t0).collect();
    inc.pass(&forward, TimeDirection::Before);
    let backward: Vec<FrameId> = order.iter().rev().copied().filter(|id| inc.model.frames[id].timestamp < t0).collect();
    inc.pass(&backward, TimeDirection::After);
    if inc.since_ba > 0 {
        inc.run_ba();
    }

    let mut model = inc.model;
    if let Some(gt) = gt_centers {
        let (src, dst): (Vec<WorldPoint>, Vec<WorldPoint>) = model
            .frames
            .values()
            .filter(|f| f.status.is_localized())
            .filter_map(|f| Some((f.pose?.center(), *gt.get(&f.id)?)))
            .unzip();
        match umeyama_similarity(&src, &dst) {
            Ok(sim) => {
                for f in model.frames.values_mut() {
                    if let Some(p) = f.pose.as_mut() {
                        *p = sim.apply_pose(p);
                    }
                }
                let moved: Vec<_> = model.landmarks().values().map(|l| (l.id, sim.apply(&l.position))).collect();
                for (id, x) in moved {
                    model.set_landmark_position(id, x);
                }
            }
            Err(e) => debug!("alignment skipped: {e}"),
        }
    }

    let mut traj = Trajectory::new("on-the-fly");
    for (id, mut rec) in inc.records {
        let f = &model.frames[&id];
        rec.status = f.status;
        rec.pose = if f.status.is_localized() { f.pose } else { None };
        traj.frames.insert(id, rec);
    }
    Ok((model, traj))
}

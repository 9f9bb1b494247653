//! Localization of a video sequence against a frozen reference model:
//! anchors first, then frame-by-frame registration in time order with
//! spatially and temporally guided candidate frames, triangulation of new
//! points, and periodic bundle adjustment that never moves the reference.

use std::collections::{BTreeMap, BTreeSet};

use log::{debug, info};
use rayon::prelude::*;
use thiserror::Error;

use crate::eval::{FrameRecord, Trajectory};
use crate::geom::{reprojection_residual, PixelPoint, PoseSE3};
use crate::matching::{
    candidate_union, global_descriptor, match_features, retrieve_top_k, temporal_candidates, Descriptor, TimeDirection,
};
use crate::model::{
    EvaluationGroundTruth, Frame, FrameId, FrameMatch, FrameStatus, NewLandmark, Origin, SfMModel, TaggedPoint,
    TrackEntry,
};
use crate::solvers::{
    bundle_adjust, ransac_pnp, triangulate, BundleConfig, BundleReport, Correspondence2D3D, FreezeMask, PnpResult,
    RansacConfig, TriangulationConfig,
};
use crate::synth::unique_visible_fraction;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub n_temporal: usize,
    pub k_retrieval: usize,
    pub ba_period: usize,
    pub k_spatial: usize,
    pub spatial_max_angle_deg: f64,
    pub ransac: RansacConfig,
    pub bundle: BundleConfig,
    pub triangulation: TriangulationConfig,
    pub anchor_threshold: f64,
    pub min_2d3d: usize,
    pub match_ratio: f32,
    pub mutual_matching: bool,
    /// Frames whose matches confirm at least this many PnP inliers are used
    /// for triangulation.
    pub min_verified_matches: usize,
    pub backward_pass: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_temporal: 25,
            k_retrieval: 20,
            ba_period: 10,
            k_spatial: 10,
            spatial_max_angle_deg: 60.0,
            ransac: RansacConfig::default(),
            bundle: BundleConfig { max_lm_iterations: 20, convergence_tol: 1e-6, ..BundleConfig::default() },
            triangulation: TriangulationConfig::default(),
            anchor_threshold: 0.5,
            min_2d3d: 15,
            match_ratio: 0.8,
            mutual_matching: true,
            min_verified_matches: 5,
            backward_pass: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        let counts = [
            ("n_temporal", self.n_temporal),
            ("k_retrieval", self.k_retrieval),
            ("ba_period", self.ba_period),
            ("k_spatial", self.k_spatial),
            ("min_2d3d", self.min_2d3d),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(format!("{name} must be at least 1"));
            }
        }
        if !(self.match_ratio > 0.0 && self.match_ratio <= 1.0) {
            return Err("match_ratio must lie in (0, 1]".into());
        }
        if !(self.triangulation.min_angle_deg >= 0.0 && self.triangulation.max_reprojection > 0.0) {
            return Err("triangulation thresholds must be positive".into());
        }
        self.ransac.validate()?;
        self.bundle.validate()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("no anchor frames found (highest score {max_score:.3})")]
    NoAnchors { max_score: f64 },
    #[error("none of the {0} anchors could be registered")]
    AllAnchorsFailed(usize),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Scores how likely a frame is to show the distinctive anchor object.
pub trait AnchorDetector: Sync {
    fn score(&self, frame: &Frame) -> f64;
}

/// Detector backed by ground truth: the fraction of the tagged unique
/// object inside the frame's true frustum.
#[derive(Debug, Clone)]
pub struct OracleAnchorDetector {
    poses: BTreeMap<FrameId, PoseSE3>,
    unique: Vec<TaggedPoint>,
    max_range: f64,
}

impl AnchorDetector for OracleAnchorDetector {
    fn score(&self, frame: &Frame) -> f64 {
        match self.poses.get(&frame.id) {
            Some(pose) => unique_visible_fraction(&frame.intrinsics, pose, &self.unique, self.max_range),
            None => 0.0,
        }
    }
}

pub fn oracle_anchor_detector(gt: &EvaluationGroundTruth) -> OracleAnchorDetector {
    OracleAnchorDetector {
        poses: gt.frames.iter().filter_map(|(id, f)| f.pose.map(|p| (*id, p))).collect(),
        unique: gt.unique_object.clone(),
        max_range: gt.max_range.unwrap_or(f64::INFINITY),
    }
}

/// Sequence frames sorted by timestamp (then id).
fn time_order(frames: impl IntoIterator<Item = (FrameId, f64)>) -> Vec<FrameId> {
    let mut v: Vec<(f64, FrameId)> = frames.into_iter().map(|(id, ts)| (ts, id)).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    v.into_iter().map(|(_, id)| id).collect()
}

/// Frames scoring at least `threshold`, in timestamp order.
pub fn detect_anchors(
    sequence: &SfMModel,
    detector: &dyn AnchorDetector,
    threshold: f64,
) -> Result<Vec<FrameId>, PipelineError> {
    let scores: Vec<(FrameId, f64, f64)> = sequence
        .frames
        .values()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|f| (f.id, f.timestamp, detector.score(f)))
        .collect();
    let max_score = scores.iter().map(|s| s.2).fold(0.0, f64::max);
    let picked = time_order(scores.iter().filter(|s| s.2 >= threshold).map(|s| (s.0, s.1)));
    if picked.is_empty() {
        return Err(PipelineError::NoAnchors { max_score });
    }
    Ok(picked)
}

/// One bundle adjustment run and the state of the frozen block around it.
#[derive(Debug, Clone, PartialEq)]
pub struct BaEvent {
    pub registered_so_far: usize,
    pub report: BundleReport,
    pub frozen_digest_before: u64,
    pub frozen_digest_after: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationResult {
    pub trajectory: Trajectory,
    pub anchors: Vec<FrameId>,
    /// Every registration attempt in the order it was made.
    pub attempts: Vec<FrameId>,
    pub ba_events: Vec<BaEvent>,
    pub model: SfMModel,
}

/// FNV-1a over the ids and bit patterns of every reference pose and
/// reference landmark position.
pub fn reference_digest(model: &SfMModel) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |x: u64| {
        for b in x.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    for f in model.frames.values().filter(|f| f.status == FrameStatus::Reference) {
        eat(f.id as u64);
        if let Some(p) = &f.pose {
            let q = p.rotation.quaternion();
            for v in [q.w, q.i, q.j, q.k, p.translation.x, p.translation.y, p.translation.z] {
                eat(v.to_bits());
            }
        }
    }
    for lm in model.landmarks().values().filter(|l| l.origin == Origin::Reference) {
        eat(lm.id as u64);
        for v in lm.position.coords.iter() {
            eat(v.to_bits());
        }
    }
    h
}

/// Reference plus the (unposed) sequence frames.
pub fn augment_with_sequence(reference: &SfMModel, sequence: &SfMModel) -> Result<SfMModel, PipelineError> {
    let mut model = reference.clone();
    for f in sequence.frames.values() {
        if model.frames.contains_key(&f.id) {
            return Err(PipelineError::InvalidInput(format!("frame id {} appears in both reference and sequence", f.id)));
        }
        let mut f = f.clone();
        f.pose = None;
        f.status = FrameStatus::Pending;
        model.insert_frame(f);
    }
    Ok(model)
}

/// Global descriptors of the reference frames, for retrieval.
pub fn reference_globals(model: &SfMModel) -> Vec<(FrameId, Descriptor)> {
    model
        .frames
        .values()
        .filter(|f| f.status == FrameStatus::Reference)
        .filter_map(|f| global_descriptor(&f.features).ok().map(|d| (f.id, d)))
        .collect()
}

pub(crate) fn frame_seed(base: u64, id: FrameId) -> u64 {
    base ^ (id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Descriptor matches from `frame` into each posed candidate, in candidate order.
pub(crate) fn match_candidates(model: &SfMModel, frame: &Frame, candidates: &[FrameId], cfg: &PipelineConfig) -> Vec<FrameMatch> {
    candidates
        .par_iter()
        .map(|&c| {
            let Some(target) = model.frames.get(&c) else { return Vec::new() };
            if target.pose.is_none() {
                return Vec::new();
            }
            match_features(&frame.features, &target.features, cfg.match_ratio, cfg.mutual_matching)
                .into_iter()
                .map(|m| FrameMatch { query: m.query, target_frame: c, target: m.target, distance: m.distance })
                .collect()
        })
        .flatten()
        .collect()
}

pub(crate) struct Attempt {
    pub matches: Vec<FrameMatch>,
    pub corrs: Vec<Correspondence2D3D>,
    pub pnp: Option<PnpResult>,
}

pub(crate) fn attempt_registration(model: &SfMModel, id: FrameId, candidates: &[FrameId], cfg: &PipelineConfig) -> Attempt {
    let frame = &model.frames[&id];
    let matches = match_candidates(model, frame, candidates, cfg);
    let corrs = model.lift_matches_to_3d(&frame.features, &matches);
    let pnp = if corrs.len() >= cfg.min_2d3d.max(4) {
        let rc = RansacConfig { rng_seed: frame_seed(cfg.ransac.rng_seed, id), ..cfg.ransac };
        ransac_pnp(&corrs, &frame.intrinsics, &rc).ok()
    } else {
        None
    };
    Attempt { matches, corrs, pnp }
}

/// Sets the pose and binds the inlier features to their landmarks.
pub(crate) fn commit_registration(model: &mut SfMModel, id: FrameId, status: FrameStatus, attempt: &Attempt) {
    let pnp = attempt.pnp.as_ref().expect("only successful attempts are committed");
    let f = model.frame_mut(id).expect("frame exists");
    f.pose = Some(pnp.pose);
    f.status = status;
    for &i in &pnp.inliers {
        let c = &attempt.corrs[i];
        model.add_observation(c.point_id, id, c.feature);
    }
}

/// Triangulates unbound query features against unbound matched features of
/// posed frames that confirmed the registration. Returns the number of new
/// landmarks.
pub(crate) fn triangulate_new_points(model: &mut SfMModel, id: FrameId, attempt: &Attempt, cfg: &PipelineConfig) -> usize {
    let Some(pnp) = &attempt.pnp else { return 0 };
    let inlier_pairs: BTreeSet<(usize, u32)> = pnp.inliers.iter().map(|&i| (attempt.corrs[i].feature, attempt.corrs[i].point_id)).collect();
    let mut verified: BTreeMap<FrameId, usize> = BTreeMap::new();
    for m in &attempt.matches {
        if let Some(l) = model.landmark_for(m.target_frame, m.target) {
            if inlier_pairs.contains(&(m.query, l)) {
                *verified.entry(m.target_frame).or_default() += 1;
            }
        }
    }
    let frame = &model.frames[&id];
    let pose = frame.pose.expect("registered");
    let intr = frame.intrinsics;

    // best query feature for every unbound target feature, then group per query feature
    let mut by_target: BTreeMap<(FrameId, usize), (f32, usize)> = BTreeMap::new();
    for m in &attempt.matches {
        if verified.get(&m.target_frame).copied().unwrap_or(0) < cfg.min_verified_matches {
            continue;
        }
        if model.landmark_for(id, m.query).is_some() || model.landmark_for(m.target_frame, m.target).is_some() {
            continue;
        }
        let target = &model.frames[&m.target_frame];
        if target.intrinsics != intr || target.pose.is_none() {
            continue;
        }
        let e = by_target.entry((m.target_frame, m.target)).or_insert((m.distance, m.query));
        if m.distance < e.0 || (m.distance == e.0 && m.query < e.1) {
            *e = (m.distance, m.query);
        }
    }
    let mut by_query: BTreeMap<usize, Vec<(FrameId, usize)>> = BTreeMap::new();
    for ((tf, t), (_, q)) in by_target {
        by_query.entry(q).or_default().push((tf, t));
    }
    // one view per frame: keep the first (lowest feature index) if a frame repeats
    let jobs: Vec<(usize, Vec<(FrameId, usize)>)> = by_query
        .into_iter()
        .map(|(q, mut views)| {
            views.dedup_by_key(|v| v.0);
            (q, views)
        })
        .collect();

    let solved: Vec<Option<NewLandmark>> = jobs
        .par_iter()
        .map(|(q, views)| {
            let qpx = frame.features.pixel(*q);
            let view_data: Vec<(PoseSE3, PixelPoint)> = views
                .iter()
                .map(|(tf, t)| {
                    let f = &model.frames[tf];
                    (f.pose.unwrap(), f.features.pixel(*t))
                })
                .collect();
            let entry = |f: FrameId, i: usize| TrackEntry { frame: f, feature: i as u32 };
            let mut poses = vec![pose];
            let mut pixels = vec![qpx];
            for (p, px) in &view_data {
                poses.push(*p);
                pixels.push(*px);
            }
            if let Ok(x) = triangulate(&intr, &poses, &pixels, &cfg.triangulation) {
                let mut track = vec![entry(id, *q)];
                track.extend(views.iter().map(|(tf, t)| entry(*tf, *t)));
                return Some(NewLandmark { position: x, track });
            }
            // fall back to the best two-view solution
            let mut best: Option<(f64, NewLandmark)> = None;
            for ((tf, t), (p, px)) in views.iter().zip(&view_data) {
                let Ok(x) = triangulate(&intr, &[pose, *p], &[qpx, *px], &cfg.triangulation) else { continue };
                let angle = crate::solvers::triangulation_angle(&[pose, *p], &x);
                if best.as_ref().is_none_or(|b| angle > b.0) {
                    best = Some((angle, NewLandmark { position: x, track: vec![entry(id, *q), entry(*tf, *t)] }));
                }
            }
            best.map(|b| b.1)
        })
        .collect();
    let accepted: Vec<NewLandmark> = solved.into_iter().flatten().collect();
    model.merge_new_landmarks(id, accepted).len()
}

/// Drops observations whose reprojection error exceeds `threshold` in the
/// listed frames. Reference landmarks keep their reference-frame observations.
pub(crate) fn filter_observations(model: &mut SfMModel, frames: &BTreeSet<FrameId>, threshold: f64) -> usize {
    let mut bad = Vec::new();
    for lm in model.landmarks().values() {
        for e in &lm.track {
            if !frames.contains(&e.frame) {
                continue;
            }
            let f = &model.frames[&e.frame];
            let Some(pose) = &f.pose else { continue };
            let ok = reprojection_residual(&f.intrinsics, pose, &lm.position, &f.features.pixel(e.feature as usize))
                .is_some_and(|r| r.norm() <= threshold);
            if !ok {
                bad.push((lm.id, *e, lm.origin, lm.track.len()));
            }
        }
    }
    let mut removed = 0;
    for (lid, e, origin, _) in bad {
        // never let a reference landmark fall apart
        if origin == Origin::Reference {
            let Some(lm) = model.landmark(lid) else { continue };
            if lm.track.len() <= 2 {
                continue;
            }
        }
        model.remove_observation(e);
        removed += 1;
    }
    removed
}

/// Per-frame reprojection RMS over the frame's bound observations.
pub fn frame_reprojection_rms(model: &SfMModel, id: FrameId) -> Option<f64> {
    let f = model.frames.get(&id)?;
    let pose = f.pose?;
    let obs = model.frame_observations(id);
    if obs.is_empty() {
        return None;
    }
    let mut s = 0.0;
    for (feat, lid) in &obs {
        let lm = model.landmark(*lid)?;
        let r = reprojection_residual(&f.intrinsics, &pose, &lm.position, &f.features.pixel(*feat))?;
        s += r.norm_squared();
    }
    Some((s / obs.len() as f64).sqrt())
}

struct Session<'a> {
    cfg: &'a PipelineConfig,
    model: SfMModel,
    globals: Vec<(FrameId, Descriptor)>,
    sequence: Vec<FrameId>,
    records: BTreeMap<FrameId, FrameRecord>,
    ba_events: Vec<BaEvent>,
    attempts: Vec<FrameId>,
    since_ba: usize,
    registered: usize,
}

impl<'a> Session<'a> {
    fn new(model: SfMModel, cfg: &'a PipelineConfig) -> Self {
        let globals = reference_globals(&model);
        let sequence = time_order(
            model.frames.values().filter(|f| f.status != FrameStatus::Reference).map(|f| (f.id, f.timestamp)),
        );
        let records = sequence
            .iter()
            .map(|id| (*id, FrameRecord::pending(*id, model.frames[id].timestamp)))
            .collect();
        Self { cfg, model, globals, sequence, records, ba_events: Vec::new(), attempts: Vec::new(), since_ba: 0, registered: 0 }
    }

    fn retrieval(&self, id: FrameId) -> Vec<FrameId> {
        match global_descriptor(&self.model.frames[&id].features) {
            Ok(d) => retrieve_top_k(&d, &self.globals, self.cfg.k_retrieval),
            Err(_) => Vec::new(),
        }
    }

    fn run_ba(&mut self) {
        let mask: FreezeMask = self.model.freeze_mask_for_reference();
        let before = reference_digest(&self.model);
        let report = match bundle_adjust(&mut self.model, &mask, &self.cfg.bundle) {
            Ok(r) => r,
            Err(e) => {
                debug!("bundle adjustment failed: {e}");
                BundleReport::default()
            }
        };
        let after = reference_digest(&self.model);
        let free: BTreeSet<FrameId> =
            self.model.frames.values().filter(|f| f.status.is_localized() && f.status != FrameStatus::Reference).map(|f| f.id).collect();
        let removed = filter_observations(&mut self.model, &free, self.cfg.ransac.inlier_threshold);
        debug!(
            "BA #{}: cost {:.4e} -> {:.4e} in {} iterations, {} observations dropped",
            self.ba_events.len(),
            report.initial_cost,
            report.final_cost,
            report.iterations,
            removed
        );
        self.ba_events.push(BaEvent {
            registered_so_far: self.registered,
            report,
            frozen_digest_before: before,
            frozen_digest_after: after,
        });
        self.since_ba = 0;
    }

    fn register(&mut self, id: FrameId, candidates: Vec<FrameId>, status: FrameStatus) -> bool {
        self.attempts.push(id);
        let attempt = attempt_registration(&self.model, id, &candidates, self.cfg);
        let rec = self.records.get_mut(&id).expect("sequence frame");
        rec.candidates = candidates.len();
        rec.correspondences = attempt.corrs.len();
        match &attempt.pnp {
            Some(p) => {
                rec.inliers = p.inliers.len();
                commit_registration(&mut self.model, id, status, &attempt);
                let added = triangulate_new_points(&mut self.model, id, &attempt, self.cfg);
                debug!("frame {id}: {} inliers of {}, {added} new points", p.inliers.len(), attempt.corrs.len());
                self.registered += 1;
                true
            }
            None => {
                rec.inliers = 0;
                let f = self.model.frame_mut(id).unwrap();
                f.status = FrameStatus::Failed;
                debug!("frame {id}: failed with {} correspondences", attempt.corrs.len());
                false
            }
        }
    }

    fn register_anchors(&mut self, anchors: &[FrameId]) -> Result<Vec<FrameId>, PipelineError> {
        let mut ok = Vec::new();
        for &a in anchors {
            if !self.records.contains_key(&a) {
                return Err(PipelineError::InvalidInput(format!("anchor {a} is not a sequence frame")));
            }
            let cands = self.retrieval(a);
            if self.register(a, cands, FrameStatus::Anchor) {
                ok.push(a);
            }
        }
        if ok.is_empty() {
            return Err(PipelineError::AllAnchorsFailed(anchors.len()));
        }
        self.run_ba();
        info!("{} of {} anchors registered", ok.len(), anchors.len());
        Ok(ok)
    }

    fn nearest_anchor(&self, anchors: &[FrameId], ts: f64) -> Option<PoseSE3> {
        anchors
            .iter()
            .filter_map(|a| {
                let f = &self.model.frames[a];
                f.pose.map(|p| ((f.timestamp - ts).abs(), *a, p))
            })
            .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)))
            .map(|x| x.2)
    }

    fn pass(&mut self, frames: &[FrameId], start_prior: PoseSE3, direction: TimeDirection, anchors: &[FrameId]) {
        let mut prior = start_prior;
        let mut failures = 0usize;
        for &id in frames {
            let status = self.model.frames[&id].status;
            if status == FrameStatus::Anchor {
                prior = self.model.frames[&id].pose.unwrap();
                failures = 0;
                continue;
            }
            if status.is_localized() {
                continue;
            }
            let ts = self.model.frames[&id].timestamp;
            if failures >= self.cfg.ba_period {
                if let Some(p) = self.nearest_anchor(anchors, ts) {
                    prior = p;
                }
            }
            let temporal = temporal_candidates(
                ts,
                self.sequence.iter().map(|s| &self.model.frames[s]),
                self.cfg.n_temporal,
                direction,
            );
            let spatial = self.model.spatial_neighbors(&prior, self.cfg.k_spatial, self.cfg.spatial_max_angle_deg);
            let retrieval = self.retrieval(id);
            let cands = candidate_union(&[&temporal, &spatial, &retrieval], id);
            if self.register(id, cands, FrameStatus::Registered) {
                prior = self.model.frames[&id].pose.unwrap();
                failures = 0;
                self.since_ba += 1;
                if self.since_ba >= self.cfg.ba_period {
                    self.run_ba();
                }
            } else {
                failures += 1;
            }
        }
    }

    fn finish(mut self, anchors: Vec<FrameId>) -> LocalizationResult {
        if self.since_ba > 0 {
            self.run_ba();
        }
        let mut trajectory = Trajectory::new("proposed");
        for (id, mut rec) in std::mem::take(&mut self.records) {
            let f = &self.model.frames[&id];
            rec.status = f.status;
            rec.pose = if f.status.is_localized() { f.pose } else { None };
            trajectory.frames.insert(id, rec);
        }
        LocalizationResult { trajectory, anchors, attempts: self.attempts, ba_events: self.ba_events, model: self.model }
    }
}

/// Registers each anchor against the reference (retrieval, matching, PnP,
/// triangulation) and refines them with one frozen bundle adjustment.
/// Anchors that fail are marked failed. Returns the registered anchors.
pub fn register_anchors(model: &mut SfMModel, anchors: &[FrameId], cfg: &PipelineConfig) -> Result<Vec<FrameId>, PipelineError> {
    let mut session = Session::new(std::mem::take(model), cfg);
    let result = session.register_anchors(anchors);
    *model = session.model;
    result
}

/// Frame-by-frame localization of every non-anchor sequence frame in
/// `model`, forward in time from the earliest anchor and then backward.
pub fn recursive_localize(model: SfMModel, anchors: &[FrameId], cfg: &PipelineConfig) -> Result<LocalizationResult, PipelineError> {
    let mut session = Session::new(model, cfg);
    let registered: Vec<FrameId> =
        anchors.iter().copied().filter(|a| session.model.frames.get(a).is_some_and(|f| f.status == FrameStatus::Anchor)).collect();
    run_passes(&mut session, &registered)?;
    Ok(session.finish(registered))
}

fn run_passes(session: &mut Session, anchors: &[FrameId]) -> Result<(), PipelineError> {
    let first = *anchors
        .iter()
        .min_by(|a, b| {
            let (fa, fb) = (&session.model.frames[*a], &session.model.frames[*b]);
            fa.timestamp.total_cmp(&fb.timestamp).then(a.cmp(b))
        })
        .ok_or(PipelineError::AllAnchorsFailed(0))?;
    let first_ts = session.model.frames[&first].timestamp;
    let first_pose = session.model.frames[&first].pose.unwrap();
    let seq = session.sequence.clone();
    let forward: Vec<FrameId> = seq.iter().copied().filter(|id| session.model.frames[id].timestamp > first_ts || *id == first).collect();
    session.pass(&forward, first_pose, TimeDirection::Before, anchors);
    if session.cfg.backward_pass {
        let backward: Vec<FrameId> = seq.iter().rev().copied().filter(|id| session.model.frames[id].timestamp < first_ts).collect();
        session.pass(&backward, first_pose, TimeDirection::After, anchors);
    }
    Ok(())
}

/// The full method: detect anchors, register them, then localize the rest.
pub fn localize_sequence(
    reference: &SfMModel,
    sequence: &SfMModel,
    detector: &dyn AnchorDetector,
    cfg: &PipelineConfig,
) -> Result<LocalizationResult, PipelineError> {
    let anchors = detect_anchors(sequence, detector, cfg.anchor_threshold)?;
    let model = augment_with_sequence(reference, sequence)?;
    let mut session = Session::new(model, cfg);
    let registered = session.register_anchors(&anchors)?;
    run_passes(&mut session, &registered)?;
    Ok(session.finish(registered))
}

//! SfM model store: frames, landmarks, tracks, and the feature-to-landmark index.
//!
//! The same structure holds the frozen reference model, the augmented model
//! grown by the pipeline, and the query-only models of the baselines.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::geom::{angle_between, CameraIntrinsics, PixelPoint, PoseSE3, WorldPoint};
use crate::matching::FeatureSet;
use crate::solvers::{Correspondence2D3D, FreezeMask};

pub type FrameId = u32;
pub type LandmarkId = u32;

pub const MODEL_MAGIC: &str = "VIDLOC-MODEL";
pub const MODEL_VERSION: u32 = 1;
pub const GT_MAGIC: &str = "VIDLOC-GT";
pub const GT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported file version {found} (expected {expected})")]
    VersionMismatch { found: String, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FrameStatus {
    Reference,
    Anchor,
    Registered,
    Failed,
    Pending,
}

impl FrameStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FrameStatus::Reference => "reference",
            FrameStatus::Anchor => "anchor",
            FrameStatus::Registered => "registered",
            FrameStatus::Failed => "failed",
            FrameStatus::Pending => "pending",
        }
    }

    pub fn requires_pose(self) -> bool {
        matches!(self, FrameStatus::Reference | FrameStatus::Anchor | FrameStatus::Registered)
    }

    /// Anchor or registered query frame.
    pub fn is_localized(self) -> bool {
        matches!(self, FrameStatus::Anchor | FrameStatus::Registered)
    }
}

impl FromStr for FrameStatus {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "reference" => FrameStatus::Reference,
            "anchor" => FrameStatus::Anchor,
            "registered" => FrameStatus::Registered,
            "failed" => FrameStatus::Failed,
            "pending" => FrameStatus::Pending,
            _ => return Err(format!("unknown frame status `{s}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub id: FrameId,
    pub timestamp: f64,
    pub intrinsics: CameraIntrinsics,
    pub pose: Option<PoseSE3>,
    pub status: FrameStatus,
    pub features: FeatureSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Reference,
    Augmented,
}

impl Origin {
    fn as_str(self) -> &'static str {
        match self {
            Origin::Reference => "reference",
            Origin::Augmented => "augmented",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TrackEntry {
    pub frame: FrameId,
    pub feature: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub id: LandmarkId,
    pub position: WorldPoint,
    pub origin: Origin,
    pub track: Vec<TrackEntry>,
}

/// A triangulated point ready to be added, with the observations supporting it.
#[derive(Debug, Clone, PartialEq)]
pub struct NewLandmark {
    pub position: WorldPoint,
    pub track: Vec<TrackEntry>,
}

/// A descriptor match from a feature of the frame being localized to a
/// feature of a frame already in the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMatch {
    pub query: usize,
    pub target_frame: FrameId,
    pub target: usize,
    pub distance: f32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SfMModel {
    pub frames: BTreeMap<FrameId, Frame>,
    landmarks: BTreeMap<LandmarkId, Landmark>,
    feature_index: HashMap<TrackEntry, LandmarkId>,
    next_landmark_id: LandmarkId,
}

impl SfMModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_frame(&mut self, frame: Frame) {
        assert!(
            !frame.status.requires_pose() || frame.pose.is_some(),
            "frame {} with status {} needs a pose",
            frame.id,
            frame.status.as_str()
        );
        self.frames.insert(frame.id, frame);
    }

    pub fn frame(&self, id: FrameId) -> Option<&Frame> {
        self.frames.get(&id)
    }

    pub fn frame_mut(&mut self, id: FrameId) -> Option<&mut Frame> {
        self.frames.get_mut(&id)
    }

    pub fn landmarks(&self) -> &BTreeMap<LandmarkId, Landmark> {
        &self.landmarks
    }

    pub fn landmark(&self, id: LandmarkId) -> Option<&Landmark> {
        self.landmarks.get(&id)
    }

    pub fn num_landmarks(&self) -> usize {
        self.landmarks.len()
    }

    pub fn next_landmark_id(&self) -> LandmarkId {
        self.next_landmark_id
    }

    /// Raises the id counter so new landmarks start at `id` or later.
    pub fn reserve_landmark_ids(&mut self, id: LandmarkId) {
        self.next_landmark_id = self.next_landmark_id.max(id);
    }

    pub fn landmark_for(&self, frame: FrameId, feature: usize) -> Option<LandmarkId> {
        self.feature_index.get(&TrackEntry { frame, feature: feature as u32 }).copied()
    }

    fn entry_is_valid(&self, e: &TrackEntry) -> bool {
        self.frames.get(&e.frame).is_some_and(|f| (e.feature as usize) < f.features.len())
    }

    /// Inserts a landmark with a caller-chosen id. Fails if the id is taken,
    /// the track is shorter than two, or any entry is invalid or already bound.
    pub fn insert_landmark(&mut self, landmark: Landmark) -> Result<(), String> {
        if self.landmarks.contains_key(&landmark.id) {
            return Err(format!("landmark {} already exists", landmark.id));
        }
        self.check_track(&landmark.track)?;
        for e in &landmark.track {
            self.feature_index.insert(*e, landmark.id);
        }
        self.next_landmark_id = self.next_landmark_id.max(landmark.id + 1);
        self.landmarks.insert(landmark.id, landmark);
        Ok(())
    }

    fn check_track(&self, track: &[TrackEntry]) -> Result<(), String> {
        if track.len() < 2 {
            return Err("track shorter than two observations".into());
        }
        let mut frames = BTreeSet::new();
        for e in track {
            if !self.entry_is_valid(e) {
                return Err(format!("track entry ({}, {}) does not resolve", e.frame, e.feature));
            }
            if self.feature_index.contains_key(e) {
                return Err(format!("feature ({}, {}) is already bound", e.frame, e.feature));
            }
            if !frames.insert(e.frame) {
                return Err(format!("frame {} appears twice in one track", e.frame));
            }
        }
        Ok(())
    }

    /// Adds `(frame, feature)` to a landmark's track. Returns false (and
    /// changes nothing) if the feature is bound or the frame already observes it.
    pub fn add_observation(&mut self, landmark: LandmarkId, frame: FrameId, feature: usize) -> bool {
        let entry = TrackEntry { frame, feature: feature as u32 };
        if self.feature_index.contains_key(&entry) || !self.entry_is_valid(&entry) {
            return false;
        }
        let Some(lm) = self.landmarks.get_mut(&landmark) else { return false };
        if lm.track.iter().any(|e| e.frame == frame) {
            return false;
        }
        lm.track.push(entry);
        self.feature_index.insert(entry, landmark);
        true
    }

    /// Removes one observation; a landmark left with fewer than two
    /// observations is deleted. Returns true if the landmark was deleted.
    pub fn remove_observation(&mut self, entry: TrackEntry) -> bool {
        let Some(id) = self.feature_index.remove(&entry) else { return false };
        let lm = self.landmarks.get_mut(&id).expect("index points at a missing landmark");
        lm.track.retain(|e| *e != entry);
        if lm.track.len() < 2 {
            self.remove_landmark(id);
            return true;
        }
        false
    }

    pub fn remove_landmark(&mut self, id: LandmarkId) -> Option<Landmark> {
        let lm = self.landmarks.remove(&id)?;
        for e in &lm.track {
            self.feature_index.remove(e);
        }
        Some(lm)
    }

    pub fn set_landmark_position(&mut self, id: LandmarkId, position: WorldPoint) {
        if let Some(lm) = self.landmarks.get_mut(&id) {
            lm.position = position;
        }
    }

    /// Marks every landmark as part of the reference.
    pub fn relabel_as_reference(mut self) -> Self {
        for lm in self.landmarks.values_mut() {
            lm.origin = Origin::Reference;
        }
        self
    }

    /// `(feature index, landmark)` pairs for one frame, in feature order.
    pub fn frame_observations(&self, frame: FrameId) -> Vec<(usize, LandmarkId)> {
        let Some(f) = self.frames.get(&frame) else { return Vec::new() };
        (0..f.features.len()).filter_map(|i| self.landmark_for(frame, i).map(|l| (i, l))).collect()
    }

    /// Checks that tracks and the feature index are mutually inverse and that
    /// every track entry resolves.
    pub fn check_consistency(&self) -> Result<(), String> {
        let mut seen = 0usize;
        for lm in self.landmarks.values() {
            if lm.track.len() < 2 {
                return Err(format!("landmark {} has a track of length {}", lm.id, lm.track.len()));
            }
            let mut frames = BTreeSet::new();
            for e in &lm.track {
                if !self.entry_is_valid(e) {
                    return Err(format!("landmark {} has unresolved entry {:?}", lm.id, e));
                }
                if self.feature_index.get(e) != Some(&lm.id) {
                    return Err(format!("index disagrees with track of landmark {}", lm.id));
                }
                if !frames.insert(e.frame) {
                    return Err(format!("landmark {} is seen twice by frame {}", lm.id, e.frame));
                }
                seen += 1;
            }
        }
        if seen != self.feature_index.len() {
            return Err(format!("index has {} entries, tracks have {}", self.feature_index.len(), seen));
        }
        for f in self.frames.values() {
            if f.status.requires_pose() && f.pose.is_none() {
                return Err(format!("frame {} is {} without a pose", f.id, f.status.as_str()));
            }
        }
        Ok(())
    }

    /// Reference frames nearest to `pose`'s center whose viewing direction is
    /// within `max_view_angle_deg` of it, closest first, at most `k`.
    pub fn spatial_neighbors(&self, pose: &PoseSE3, k: usize, max_view_angle_deg: f64) -> Vec<FrameId> {
        let c = pose.center();
        let dir = pose.viewing_direction();
        let max_angle = max_view_angle_deg.to_radians();
        let mut cands: Vec<(f64, FrameId)> = self
            .frames
            .values()
            .filter(|f| f.status == FrameStatus::Reference)
            .filter_map(|f| f.pose.as_ref().map(|p| (f.id, p)))
            .filter(|(_, p)| angle_between(&p.viewing_direction(), &dir) <= max_angle + 1e-12)
            .map(|(id, p)| ((p.center() - c).norm(), id))
            .collect();
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        cands.into_iter().take(k).map(|(_, id)| id).collect()
    }

    /// One 2D-3D correspondence per landmark reached through `matches`; when
    /// several matches land on the same landmark the smallest descriptor
    /// distance wins. Output is ordered by landmark id.
    pub fn lift_matches_to_3d(&self, query: &FeatureSet, matches: &[FrameMatch]) -> Vec<Correspondence2D3D> {
        let mut best: BTreeMap<LandmarkId, &FrameMatch> = BTreeMap::new();
        for m in matches {
            let Some(target) = self.frames.get(&m.target_frame) else { continue };
            if !(target.status.requires_pose()) {
                continue;
            }
            let Some(lid) = self.landmark_for(m.target_frame, m.target) else { continue };
            best.entry(lid)
                .and_modify(|cur| {
                    if m.distance < cur.distance {
                        *cur = m;
                    }
                })
                .or_insert(m);
        }
        best.into_iter()
            .map(|(lid, m)| Correspondence2D3D {
                feature: m.query,
                pixel: query.pixel(m.query),
                point_id: lid,
                world: self.landmarks[&lid].position,
            })
            .collect()
    }

    /// Adds accepted triangulations as augmented landmarks. A triangulation
    /// touching an already-bound feature is dropped. Returns the new ids.
    pub fn merge_new_landmarks(&mut self, frame: FrameId, accepted: Vec<NewLandmark>) -> Vec<LandmarkId> {
        let mut added = Vec::new();
        for nl in accepted {
            debug_assert!(nl.track.iter().any(|e| e.frame == frame));
            if self.check_track(&nl.track).is_err() {
                continue;
            }
            let id = self.next_landmark_id;
            self.next_landmark_id += 1;
            for e in &nl.track {
                self.feature_index.insert(*e, id);
            }
            self.landmarks.insert(id, Landmark { id, position: nl.position, origin: Origin::Augmented, track: nl.track });
            added.push(id);
        }
        added
    }

    /// Every reference frame and every reference landmark.
    pub fn freeze_mask_for_reference(&self) -> FreezeMask {
        FreezeMask {
            frozen_frames: self
                .frames
                .values()
                .filter(|f| f.status == FrameStatus::Reference)
                .map(|f| f.id)
                .collect(),
            frozen_landmarks: self
                .landmarks
                .values()
                .filter(|l| l.origin == Origin::Reference)
                .map(|l| l.id)
                .collect(),
            fixed_translation_axes: Vec::new(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MODEL_MAGIC} {MODEL_VERSION}");
        let _ = writeln!(s, "# frames {} landmarks {}", self.frames.len(), self.landmarks.len());
        let _ = writeln!(s, "next_landmark_id {}", self.next_landmark_id);
        for f in self.frames.values() {
            let k = &f.intrinsics;
            let _ = write!(
                s,
                "frame {} {:?} {} {:?} {:?} {:?} {:?} {} {} {} ",
                f.id,
                f.timestamp,
                f.status.as_str(),
                k.fx,
                k.fy,
                k.cx,
                k.cy,
                k.width,
                k.height,
                f.features.dim()
            );
            match &f.pose {
                Some(p) => {
                    let _ = writeln!(s, "{}", format_pose(p));
                }
                None => s.push_str("-\n"),
            }
            for i in 0..f.features.len() {
                let px = f.features.pixel(i);
                let _ = write!(s, "feature {} {} {:?} {:?}", f.id, i, px.x, px.y);
                for d in f.features.descriptor(i) {
                    let _ = write!(s, " {d:?}");
                }
                s.push('\n');
            }
        }
        for lm in self.landmarks.values() {
            let _ = writeln!(
                s,
                "landmark {} {} {:?} {:?} {:?}",
                lm.id,
                lm.origin.as_str(),
                lm.position.x,
                lm.position.y,
                lm.position.z
            );
            for e in &lm.track {
                let _ = writeln!(s, "obs {} {} {}", lm.id, e.frame, e.feature);
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let mut model = SfMModel::new();
        let mut stored_next: Option<LandmarkId> = None;
        let mut pending_tracks: Vec<(Landmark, usize)> = Vec::new();
        let mut header_seen = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let perr = |message: String| ModelError::Parse { line, message };
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let toks: Vec<&str> = trimmed.split_whitespace().collect();
            if !header_seen {
                if toks.first() != Some(&MODEL_MAGIC) || toks.len() != 2 {
                    return Err(perr(format!("expected `{MODEL_MAGIC} <version>` header")));
                }
                if toks[1] != MODEL_VERSION.to_string() {
                    return Err(ModelError::VersionMismatch { found: toks[1].to_string(), expected: MODEL_VERSION });
                }
                header_seen = true;
                continue;
            }
            let mut fields = Fields::new(&toks[1..], line);
            match toks[0] {
                "next_landmark_id" => stored_next = Some(fields.next()?),
                "frame" => {
                    let id: FrameId = fields.next()?;
                    let timestamp: f64 = fields.next()?;
                    let status: FrameStatus = fields.next()?;
                    let (fx, fy, cx, cy) = (fields.next()?, fields.next()?, fields.next()?, fields.next()?);
                    let (w, h): (u32, u32) = (fields.next()?, fields.next()?);
                    let dim: usize = fields.next()?;
                    let intrinsics =
                        CameraIntrinsics::new(fx, fy, cx, cy, w, h).map_err(|e| perr(e.to_string()))?;
                    let pose = if fields.peek() == Some("-") {
                        fields.skip();
                        None
                    } else {
                        Some(fields.pose()?)
                    };
                    fields.finish()?;
                    if status.requires_pose() && pose.is_none() {
                        return Err(perr(format!("status {} requires a pose", status.as_str())));
                    }
                    if model.frames.contains_key(&id) {
                        return Err(perr(format!("duplicate frame {id}")));
                    }
                    model.frames.insert(
                        id,
                        Frame { id, timestamp, intrinsics, pose, status, features: FeatureSet::new(dim) },
                    );
                }
                "feature" => {
                    let fid: FrameId = fields.next()?;
                    let index: usize = fields.next()?;
                    let (u, v): (f64, f64) = (fields.next()?, fields.next()?);
                    let frame = model
                        .frames
                        .get_mut(&fid)
                        .ok_or_else(|| perr(format!("feature refers to unknown frame {fid}")))?;
                    if index != frame.features.len() {
                        return Err(perr(format!("feature index {index} out of order")));
                    }
                    let dim = frame.features.dim();
                    let mut desc = Vec::with_capacity(dim);
                    for _ in 0..dim {
                        desc.push(fields.next::<f32>()?);
                    }
                    fields.finish()?;
                    frame.features.push(PixelPoint::new(u, v), &desc);
                }
                "landmark" => {
                    let id: LandmarkId = fields.next()?;
                    let origin = match fields.next::<String>()?.as_str() {
                        "reference" => Origin::Reference,
                        "augmented" => Origin::Augmented,
                        other => return Err(perr(format!("unknown landmark origin `{other}`"))),
                    };
                    let position = WorldPoint::new(fields.next()?, fields.next()?, fields.next()?);
                    fields.finish()?;
                    if pending_tracks.iter().any(|(l, _)| l.id == id) {
                        return Err(perr(format!("duplicate landmark {id}")));
                    }
                    pending_tracks.push((Landmark { id, position, origin, track: Vec::new() }, line));
                }
                "obs" => {
                    let id: LandmarkId = fields.next()?;
                    let frame: FrameId = fields.next()?;
                    let feature: u32 = fields.next()?;
                    fields.finish()?;
                    let (lm, _) = pending_tracks
                        .last_mut()
                        .filter(|(l, _)| l.id == id)
                        .ok_or_else(|| perr(format!("observation for landmark {id} outside its record")))?;
                    lm.track.push(TrackEntry { frame, feature });
                }
                other => return Err(perr(format!("unknown record `{other}`"))),
            }
        }
        if !header_seen {
            return Err(ModelError::Parse { line: 1, message: "missing header".into() });
        }
        // landmarks are validated after all frames are known
        for (lm, line) in pending_tracks {
            let id = lm.id;
            model
                .insert_landmark(lm)
                .map_err(|m| ModelError::Parse { line, message: format!("landmark {id}: {m}") })?;
        }
        if let Some(n) = stored_next {
            model.next_landmark_id = model.next_landmark_id.max(n);
        }
        Ok(model)
    }
}

pub(crate) fn format_pose(p: &PoseSE3) -> String {
    let q = p.rotation.quaternion();
    format!(
        "{:?} {:?} {:?} {:?} {:?} {:?} {:?}",
        q.w, q.i, q.j, q.k, p.translation.x, p.translation.y, p.translation.z
    )
}

/// Whitespace-separated field cursor with line-numbered errors.
pub(crate) struct Fields<'a> {
    toks: &'a [&'a str],
    pos: usize,
    line: usize,
}

impl<'a> Fields<'a> {
    pub(crate) fn new(toks: &'a [&'a str], line: usize) -> Self {
        Self { toks, pos: 0, line }
    }

    pub(crate) fn next<T: FromStr>(&mut self) -> Result<T, ModelError> {
        let tok = self.toks.get(self.pos).ok_or_else(|| ModelError::Parse {
            line: self.line,
            message: format!("missing field {}", self.pos + 1),
        })?;
        self.pos += 1;
        tok.parse().map_err(|_| ModelError::Parse { line: self.line, message: format!("bad field `{tok}`") })
    }

    pub(crate) fn peek(&self) -> Option<&'a str> {
        self.toks.get(self.pos).copied()
    }

    pub(crate) fn skip(&mut self) {
        self.pos += 1;
    }

    /// Seven numbers `qw qx qy qz tx ty tz`. The quaternion is stored as
    /// written so that round trips are exact.
    pub(crate) fn pose(&mut self) -> Result<PoseSE3, ModelError> {
        let (w, x, y, z): (f64, f64, f64, f64) = (self.next()?, self.next()?, self.next()?, self.next()?);
        let t = Vector3::new(self.next()?, self.next()?, self.next()?);
        let q = Quaternion::new(w, x, y, z);
        if ((q.norm() - 1.0).abs()) > 1e-6 {
            return Err(ModelError::Parse { line: self.line, message: "quaternion is not unit".into() });
        }
        Ok(PoseSE3::new(UnitQuaternion::new_unchecked(q), t))
    }

    pub(crate) fn finish(&self) -> Result<(), ModelError> {
        if self.pos != self.toks.len() {
            return Err(ModelError::Parse {
                line: self.line,
                message: format!("{} unexpected trailing fields", self.toks.len() - self.pos),
            });
        }
        Ok(())
    }
}

/// Ground-truth annotation of one sequence frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthFrame {
    pub timestamp: f64,
    pub center: WorldPoint,
    pub pose: Option<PoseSE3>,
}

/// A tagged unique-object point with its outward surface normal; used by the
/// oracle anchor detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaggedPoint {
    pub position: WorldPoint,
    pub normal: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvaluationGroundTruth {
    pub frames: BTreeMap<FrameId, GroundTruthFrame>,
    pub unique_object: Vec<TaggedPoint>,
    /// Maximum viewing distance used by the scene's visibility model.
    pub max_range: Option<f64>,
}

impl EvaluationGroundTruth {
    pub fn insert_pose(&mut self, id: FrameId, timestamp: f64, pose: PoseSE3) {
        self.frames.insert(id, GroundTruthFrame { timestamp, center: pose.center(), pose: Some(pose) });
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{GT_MAGIC} {GT_VERSION}");
        let _ = writeln!(s, "# frame <id> <timestamp> <qw qx qy qz tx ty tz | center cx cy cz>");
        if let Some(r) = self.max_range {
            let _ = writeln!(s, "max_range {r:?}");
        }
        for (id, g) in &self.frames {
            match &g.pose {
                Some(p) => {
                    let _ = writeln!(s, "frame {} {:?} {}", id, g.timestamp, format_pose(p));
                }
                None => {
                    let _ = writeln!(
                        s,
                        "frame {} {:?} center {:?} {:?} {:?}",
                        id, g.timestamp, g.center.x, g.center.y, g.center.z
                    );
                }
            }
        }
        for t in &self.unique_object {
            let _ = writeln!(
                s,
                "unique {:?} {:?} {:?} {:?} {:?} {:?}",
                t.position.x, t.position.y, t.position.z, t.normal.x, t.normal.y, t.normal.z
            );
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let mut gt = EvaluationGroundTruth::default();
        let mut header_seen = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let toks: Vec<&str> = trimmed.split_whitespace().collect();
            if !header_seen {
                if toks.first() != Some(&GT_MAGIC) || toks.len() != 2 {
                    return Err(ModelError::Parse { line, message: format!("expected `{GT_MAGIC} <version>` header") });
                }
                if toks[1] != GT_VERSION.to_string() {
                    return Err(ModelError::VersionMismatch { found: toks[1].to_string(), expected: GT_VERSION });
                }
                header_seen = true;
                continue;
            }
            let mut f = Fields::new(&toks[1..], line);
            match toks[0] {
                "max_range" => {
                    gt.max_range = Some(f.next()?);
                    f.finish()?;
                }
                "frame" => {
                    let id: FrameId = f.next()?;
                    let ts: f64 = f.next()?;
                    if f.peek() == Some("center") {
                        f.skip();
                        let c = WorldPoint::new(f.next()?, f.next()?, f.next()?);
                        f.finish()?;
                        gt.frames.insert(id, GroundTruthFrame { timestamp: ts, center: c, pose: None });
                    } else {
                        let pose = f.pose()?;
                        f.finish()?;
                        gt.insert_pose(id, ts, pose);
                    }
                }
                "unique" => {
                    let position = WorldPoint::new(f.next()?, f.next()?, f.next()?);
                    let normal = Vector3::new(f.next()?, f.next()?, f.next()?);
                    f.finish()?;
                    gt.unique_object.push(TaggedPoint { position, normal });
                }
                other => return Err(ModelError::Parse { line, message: format!("unknown record `{other}`") }),
            }
        }
        if !header_seen {
            return Err(ModelError::Parse { line: 1, message: "missing header".into() });
        }
        Ok(gt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

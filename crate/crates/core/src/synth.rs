//! Synthetic annular chamber: landmarks on the outer part of a torus tube,
//! database and query cameras travelling around the ring inside the tube.
//!
//! Everything is driven by counter-based RNG streams derived from the seed,
//! so frames can be generated in any order with identical results.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::baselines::onthefly_sfm;
use crate::geom::{CameraIntrinsics, PixelPoint, PoseSE3, WorldPoint};
use crate::matching::FeatureSet;
use crate::model::{
    EvaluationGroundTruth, Frame, FrameId, FrameStatus, Landmark, LandmarkId, Origin, SfMModel,
    TaggedPoint, TrackEntry,
};
use crate::pipeline::PipelineConfig;
use crate::solvers::{triangulate, TriangulationConfig};

/// Query frame ids start here so they never collide with database ids.
pub const QUERY_ID_OFFSET: FrameId = 100_000;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid scene config: {0}")]
    ConfigInvalid(String),
    #[error("reference reconstruction failed: {0}")]
    ReconstructionFailure(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TexturePoorArc {
    pub start_deg: f64,
    pub end_deg: f64,
    pub density: f64,
}

impl TexturePoorArc {
    fn contains(&self, theta_deg: f64) -> bool {
        let t = theta_deg.rem_euclid(360.0);
        if self.start_deg <= self.end_deg {
            t >= self.start_deg && t < self.end_deg
        } else {
            t >= self.start_deg || t < self.end_deg
        }
    }
}

/// Stationary tilt of the query camera: the ring position holds while the
/// pitch rises to `peak_pitch_deg` and returns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltExcursion {
    pub start_frame: usize,
    pub length: usize,
    pub peak_pitch_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub seed: u64,
    pub major_radius: f64,
    pub minor_radius: f64,
    pub landmark_count: usize,
    /// Tube angle range populated with landmarks; 0° faces away from the ring axis.
    pub tube_min_deg: f64,
    pub tube_max_deg: f64,
    pub aliased_groups: usize,
    pub group_size: usize,
    pub texture_poor: Vec<TexturePoorArc>,
    pub unique_count: usize,
    pub unique_angle_deg: f64,
    pub unique_spread_deg: f64,
    pub unique_tube_deg: f64,
    pub descriptor_dim: usize,
    pub descriptor_noise: f64,
    pub pixel_noise: f64,
    pub outlier_rate: f64,
    pub junk_features: usize,
    pub db_frames: usize,
    pub db_pitches_deg: Vec<f64>,
    pub query_frames: usize,
    pub query_start_deg: f64,
    pub query_sweep_deg: f64,
    pub query_pitch_deg: f64,
    pub query_radius_offset: f64,
    pub query_height: f64,
    pub query_jitter: f64,
    pub tilt: Option<TiltExcursion>,
    /// Query frame ranges `(start, length)` that see nothing but clutter.
    pub occlusion_gaps: Vec<(usize, usize)>,
    pub camera_inset: f64,
    pub max_range: f64,
    pub focal: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            major_radius: 100.0,
            minor_radius: 25.0,
            landmark_count: 4000,
            tube_min_deg: -80.0,
            tube_max_deg: 80.0,
            aliased_groups: 300,
            group_size: 4,
            texture_poor: vec![TexturePoorArc { start_deg: 150.0, end_deg: 240.0, density: 0.15 }],
            unique_count: 30,
            unique_angle_deg: 12.0,
            unique_spread_deg: 3.0,
            unique_tube_deg: 10.0,
            descriptor_dim: 32,
            descriptor_noise: 0.05,
            pixel_noise: 0.5,
            outlier_rate: 0.05,
            junk_features: 10,
            db_frames: 200,
            db_pitches_deg: vec![25.0, 35.0],
            query_frames: 320,
            query_start_deg: 0.0,
            query_sweep_deg: 300.0,
            query_pitch_deg: -20.0,
            query_radius_offset: 2.0,
            query_height: 1.0,
            query_jitter: 1.0,
            tilt: Some(TiltExcursion { start_frame: 80, length: 16, peak_pitch_deg: 70.0 }),
            occlusion_gaps: Vec::new(),
            camera_inset: 10.0,
            max_range: 80.0,
            focal: 300.0,
            width: 640,
            height: 360,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::ConfigInvalid(m.to_string()));
        if !(self.major_radius > self.minor_radius && self.minor_radius > 0.0) {
            return bad("need major_radius > minor_radius > 0");
        }
        if !(self.camera_inset >= 0.0 && self.camera_inset + self.query_radius_offset.abs() < self.minor_radius) {
            return bad("cameras must stay inside the tube");
        }
        if self.tube_min_deg >= self.tube_max_deg {
            return bad("tube_min_deg must be below tube_max_deg");
        }
        for a in &self.texture_poor {
            if !(0.0..=1.0).contains(&a.density) {
                return bad("texture-poor density must lie in [0, 1]");
            }
            if !(0.0..360.0).contains(&a.start_deg) || !(0.0..360.0).contains(&a.end_deg) {
                return bad("texture-poor angles must lie in [0, 360)");
            }
        }
        if !(0.0..360.0).contains(&self.unique_angle_deg) {
            return bad("unique_angle must lie in [0, 360)");
        }
        if self.group_size < 2 && self.aliased_groups > 0 {
            return bad("aliased groups need at least two members");
        }
        if self.aliased_groups * self.group_size > self.landmark_count {
            return bad("aliased groups exceed the landmark count");
        }
        if self.descriptor_dim == 0 {
            return bad("descriptor_dim must be positive");
        }
        if !(self.descriptor_noise >= 0.0 && self.pixel_noise >= 0.0) {
            return bad("noise levels must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.outlier_rate) {
            return bad("outlier_rate must lie in [0, 1]");
        }
        if self.db_frames == 0 || self.db_pitches_deg.is_empty() || self.query_frames == 0 {
            return bad("frame counts must be positive");
        }
        if let Some(t) = &self.tilt {
            if t.start_frame + t.length > self.query_frames {
                return bad("tilt excursion runs past the query sequence");
            }
        }
        for &(s, l) in &self.occlusion_gaps {
            if s + l > self.query_frames {
                return bad("occlusion gap runs past the query sequence");
            }
        }
        if !(self.max_range > 0.0 && self.focal > 0.0) || self.width == 0 || self.height == 0 {
            return bad("camera parameters must be positive");
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::new(self.focal, self.focal, self.width as f64 / 2.0, self.height as f64 / 2.0, self.width, self.height)
            .expect("validated intrinsics")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LandmarkKind {
    Plain,
    Aliased(u32),
    Unique,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtLandmark {
    pub id: LandmarkId,
    pub position: WorldPoint,
    /// Surface normal pointing into the tube.
    pub normal: Vector3<f64>,
    pub ring_deg: f64,
    pub kind: LandmarkKind,
    descriptor: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthFrame {
    pub id: FrameId,
    pub timestamp: f64,
    pub pose: PoseSE3,
    pub features: FeatureSet,
    /// Landmark that produced each feature; `None` for clutter.
    pub truth: Vec<Option<LandmarkId>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub config: SceneConfig,
    pub intrinsics: CameraIntrinsics,
    pub landmarks: Vec<GtLandmark>,
    pub database: Vec<SynthFrame>,
    pub query: Vec<SynthFrame>,
    descriptors: Vec<Vec<f32>>,
}

fn torus_point(cfg: &SceneConfig, theta: f64, phi: f64) -> (WorldPoint, Vector3<f64>) {
    let rr = cfg.major_radius + cfg.minor_radius * phi.cos();
    let p = WorldPoint::new(rr * theta.cos(), rr * theta.sin(), cfg.minor_radius * phi.sin());
    let n = -Vector3::new(phi.cos() * theta.cos(), phi.cos() * theta.sin(), phi.sin());
    (p, n)
}

/// Camera inside the tube at ring angle `theta`, looking along
/// `yaw`/`pitch` relative to the outward radial direction.
pub fn chamber_camera(radius: f64, height: f64, theta: f64, yaw: f64, pitch: f64) -> PoseSE3 {
    let center = WorldPoint::new(radius * theta.cos(), radius * theta.sin(), height);
    let radial = Vector3::new(theta.cos(), theta.sin(), 0.0);
    let tangent = Vector3::new(-theta.sin(), theta.cos(), 0.0);
    let up = Vector3::z();
    let fwd = pitch.cos() * (yaw.cos() * radial + yaw.sin() * tangent) + pitch.sin() * up;
    let x = fwd.cross(&up).normalize();
    let y = fwd.cross(&x);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), fwd.transpose()]);
    let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    PoseSE3::from_center(rot, &center)
}

/// Whether a surface point with the given inward normal is in front of the
/// camera, inside the image, within range and facing the camera.
pub fn frustum_contains(
    intr: &CameraIntrinsics,
    pose: &PoseSE3,
    point: &WorldPoint,
    normal: &Vector3<f64>,
    max_range: f64,
) -> Option<PixelPoint> {
    let center = pose.center();
    let d = point - center;
    if d.norm() > max_range || normal.dot(&(-d)) <= 0.0 {
        return None;
    }
    let xc = pose.transform_point(point);
    if xc.z <= 1.0 {
        return None;
    }
    let px = intr.project_camera_point(&xc)?;
    intr.contains(&px).then_some(px)
}

fn inside_tube(cfg: &SceneConfig, p: &WorldPoint) -> bool {
    let rho = (p.x * p.x + p.y * p.y).sqrt();
    let dr = rho - cfg.major_radius;
    dr * dr + p.z * p.z <= cfg.minor_radius * cfg.minor_radius * (1.0 + 1e-9)
}

fn line_of_sight(cfg: &SceneConfig, from: &WorldPoint, to: &WorldPoint) -> bool {
    // the end point lies on the wall; stop short of it
    (1..12).all(|k| {
        let s = k as f64 / 12.0 * 0.97;
        inside_tube(cfg, &(from + (to - from) * s))
    })
}

fn frame_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.iter().map(|x| (x / n) as f32).collect();
        }
    }
}

fn noisy(base: &[f32], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    if sigma == 0.0 {
        return base.to_vec();
    }
    let v: Vec<f64> = base.iter().map(|b| *b as f64 + sigma * rng.sample::<f64, _>(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

struct CameraPlan {
    id: FrameId,
    timestamp: f64,
    pose: PoseSE3,
    occluded: bool,
}

fn database_plan(cfg: &SceneConfig) -> Vec<CameraPlan> {
    let radius = cfg.major_radius - cfg.camera_inset;
    let mut out = Vec::new();
    for (j, pitch) in cfg.db_pitches_deg.iter().enumerate() {
        let offset = 360.0 / cfg.db_frames as f64 * j as f64 / cfg.db_pitches_deg.len() as f64;
        for i in 0..cfg.db_frames {
            let theta = (offset + 360.0 * i as f64 / cfg.db_frames as f64).to_radians();
            out.push(CameraPlan {
                id: (j * cfg.db_frames + i) as FrameId,
                timestamp: (j * 100_000 + i) as f64,
                pose: chamber_camera(radius, 0.0, theta, 0.0, pitch.to_radians()),
                occluded: false,
            });
        }
    }
    out
}

fn query_plan(cfg: &SceneConfig) -> Vec<CameraPlan> {
    let n = cfg.query_frames;
    let in_tilt = |k: usize| cfg.tilt.is_some_and(|t| k >= t.start_frame && k < t.start_frame + t.length);
    let moving = (0..n).filter(|&k| !in_tilt(k)).count().max(2);
    let step = cfg.query_sweep_deg / (moving - 1) as f64;
    let mut phases = frame_rng(cfg.seed, u64::MAX);
    let ph: Vec<f64> = (0..4).map(|_| phases.random_range(0.0..2.0 * PI)).collect();
    let mut progress = 0usize;
    let mut out = Vec::new();
    for k in 0..n {
        let tilt_pitch = match cfg.tilt {
            Some(t) if in_tilt(k) => {
                let s = (k - t.start_frame + 1) as f64 / (t.length + 1) as f64;
                (t.peak_pitch_deg - cfg.query_pitch_deg) * (PI * s).sin()
            }
            _ => 0.0,
        };
        let theta_deg = cfg.query_start_deg + step * progress as f64;
        if !in_tilt(k) {
            progress += 1;
        }
        let u = theta_deg.to_radians();
        let j = cfg.query_jitter;
        let yaw = (2.0 * j * (3.0 * u + ph[0]).sin()).to_radians();
        let pitch = (cfg.query_pitch_deg + tilt_pitch + 2.0 * j * (5.0 * u + ph[1]).sin()).to_radians();
        let radius = cfg.major_radius - cfg.camera_inset - cfg.query_radius_offset + j * (4.0 * u + ph[2]).sin();
        let height = cfg.query_height + j * (7.0 * u + ph[3]).sin();
        let occluded = cfg.occlusion_gaps.iter().any(|&(s, l)| k >= s && k < s + l);
        out.push(CameraPlan {
            id: QUERY_ID_OFFSET + k as FrameId,
            timestamp: k as f64,
            pose: chamber_camera(radius, height, u, yaw, pitch),
            occluded,
        });
    }
    out
}

/// Ring angle of a point, degrees in [0, 360).
fn ring_deg(p: &WorldPoint) -> f64 {
    p.y.atan2(p.x).to_degrees().rem_euclid(360.0)
}

fn generate_landmarks(cfg: &SceneConfig) -> (Vec<GtLandmark>, Vec<Vec<f32>>) {
    let mut rng = frame_rng(cfg.seed, 0);
    let (pmin, pmax) = (cfg.tube_min_deg.to_radians(), cfg.tube_max_deg.to_radians());
    // area-weighted tube angle
    let sample_phi = |rng: &mut ChaCha8Rng| loop {
        let phi = rng.random_range(pmin..pmax);
        let w = (cfg.major_radius + cfg.minor_radius * phi.cos()) / (cfg.major_radius + cfg.minor_radius);
        if rng.random::<f64>() < w {
            return phi;
        }
    };
    let mut descriptors = Vec::new();
    let mut raw: Vec<(WorldPoint, Vector3<f64>, LandmarkKind, usize)> = Vec::new();
    for g in 0..cfg.aliased_groups {
        let theta0 = rng.random_range(0.0..2.0 * PI / cfg.group_size as f64);
        let phi = sample_phi(&mut rng);
        descriptors.push(random_unit(&mut rng, cfg.descriptor_dim));
        for m in 0..cfg.group_size {
            let theta = theta0 + 2.0 * PI * m as f64 / cfg.group_size as f64;
            let (p, n) = torus_point(cfg, theta, phi);
            raw.push((p, n, LandmarkKind::Aliased(g as u32), descriptors.len() - 1));
        }
    }
    while raw.len() < cfg.landmark_count {
        let theta = rng.random_range(0.0..2.0 * PI);
        let phi = sample_phi(&mut rng);
        let (p, n) = torus_point(cfg, theta, phi);
        descriptors.push(random_unit(&mut rng, cfg.descriptor_dim));
        raw.push((p, n, LandmarkKind::Plain, descriptors.len() - 1));
    }
    for _ in 0..cfg.unique_count {
        let theta = (cfg.unique_angle_deg + rng.random_range(-cfg.unique_spread_deg..=cfg.unique_spread_deg)).to_radians();
        let phi = (cfg.unique_tube_deg + rng.random_range(-cfg.unique_spread_deg..=cfg.unique_spread_deg)).to_radians();
        let (p, n) = torus_point(cfg, theta, phi);
        descriptors.push(random_unit(&mut rng, cfg.descriptor_dim));
        raw.push((p, n, LandmarkKind::Unique, descriptors.len() - 1));
    }
    let mut out = Vec::new();
    for (p, n, kind, d) in raw {
        let ring = ring_deg(&p);
        let keep = match kind {
            LandmarkKind::Unique => true,
            _ => {
                let density = cfg.texture_poor.iter().filter(|a| a.contains(ring)).map(|a| a.density).fold(1.0, f64::min);
                // always draw so the stream does not depend on the arcs
                let u: f64 = rng.random();
                u < density
            }
        };
        if keep {
            out.push(GtLandmark { id: out.len() as LandmarkId, position: p, normal: n, ring_deg: ring, kind, descriptor: d });
        }
    }
    (out, descriptors)
}

fn render(cfg: &SceneConfig, intr: &CameraIntrinsics, landmarks: &[GtLandmark], descriptors: &[Vec<f32>], plan: &CameraPlan) -> SynthFrame {
    let mut rng = frame_rng(cfg.seed, plan.id as u64 + 1);
    let center = plan.pose.center();
    let pixel_noise = Normal::new(0.0, cfg.pixel_noise.max(0.0)).expect("finite sigma");
    let mut items: Vec<(PixelPoint, Vec<f32>, Option<LandmarkId>)> = Vec::new();
    if !plan.occluded {
        for lm in landmarks {
            let Some(px) = frustum_contains(intr, &plan.pose, &lm.position, &lm.normal, cfg.max_range) else { continue };
            if !line_of_sight(cfg, &center, &lm.position) {
                continue;
            }
            let noisy_px = if cfg.pixel_noise > 0.0 {
                PixelPoint::new(px.x + rng.sample(pixel_noise), px.y + rng.sample(pixel_noise))
            } else {
                px
            };
            let base = if cfg.outlier_rate > 0.0 && rng.random::<f64>() < cfg.outlier_rate {
                let other = rng.random_range(0..descriptors.len());
                &descriptors[other]
            } else {
                &descriptors[lm.descriptor]
            };
            let d = noisy(base, cfg.descriptor_noise, &mut rng);
            if intr.contains(&noisy_px) {
                items.push((noisy_px, d, Some(lm.id)));
            }
        }
    }
    let junk = if plan.occluded { cfg.junk_features * 2 } else { cfg.junk_features };
    for _ in 0..junk {
        let px = PixelPoint::new(rng.random_range(0.0..intr.width as f64), rng.random_range(0.0..intr.height as f64));
        items.push((px, random_unit(&mut rng, cfg.descriptor_dim), None));
    }
    items.shuffle(&mut rng);
    let mut features = FeatureSet::new(cfg.descriptor_dim);
    let mut truth = Vec::with_capacity(items.len());
    for (px, d, t) in items {
        features.push(px, &d);
        truth.push(t);
    }
    SynthFrame { id: plan.id, timestamp: plan.timestamp, pose: plan.pose, features, truth }
}

/// Builds the full scene. Deterministic in the config.
pub fn generate_scene(cfg: &SceneConfig) -> Result<SyntheticDataset, SynthError> {
    cfg.validate()?;
    let intr = cfg.intrinsics();
    let (landmarks, descriptors) = generate_landmarks(cfg);
    let render_all = |plan: Vec<CameraPlan>| -> Vec<SynthFrame> {
        plan.par_iter().map(|p| render(cfg, &intr, &landmarks, &descriptors, p)).collect()
    };
    let database = render_all(database_plan(cfg));
    let query = render_all(query_plan(cfg));
    Ok(SyntheticDataset { config: cfg.clone(), intrinsics: intr, landmarks, database, query, descriptors })
}

impl SyntheticDataset {
    pub fn unique_object(&self) -> Vec<TaggedPoint> {
        self.landmarks
            .iter()
            .filter(|l| l.kind == LandmarkKind::Unique)
            .map(|l| TaggedPoint { position: l.position, normal: l.normal })
            .collect()
    }

    /// Database frames with ground-truth poses and every landmark observed
    /// at least twice, with its ground-truth position and track.
    pub fn database_model(&self) -> SfMModel {
        let mut model = SfMModel::new();
        let mut tracks: BTreeMap<LandmarkId, Vec<TrackEntry>> = BTreeMap::new();
        for f in &self.database {
            for (i, t) in f.truth.iter().enumerate() {
                if let Some(l) = t {
                    tracks.entry(*l).or_default().push(TrackEntry { frame: f.id, feature: i as u32 });
                }
            }
            model.insert_frame(Frame {
                id: f.id,
                timestamp: f.timestamp,
                intrinsics: self.intrinsics,
                pose: Some(f.pose),
                status: FrameStatus::Reference,
                features: f.features.clone(),
            });
        }
        for (id, track) in tracks {
            if track.len() < 2 {
                continue;
            }
            let position = self.landmarks[id as usize].position;
            model
                .insert_landmark(Landmark { id, position, origin: Origin::Reference, track })
                .expect("ground-truth tracks are consistent");
        }
        model.reserve_landmark_ids(self.landmarks.len() as LandmarkId);
        model
    }

    /// Query frames without poses, ready for localization.
    pub fn query_sequence(&self) -> SfMModel {
        let mut model = SfMModel::new();
        for f in &self.query {
            model.insert_frame(Frame {
                id: f.id,
                timestamp: f.timestamp,
                intrinsics: self.intrinsics,
                pose: None,
                status: FrameStatus::Pending,
                features: f.features.clone(),
            });
        }
        model
    }

    /// Ground truth for the query frames plus the tagged unique object.
    pub fn ground_truth(&self) -> EvaluationGroundTruth {
        let mut gt = EvaluationGroundTruth::default();
        for f in &self.query {
            gt.insert_pose(f.id, f.timestamp, f.pose);
        }
        gt.unique_object = self.unique_object();
        gt.max_range = Some(self.config.max_range);
        gt
    }

    /// Ground truth for the database frames.
    pub fn database_ground_truth(&self) -> EvaluationGroundTruth {
        let mut gt = EvaluationGroundTruth::default();
        for f in &self.database {
            gt.insert_pose(f.id, f.timestamp, f.pose);
        }
        gt
    }

    pub fn frame(&self, id: FrameId) -> Option<&SynthFrame> {
        if id >= QUERY_ID_OFFSET {
            self.query.get((id - QUERY_ID_OFFSET) as usize)
        } else {
            self.database.get(id as usize)
        }
    }
}

/// Fraction of the tagged points a camera would see.
pub fn unique_visible_fraction(
    intr: &CameraIntrinsics,
    pose: &PoseSE3,
    unique: &[TaggedPoint],
    max_range: f64,
) -> f64 {
    if unique.is_empty() {
        return 0.0;
    }
    let seen = unique.iter().filter(|t| frustum_contains(intr, pose, &t.position, &t.normal, max_range).is_some()).count();
    seen as f64 / unique.len() as f64
}

/// Anchor labels: a frame is labeled when it sees at least half of the
/// unique object.
pub fn annotate_anchor_zone(dataset: &SyntheticDataset) -> BTreeMap<FrameId, bool> {
    let unique = dataset.unique_object();
    dataset
        .database
        .iter()
        .chain(&dataset.query)
        .map(|f| (f.id, unique_visible_fraction(&dataset.intrinsics, &f.pose, &unique, dataset.config.max_range) >= 0.5))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceMode {
    /// Ground-truth database poses, points triangulated from the noisy observations.
    Oracle,
    /// Query-free incremental reconstruction of the database frames aligned
    /// to their ground-truth centers.
    Reconstructed,
}

/// Turns a ground-truth database model into a reference model.
pub fn build_reference_model(
    database: &SfMModel,
    mode: ReferenceMode,
    cfg: &PipelineConfig,
) -> Result<SfMModel, SynthError> {
    match mode {
        ReferenceMode::Oracle => Ok(oracle_reference(database, &cfg.triangulation)),
        ReferenceMode::Reconstructed => reconstructed_reference(database, cfg),
    }
}

fn oracle_reference(database: &SfMModel, tri: &TriangulationConfig) -> SfMModel {
    let mut model = SfMModel::new();
    for f in database.frames.values() {
        let mut f = f.clone();
        f.status = FrameStatus::Reference;
        model.insert_frame(f);
    }
    type Solved = (LandmarkId, Option<(WorldPoint, Vec<TrackEntry>)>);
    let solved: Vec<Solved> = database
        .landmarks()
        .values()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|lm| {
            let frames: Vec<&Frame> = lm.track.iter().map(|e| &database.frames[&e.frame]).collect();
            let poses: Vec<PoseSE3> = frames.iter().map(|f| f.pose.expect("database frames are posed")).collect();
            let pixels: Vec<PixelPoint> = lm.track.iter().zip(&frames).map(|(e, f)| f.features.pixel(e.feature as usize)).collect();
            let intr = frames[0].intrinsics;
            (lm.id, triangulate(&intr, &poses, &pixels, tri).ok().map(|p| (p, lm.track.clone())))
        })
        .collect();
    for (id, sol) in solved {
        if let Some((position, track)) = sol {
            model
                .insert_landmark(Landmark { id, position, origin: Origin::Reference, track })
                .expect("tracks copied from a consistent model");
        }
    }
    model.reserve_landmark_ids(database.next_landmark_id());
    model
}

fn reconstructed_reference(database: &SfMModel, cfg: &PipelineConfig) -> Result<SfMModel, SynthError> {
    let mut sequence = SfMModel::new();
    let mut centers = BTreeMap::new();
    for f in database.frames.values() {
        if let Some(p) = f.pose {
            centers.insert(f.id, p.center());
        }
        let mut f = f.clone();
        f.pose = None;
        f.status = FrameStatus::Pending;
        sequence.insert_frame(f);
    }
    let (mut model, _) = onthefly_sfm(&sequence, cfg, Some(&centers)).map_err(|e| SynthError::ReconstructionFailure(e.to_string()))?;
    let unposed: Vec<FrameId> = model.frames.values().filter(|f| f.pose.is_none()).map(|f| f.id).collect();
    for id in unposed {
        model.frames.remove(&id);
    }
    for f in model.frames.values_mut() {
        f.status = FrameStatus::Reference;
    }
    Ok(model.relabel_as_reference())
}

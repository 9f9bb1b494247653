//! Localization metrics, trajectory and point cloud export, and the
//! method comparison table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::geom::PoseSE3;
use crate::model::{format_pose, EvaluationGroundTruth, Fields, FrameId, FrameStatus, SfMModel};

const TRAJECTORY_MAGIC: &str = "# vidloc trajectory 1";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no frame of the result has ground truth")]
    EmptyIntersection,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-frame outcome of a localization method.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub id: FrameId,
    pub timestamp: f64,
    pub status: FrameStatus,
    pub pose: Option<PoseSE3>,
    pub candidates: usize,
    pub correspondences: usize,
    pub inliers: usize,
}

impl FrameRecord {
    pub fn pending(id: FrameId, timestamp: f64) -> Self {
        Self { id, timestamp, status: FrameStatus::Pending, pose: None, candidates: 0, correspondences: 0, inliers: 0 }
    }

    pub fn is_registered(&self) -> bool {
        self.pose.is_some() && self.status.is_localized()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub method: String,
    pub frames: BTreeMap<FrameId, FrameRecord>,
}

impl Trajectory {
    pub fn new(method: impl Into<String>) -> Self {
        Self { method: method.into(), frames: BTreeMap::new() }
    }

    pub fn registered(&self) -> usize {
        self.frames.values().filter(|f| f.is_registered()).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub method: String,
    pub registered: usize,
    pub total: usize,
    /// Registered over all frames, percent.
    pub fraction: f64,
    /// Registered frames that have ground truth.
    pub evaluated: usize,
    pub mae: Option<f64>,
    pub median: Option<f64>,
    pub mean_rotation_deg: Option<f64>,
    /// Camera center error of every evaluated frame.
    pub per_frame: BTreeMap<FrameId, f64>,
}

/// Middle order statistic; mean of the two central values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Center-error statistics over registered frames that have ground truth;
/// the fraction counts every frame of the result.
pub fn compute_metrics(result: &Trajectory, gt: &EvaluationGroundTruth) -> Result<EvaluationReport, EvalError> {
    if !result.frames.keys().any(|id| gt.frames.contains_key(id)) {
        return Err(EvalError::EmptyIntersection);
    }
    let total = result.frames.len();
    let registered = result.registered();
    let mut per_frame = BTreeMap::new();
    let mut rot = Vec::new();
    for rec in result.frames.values().filter(|f| f.is_registered()) {
        let Some(truth) = gt.frames.get(&rec.id) else { continue };
        let pose = rec.pose.expect("registered frames carry a pose");
        per_frame.insert(rec.id, (pose.center() - truth.center).norm());
        if let Some(tp) = &truth.pose {
            rot.push(pose.rotation_angle_to(tp).to_degrees());
        }
    }
    let errors: Vec<f64> = per_frame.values().copied().collect();
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok(EvaluationReport {
        method: result.method.clone(),
        registered,
        total,
        fraction: if total == 0 { 0.0 } else { 100.0 * registered as f64 / total as f64 },
        evaluated: errors.len(),
        mae: mean(&errors),
        median: median(&errors),
        mean_rotation_deg: mean(&rot),
        per_frame,
    })
}

/// `1234567` → `1,234,567`.
pub fn format_count(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

pub fn format_cameras(report: &EvaluationReport) -> String {
    format!("{} ({:.1}%)", format_count(report.registered), report.fraction)
}

/// Aligned text table, one row per report in the given order.
pub fn compare_methods(reports: &[EvaluationReport]) -> String {
    let opt = |v: Option<f64>, prec: usize| v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"));
    let header = ["Method", "#Cameras", "MAE", "Median error", "Rot. error (deg)"];
    let rows: Vec<[String; 5]> = reports
        .iter()
        .map(|r| {
            [
                r.method.clone(),
                format_cameras(r),
                opt(r.mae, 3),
                opt(r.median, 3),
                opt(r.mean_rotation_deg, 2),
            ]
        })
        .collect();
    let mut width = header.map(str::len);
    for row in &rows {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |cells: &[&str], out: &mut String| {
        let mut s = format!("{:<w$}", cells[0], w = width[0]);
        for (c, w) in cells.iter().zip(width).skip(1) {
            let _ = write!(s, "  {c:>w$}");
        }
        out.push_str(s.trim_end());
        out.push('\n');
    };
    line(&header, &mut out);
    let rule: usize = width.iter().sum::<usize>() + 2 * (width.len() - 1);
    out.push_str(&"-".repeat(rule));
    out.push('\n');
    for row in &rows {
        let cells: Vec<&str> = row.iter().map(String::as_str).collect();
        line(&cells, &mut out);
    }
    out
}

fn center_error(rec: &FrameRecord, gt: Option<&EvaluationGroundTruth>) -> Option<f64> {
    let truth = gt?.frames.get(&rec.id)?;
    rec.is_registered().then(|| (rec.pose.unwrap().center() - truth.center).norm())
}

/// One line per frame: id, timestamp, pose (or `-`), status and the center
/// error when ground truth is known.
pub fn trajectory_to_text(result: &Trajectory, gt: Option<&EvaluationGroundTruth>) -> String {
    let mut out = format!("{TRAJECTORY_MAGIC}\n# method {}\n# id timestamp qw qx qy qz tx ty tz status error\n", result.method);
    for rec in result.frames.values() {
        let pose = match (&rec.pose, rec.is_registered()) {
            (Some(p), true) => format_pose(p),
            _ => "-".to_string(),
        };
        let err = center_error(rec, gt).map_or_else(|| "-".to_string(), |e| format!("{e:?}"));
        let _ = writeln!(out, "{} {:?} {} {} {}", rec.id, rec.timestamp, pose, rec.status.as_str(), err);
    }
    out
}

pub fn export_trajectory(result: &Trajectory, gt: Option<&EvaluationGroundTruth>, path: impl AsRef<Path>) -> Result<(), EvalError> {
    fs::write(path, trajectory_to_text(result, gt))?;
    Ok(())
}

pub fn parse_trajectory(text: &str) -> Result<Trajectory, EvalError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == TRAJECTORY_MAGIC => {}
        _ => return Err(EvalError::Parse { line: 1, message: "missing trajectory header".into() }),
    }
    let mut traj = Trajectory::default();
    for (i, raw) in lines {
        let line = i + 1;
        if let Some(rest) = raw.strip_prefix("# method ") {
            traj.method = rest.trim().to_string();
            continue;
        }
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        let mut f = Fields::new(&toks, line);
        let conv = |e: crate::model::ModelError| EvalError::Parse { line, message: e.to_string() };
        let id: FrameId = f.next().map_err(conv)?;
        let timestamp: f64 = f.next().map_err(conv)?;
        let pose = if f.peek() == Some("-") {
            f.skip();
            None
        } else {
            Some(f.pose().map_err(conv)?)
        };
        let status: FrameStatus = f.next().map_err(conv)?;
        f.skip();
        f.finish().map_err(conv)?;
        let rec = FrameRecord { id, timestamp, status, pose, candidates: 0, correspondences: 0, inliers: 0 };
        if traj.frames.insert(id, rec).is_some() {
            return Err(EvalError::Parse { line, message: format!("duplicate frame {id}") });
        }
    }
    Ok(traj)
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<Trajectory, EvalError> {
    parse_trajectory(&fs::read_to_string(path)?)
}

/// Per-frame event log: id, status, candidate frames, 2D-3D
/// correspondences, inliers, center error when known.
pub fn event_log(result: &Trajectory, gt: Option<&EvaluationGroundTruth>) -> String {
    let mut out = format!("# method {}\n# id status candidates correspondences inliers error\n", result.method);
    for rec in result.frames.values() {
        let err = center_error(rec, gt).map_or_else(|| "-".to_string(), |e| format!("{e:?}"));
        let _ = writeln!(
            out,
            "{} {} {} {} {} {}",
            rec.id,
            rec.status.as_str(),
            rec.candidates,
            rec.correspondences,
            rec.inliers,
            err
        );
    }
    out
}

/// ASCII PLY with one vertex per landmark.
pub fn pointcloud_to_text(model: &SfMModel) -> String {
    let mut out = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        model.num_landmarks()
    );
    for lm in model.landmarks().values() {
        let _ = writeln!(out, "{:?} {:?} {:?}", lm.position.x, lm.position.y, lm.position.z);
    }
    out
}

pub fn export_pointcloud(model: &SfMModel, path: impl AsRef<Path>) -> Result<(), EvalError> {
    fs::write(path, pointcloud_to_text(model))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::WorldPoint;
    use crate::model::GroundTruthFrame;
    use nalgebra::{UnitQuaternion, Vector3};

    fn gt_line(n: usize) -> EvaluationGroundTruth {
        let mut gt = EvaluationGroundTruth::default();
        for i in 0..n {
            gt.frames.insert(i as FrameId, GroundTruthFrame { timestamp: i as f64, center: WorldPoint::new(i as f64, 0.0, 0.0), pose: None });
        }
        gt
    }

    fn at(id: FrameId, center: WorldPoint) -> FrameRecord {
        FrameRecord {
            id,
            timestamp: id as f64,
            status: FrameStatus::Registered,
            pose: Some(PoseSE3::from_center(UnitQuaternion::identity(), &center)),
            candidates: 1,
            correspondences: 20,
            inliers: 18,
        }
    }

    #[test]
    fn fraction_uses_all_frames() {
        let mut t = Trajectory::new("x");
        for i in 0..2280u32 {
            let mut r = at(i, WorldPoint::new(i as f64, 0.0, 0.0));
            if i >= 2247 {
                r.status = FrameStatus::Failed;
                r.pose = None;
            }
            t.frames.insert(i, r);
        }
        let rep = compute_metrics(&t, &gt_line(2254)).unwrap();
        assert_eq!(rep.registered, 2247);
        assert_eq!(rep.total, 2280);
        assert_eq!(format_cameras(&rep), "2,247 (98.6%)");
        assert_eq!(rep.evaluated, 2247);
    }

    #[test]
    fn hand_arithmetic() {
        let mut t = Trajectory::new("x");
        for (i, e) in [1.0, 2.0, 9.0].iter().enumerate() {
            t.frames.insert(i as FrameId, at(i as FrameId, WorldPoint::new(i as f64, *e, 0.0)));
        }
        let rep = compute_metrics(&t, &gt_line(3)).unwrap();
        assert_eq!(rep.mae, Some(4.0));
        assert_eq!(rep.median, Some(2.0));
    }

    #[test]
    fn exact_estimates_have_zero_error() {
        let mut t = Trajectory::new("x");
        for i in 0..5u32 {
            t.frames.insert(i, at(i, WorldPoint::new(i as f64, 0.0, 0.0)));
        }
        let rep = compute_metrics(&t, &gt_line(5)).unwrap();
        assert_eq!((rep.mae, rep.median), (Some(0.0), Some(0.0)));
    }

    #[test]
    fn partial_ground_truth_counts_in_total_only() {
        let mut t = Trajectory::new("x");
        for i in 0..4u32 {
            t.frames.insert(i, at(i, WorldPoint::new(i as f64, 1.0, 0.0)));
        }
        let rep = compute_metrics(&t, &gt_line(3)).unwrap();
        assert_eq!((rep.registered, rep.total, rep.evaluated), (4, 4, 3));
        assert_eq!(rep.mae, Some(1.0));
    }

    #[test]
    fn no_overlap_is_an_error() {
        let mut t = Trajectory::new("x");
        t.frames.insert(99, at(99, WorldPoint::origin()));
        assert!(matches!(compute_metrics(&t, &gt_line(3)), Err(EvalError::EmptyIntersection)));
    }

    #[test]
    fn even_median_averages_the_middle() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn thousands_separators() {
        assert_eq!(format_count(0), "0");
        assert_eq!(format_count(999), "999");
        assert_eq!(format_count(2247), "2,247");
        assert_eq!(format_count(1234567), "1,234,567");
    }

    #[test]
    fn trajectory_round_trip() {
        let mut t = Trajectory::new("proposed");
        t.frames.insert(0, at(0, WorldPoint::new(0.1, 0.2, 0.3)));
        let mut r = at(1, WorldPoint::new(1.0, 0.0, 0.0));
        r.pose = Some(PoseSE3::new(UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3), Vector3::new(1e-17, 3.0, -2.5)));
        t.frames.insert(1, r);
        t.frames.insert(2, FrameRecord { status: FrameStatus::Failed, ..FrameRecord::pending(2, 2.0) });
        let text = trajectory_to_text(&t, Some(&gt_line(3)));
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 3);
        let back = parse_trajectory(&text).unwrap();
        assert_eq!(back.method, "proposed");
        for (id, rec) in &t.frames {
            assert_eq!(back.frames[id].pose, rec.pose);
            assert_eq!(back.frames[id].status, rec.status);
        }
    }

    #[test]
    fn empty_exports_are_header_only() {
        let t = Trajectory::new("x");
        assert!(trajectory_to_text(&t, None).lines().all(|l| l.starts_with('#')));
        let ply = pointcloud_to_text(&SfMModel::new());
        assert!(ply.ends_with("end_header\n"));
        assert!(ply.contains("element vertex 0\n"));
    }

    #[test]
    fn table_rows_follow_input_order() {
        let mk = |m: &str, reg| EvaluationReport {
            method: m.into(),
            registered: reg,
            total: 2280,
            fraction: 100.0 * reg as f64 / 2280.0,
            evaluated: reg,
            mae: Some(1.5),
            median: None,
            mean_rotation_deg: None,
            per_frame: BTreeMap::new(),
        };
        let table = compare_methods(&[mk("Single image", 1450), mk("Proposed", 2247)]);
        let rows: Vec<&str> = table.lines().collect();
        assert_eq!(rows.len(), 4);
        assert!(rows[2].starts_with("Single image") && rows[2].contains("1,450 (63.6%)"));
        assert!(rows[3].starts_with("Proposed") && rows[3].contains("2,247 (98.6%)"));
        assert_eq!(compare_methods(&[mk("a", 1)]).lines().count(), 3);
    }
}

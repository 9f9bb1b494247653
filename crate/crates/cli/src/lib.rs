//! Commands behind the `vidloc` binary. Each command reads and writes plain
//! files so runs can be chained and compared.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use thiserror::Error;
use vidloc::baselines::{onthefly_sfm, single_image_localize, BaselineError};
use vidloc::eval::{
    compare_methods, compute_metrics, event_log, export_pointcloud, export_trajectory, format_cameras, load_trajectory,
    EvaluationReport, Trajectory,
};
use vidloc::model::{EvaluationGroundTruth, SfMModel};
use vidloc::pipeline::{localize_sequence, oracle_anchor_detector, LocalizationResult, PipelineError};
use vidloc::synth::{build_reference_model, generate_scene};

pub use config::{ConfigError, RunConfig};

pub const DATABASE_FILE: &str = "database.txt";
pub const QUERY_FILE: &str = "query.txt";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.txt";
pub const DATABASE_GT_FILE: &str = "database_ground_truth.txt";
pub const REFERENCE_FILE: &str = "reference.txt";
pub const AUGMENTED_FILE: &str = "augmented.txt";
pub const BA_EVENTS_FILE: &str = "ba_events.txt";
pub const POINTS_FILE: &str = "points.ply";
pub const DEFAULT_OUT: &str = "vidloc-out";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("pipeline failure: {0}")]
    Pipeline(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Pipeline(_) => 4,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    Proposed,
    Single,
    Onthefly,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::Single => "single",
            Method::Onthefly => "onthefly",
        }
    }
}

pub fn trajectory_file(method: Method) -> String {
    format!("trajectory_{}.txt", method.name())
}

pub fn events_file(method: Method) -> String {
    format!("events_{}.txt", method.name())
}

/// Config file (if any) with the seed flag applied on top.
pub fn resolve_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.scene.seed = s;
    }
    Ok(cfg)
}

/// Flag, then config file, then the default.
pub fn pick(flag: Option<&Path>, file: Option<&PathBuf>, default: impl FnOnce() -> PathBuf) -> PathBuf {
    flag.map(Path::to_path_buf).or_else(|| file.cloned()).unwrap_or_else(default)
}

pub fn out_dir(flag: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    pick(flag, cfg.paths.out.as_ref(), || PathBuf::from(DEFAULT_OUT))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn load_model(path: &Path) -> Result<SfMModel, CliError> {
    SfMModel::load(path).map_err(|e| io_err(path, e))
}

fn load_gt(path: &Path) -> Result<EvaluationGroundTruth, CliError> {
    EvaluationGroundTruth::load(path).map_err(|e| io_err(path, e))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Generates the scene and writes the database model, the query sequence
/// and both ground truths into `out`.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let ds = generate_scene(&cfg.scene).map_err(|e| CliError::Config(e.to_string()))?;
    create_dir(out)?;
    let db = ds.database_model();
    let query = ds.query_sequence();
    for (name, model) in [(DATABASE_FILE, &db), (QUERY_FILE, &query)] {
        let p = out.join(name);
        model.save(&p).map_err(|e| io_err(&p, e))?;
    }
    for (name, gt) in [(GROUND_TRUTH_FILE, ds.ground_truth()), (DATABASE_GT_FILE, ds.database_ground_truth())] {
        let p = out.join(name);
        gt.save(&p).map_err(|e| io_err(&p, e))?;
    }
    Ok(format!(
        "seed {}: {} landmarks, {} database frames, {} query frames, {} database tracks -> {}",
        cfg.scene.seed,
        ds.landmarks.len(),
        ds.database.len(),
        ds.query.len(),
        db.num_landmarks(),
        out.display()
    ))
}

pub fn cmd_build_ref(cfg: &RunConfig, database: &Path, out: &Path) -> Result<String, CliError> {
    let db = load_model(database)?;
    let reference =
        build_reference_model(&db, cfg.reference_mode, &cfg.pipeline).map_err(|e| CliError::Pipeline(e.to_string()))?;
    create_dir(out)?;
    let p = out.join(REFERENCE_FILE);
    reference.save(&p).map_err(|e| io_err(&p, e))?;
    Ok(format!(
        "reference ({:?}): {} frames, {} landmarks -> {}",
        cfg.reference_mode,
        reference.frames.len(),
        reference.num_landmarks(),
        p.display()
    ))
}

#[derive(Debug)]
pub struct LocalizeOutput {
    pub trajectory: Trajectory,
    pub report: Option<EvaluationReport>,
    pub result: Option<LocalizationResult>,
    pub seconds: f64,
}

impl LocalizeOutput {
    pub fn summary(&self) -> String {
        let mut s = format!("{}: {} of {} frames registered", self.trajectory.method, self.trajectory.registered(), self.trajectory.frames.len());
        if let Some(r) = &self.report {
            let _ = write!(s, ", {}", format_cameras(r));
            if let Some(m) = r.median {
                let _ = write!(s, ", median error {m:.4}");
            }
        }
        if let Some(res) = &self.result {
            let _ = write!(s, ", {} anchors, {} BA events", res.anchors.len(), res.ba_events.len());
        }
        let _ = write!(s, " ({:.1} s)", self.seconds);
        s
    }
}

fn ba_events_text(res: &LocalizationResult) -> String {
    let mut out = String::from("# event registered iterations accepted initial_cost final_cost frozen_before frozen_after\n");
    for (i, ev) in res.ba_events.iter().enumerate() {
        let _ = writeln!(
            out,
            "{i} {} {} {} {:?} {:?} {:016x} {:016x}",
            ev.registered_so_far,
            ev.report.iterations,
            ev.report.accepted,
            ev.report.initial_cost,
            ev.report.final_cost,
            ev.frozen_digest_before,
            ev.frozen_digest_after
        );
    }
    out
}

/// Runs one localization method and writes its trajectory and event log
/// (plus the augmented model and BA log for the proposed method).
pub fn cmd_localize(
    cfg: &RunConfig,
    model: &Path,
    sequence: &Path,
    gt: Option<&Path>,
    method: Method,
    out: &Path,
) -> Result<LocalizeOutput, CliError> {
    let reference = load_model(model)?;
    let seq = load_model(sequence)?;
    let gt = gt.map(load_gt).transpose()?;
    let start = Instant::now();
    let (trajectory, result) = match method {
        Method::Proposed => {
            let gt = gt
                .as_ref()
                .ok_or_else(|| CliError::Config("the proposed method needs ground truth for its anchor detector".into()))?;
            let det = oracle_anchor_detector(gt);
            let res = localize_sequence(&reference, &seq, &det, &cfg.pipeline).map_err(|e| match e {
                PipelineError::InvalidInput(m) => CliError::Config(m),
                e => CliError::Pipeline(e.to_string()),
            })?;
            (res.trajectory.clone(), Some(res))
        }
        Method::Single => {
            let t = single_image_localize(&reference, &seq, &cfg.pipeline).map_err(|e| CliError::Pipeline(e.to_string()))?;
            (t, None)
        }
        Method::Onthefly => {
            let centers = gt.as_ref().map(|g| g.frames.iter().map(|(id, f)| (*id, f.center)).collect());
            let (_, t) = onthefly_sfm(&seq, &cfg.pipeline, centers.as_ref()).map_err(|e: BaselineError| CliError::Pipeline(e.to_string()))?;
            (t, None)
        }
    };
    let seconds = start.elapsed().as_secs_f64();
    create_dir(out)?;
    let tp = out.join(trajectory_file(method));
    export_trajectory(&trajectory, gt.as_ref(), &tp).map_err(|e| io_err(&tp, e))?;
    write(&out.join(events_file(method)), &event_log(&trajectory, gt.as_ref()))?;
    if let Some(res) = &result {
        let p = out.join(AUGMENTED_FILE);
        res.model.save(&p).map_err(|e| io_err(&p, e))?;
        write(&out.join(BA_EVENTS_FILE), &ba_events_text(res))?;
    }
    let report = match &gt {
        Some(g) => compute_metrics(&trajectory, g).ok(),
        None => None,
    };
    let output = LocalizeOutput { trajectory, report, result, seconds };
    info!("{}", output.summary());
    Ok(output)
}

pub fn report_text(r: &EvaluationReport) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:?}"));
    format!(
        "method {}\nregistered {}\ntotal {}\nfraction_percent {:.1}\nevaluated {}\nmae {}\nmedian {}\nmean_rotation_deg {}\n",
        r.method,
        r.registered,
        r.total,
        r.fraction,
        r.evaluated,
        opt(r.mae),
        opt(r.median),
        opt(r.mean_rotation_deg)
    )
}

/// Comparison table over the given trajectories; with `out`, one report
/// file per method as well.
pub fn cmd_eval(trajectories: &[PathBuf], gt: &Path, out: Option<&Path>) -> Result<String, CliError> {
    if trajectories.is_empty() {
        return Err(CliError::Config("no trajectories given".into()));
    }
    let gt = load_gt(gt)?;
    let mut reports = Vec::new();
    for p in trajectories {
        let t = load_trajectory(p).map_err(|e| io_err(p, e))?;
        reports.push(compute_metrics(&t, &gt).map_err(|e| CliError::Pipeline(format!("{}: {e}", p.display())))?);
    }
    if let Some(dir) = out {
        create_dir(dir)?;
        for r in &reports {
            write(&dir.join(format!("report_{}.txt", r.method)), &report_text(r))?;
        }
    }
    Ok(compare_methods(&reports))
}

pub fn cmd_export(model: &Path, out: &Path) -> Result<String, CliError> {
    let m = load_model(model)?;
    create_dir(out)?;
    let p = out.join(POINTS_FILE);
    export_pointcloud(&m, &p).map_err(|e| io_err(&p, e))?;
    Ok(format!("{} points -> {}", m.num_landmarks(), p.display()))
}

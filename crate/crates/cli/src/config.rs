//! Flat `key = value` run configuration.
//!
//! Keys are grouped under `scene.`, `pipeline.` and `paths.`. Blank lines and
//! `#` comments are ignored. Every key must be known; `scene.seed` is required.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;
use vidloc::pipeline::PipelineConfig;
use vidloc::synth::{ReferenceMode, SceneConfig, TexturePoorArc, TiltExcursion};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {message}")]
    BadValue { line: usize, key: String, message: String },
    #[error("line {line}: `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Paths {
    pub out: Option<PathBuf>,
    pub database: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub sequence: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub pipeline: PipelineConfig,
    pub reference_mode: ReferenceMode,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            pipeline: PipelineConfig::default(),
            reference_mode: ReferenceMode::Oracle,
            paths: Paths::default(),
        }
    }
}

fn num<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("`{v}`: {e}"))
}

fn boolean(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("`{v}` is not a boolean")),
    }
}

fn is_none(v: &str) -> bool {
    v.is_empty() || v == "none"
}

/// `a:b:c` groups separated by commas.
fn tuples(v: &str, arity: usize) -> Result<Vec<Vec<f64>>, String> {
    if is_none(v) {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|group| {
            let parts: Vec<f64> = group.split(':').map(|p| num::<f64>(p.trim())).collect::<Result<_, _>>()?;
            if parts.len() != arity {
                return Err(format!("`{group}` needs {arity} colon-separated values"));
            }
            Ok(parts)
        })
        .collect()
}

fn count(x: f64) -> Result<usize, String> {
    if x >= 0.0 && x.fract() == 0.0 {
        Ok(x as usize)
    } else {
        Err(format!("{x} is not a frame count"))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Syntax { line, message: format!("expected `key = value`, got `{content}`") });
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate { line, key: key.into() });
            }
            cfg.set(key, value).map_err(|e| match e {
                None => ConfigError::UnknownKey { line, key: key.into() },
                Some(message) => ConfigError::BadValue { line, key: key.into(), message },
            })?;
        }
        if !seen.contains("scene.seed") {
            return Err(ConfigError::Missing("scene.seed"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, crate::CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| crate::CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scene.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.pipeline.validate().map_err(ConfigError::Invalid)
    }

    /// `Err(None)` for an unknown key.
    fn set(&mut self, key: &str, v: &str) -> Result<(), Option<String>> {
        let s = &mut self.scene;
        let p = &mut self.pipeline;
        let r: Result<(), String> = (|| {
            match key {
                "scene.seed" => s.seed = num(v)?,
                "scene.major_radius" => s.major_radius = num(v)?,
                "scene.minor_radius" => s.minor_radius = num(v)?,
                "scene.landmark_count" => s.landmark_count = num(v)?,
                "scene.tube_min_deg" => s.tube_min_deg = num(v)?,
                "scene.tube_max_deg" => s.tube_max_deg = num(v)?,
                "scene.aliased_groups" => s.aliased_groups = num(v)?,
                "scene.group_size" => s.group_size = num(v)?,
                "scene.texture_poor" => {
                    s.texture_poor = tuples(v, 3)?
                        .into_iter()
                        .map(|t| TexturePoorArc { start_deg: t[0], end_deg: t[1], density: t[2] })
                        .collect()
                }
                "scene.unique_count" => s.unique_count = num(v)?,
                "scene.unique_angle_deg" => s.unique_angle_deg = num(v)?,
                "scene.unique_spread_deg" => s.unique_spread_deg = num(v)?,
                "scene.unique_tube_deg" => s.unique_tube_deg = num(v)?,
                "scene.descriptor_dim" => s.descriptor_dim = num(v)?,
                "scene.descriptor_noise" => s.descriptor_noise = num(v)?,
                "scene.pixel_noise" => s.pixel_noise = num(v)?,
                "scene.outlier_rate" => s.outlier_rate = num(v)?,
                "scene.junk_features" => s.junk_features = num(v)?,
                "scene.db_frames" => s.db_frames = num(v)?,
                "scene.db_pitches_deg" => {
                    s.db_pitches_deg = v.split(',').map(|x| num(x.trim())).collect::<Result<_, _>>()?
                }
                "scene.query_frames" => s.query_frames = num(v)?,
                "scene.query_start_deg" => s.query_start_deg = num(v)?,
                "scene.query_sweep_deg" => s.query_sweep_deg = num(v)?,
                "scene.query_pitch_deg" => s.query_pitch_deg = num(v)?,
                "scene.query_radius_offset" => s.query_radius_offset = num(v)?,
                "scene.query_height" => s.query_height = num(v)?,
                "scene.query_jitter" => s.query_jitter = num(v)?,
                "scene.tilt" => {
                    s.tilt = match tuples(v, 3)?.as_slice() {
                        [] => None,
                        [t] => Some(TiltExcursion { start_frame: count(t[0])?, length: count(t[1])?, peak_pitch_deg: t[2] }),
                        _ => return Err("at most one tilt excursion".into()),
                    }
                }
                "scene.occlusion_gaps" => {
                    s.occlusion_gaps =
                        tuples(v, 2)?.into_iter().map(|t| Ok((count(t[0])?, count(t[1])?))).collect::<Result<_, String>>()?
                }
                "scene.camera_inset" => s.camera_inset = num(v)?,
                "scene.max_range" => s.max_range = num(v)?,
                "scene.focal" => s.focal = num(v)?,
                "scene.width" => s.width = num(v)?,
                "scene.height" => s.height = num(v)?,

                "pipeline.n_temporal" => p.n_temporal = num(v)?,
                "pipeline.k_retrieval" => p.k_retrieval = num(v)?,
                "pipeline.ba_period" => p.ba_period = num(v)?,
                "pipeline.k_spatial" => p.k_spatial = num(v)?,
                "pipeline.spatial_max_angle_deg" => p.spatial_max_angle_deg = num(v)?,
                "pipeline.anchor_threshold" => p.anchor_threshold = num(v)?,
                "pipeline.min_2d3d" => p.min_2d3d = num(v)?,
                "pipeline.match_ratio" => p.match_ratio = num(v)?,
                "pipeline.mutual_matching" => p.mutual_matching = boolean(v)?,
                "pipeline.min_verified_matches" => p.min_verified_matches = num(v)?,
                "pipeline.backward_pass" => p.backward_pass = boolean(v)?,
                "pipeline.ransac.max_iterations" => p.ransac.max_iterations = num(v)?,
                "pipeline.ransac.inlier_threshold" => p.ransac.inlier_threshold = num(v)?,
                "pipeline.ransac.min_inliers" => p.ransac.min_inliers = num(v)?,
                "pipeline.ransac.confidence" => p.ransac.confidence = num(v)?,
                "pipeline.ransac.seed" => p.ransac.rng_seed = num(v)?,
                "pipeline.bundle.max_iterations" => p.bundle.max_lm_iterations = num(v)?,
                "pipeline.bundle.initial_damping" => p.bundle.initial_damping = num(v)?,
                "pipeline.bundle.convergence_tol" => p.bundle.convergence_tol = num(v)?,
                "pipeline.bundle.huber_delta" => p.bundle.huber_delta = num(v)?,
                "pipeline.triangulation.min_angle_deg" => p.triangulation.min_angle_deg = num(v)?,
                "pipeline.triangulation.max_reprojection" => p.triangulation.max_reprojection = num(v)?,
                "pipeline.reference_mode" => {
                    self.reference_mode = match v {
                        "oracle" => ReferenceMode::Oracle,
                        "reconstructed" => ReferenceMode::Reconstructed,
                        _ => return Err(format!("`{v}` is neither `oracle` nor `reconstructed`")),
                    }
                }

                "paths.out" => self.paths.out = Some(v.into()),
                "paths.database" => self.paths.database = Some(v.into()),
                "paths.model" => self.paths.model = Some(v.into()),
                "paths.sequence" => self.paths.sequence = Some(v.into()),
                "paths.ground_truth" => self.paths.ground_truth = Some(v.into()),
                _ => return Err(String::new()),
            }
            Ok(())
        })();
        r.map_err(|m| if m.is_empty() { None } else { Some(m) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_keeps_defaults() {
        let cfg = RunConfig::parse("scene.seed = 11\n").unwrap();
        assert_eq!(cfg.scene.seed, 11);
        assert_eq!(cfg.pipeline, PipelineConfig::default());
        assert_eq!(cfg.scene.query_frames, SceneConfig::default().query_frames);
    }

    #[test]
    fn seed_is_required() {
        assert_eq!(RunConfig::parse("# nothing\n"), Err(ConfigError::Missing("scene.seed")));
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = RunConfig::parse("scene.seed = 1\nscene.sed = 2\n").unwrap_err();
        assert_eq!(err, ConfigError::UnknownKey { line: 2, key: "scene.sed".into() });
    }

    #[test]
    fn structured_values() {
        let text = "scene.seed = 3\nscene.texture_poor = 10:20:0.5, 30:40:0\nscene.tilt = none\n\
                    scene.occlusion_gaps = 5:3\nscene.db_pitches_deg = 20, 30, 40\npipeline.mutual_matching = false\n\
                    pipeline.reference_mode = reconstructed\npaths.out = /tmp/x # trailing comment\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.scene.texture_poor.len(), 2);
        assert_eq!(cfg.scene.texture_poor[1].density, 0.0);
        assert_eq!(cfg.scene.tilt, None);
        assert_eq!(cfg.scene.occlusion_gaps, vec![(5, 3)]);
        assert_eq!(cfg.scene.db_pitches_deg, vec![20.0, 30.0, 40.0]);
        assert!(!cfg.pipeline.mutual_matching);
        assert_eq!(cfg.reference_mode, ReferenceMode::Reconstructed);
        assert_eq!(cfg.paths.out, Some(PathBuf::from("/tmp/x")));
    }

    #[test]
    fn bad_values_name_the_key() {
        let err = RunConfig::parse("scene.seed = x\n").unwrap_err();
        assert!(matches!(err, ConfigError::BadValue { line: 1, ref key, .. } if key == "scene.seed"));
        assert!(matches!(RunConfig::parse("scene.seed = 1\nscene.tilt = 1:2\n"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(RunConfig::parse("scene.seed = 1\nscene.seed = 2\n"), Err(ConfigError::Duplicate { .. })));
        assert!(matches!(RunConfig::parse("scene.seed\n"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(RunConfig::parse("scene.seed = 1\npipeline.n_temporal = 0\n"), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn shipped_configs_parse() {
        for name in ["demo.cfg", "gap.cfg"] {
            let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
            RunConfig::load(&path).unwrap();
        }
    }
}

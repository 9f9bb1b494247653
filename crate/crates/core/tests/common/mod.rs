#![allow(dead_code)]

use std::collections::BTreeMap;

use vidloc::geom::WorldPoint;
use vidloc::model::{FrameId, SfMModel};
use vidloc::pipeline::PipelineConfig;
use vidloc::synth::{build_reference_model, generate_scene, ReferenceMode, SceneConfig, SyntheticDataset};

/// A short sweep near the unique object with no adversarial features.
pub fn clean_scene() -> SceneConfig {
    SceneConfig {
        landmark_count: 1500,
        aliased_groups: 0,
        texture_poor: Vec::new(),
        unique_count: 20,
        pixel_noise: 0.0,
        outlier_rate: 0.0,
        junk_features: 0,
        db_frames: 60,
        query_frames: 50,
        query_sweep_deg: 50.0,
        tilt: None,
        ..SceneConfig::default()
    }
}

pub fn noisy_scene() -> SceneConfig {
    SceneConfig { pixel_noise: 0.5, outlier_rate: 0.05, junk_features: 10, aliased_groups: 100, ..clean_scene() }
}

pub struct Fixture {
    pub dataset: SyntheticDataset,
    pub reference: SfMModel,
    pub sequence: SfMModel,
}

pub fn fixture(cfg: &SceneConfig, pc: &PipelineConfig) -> Fixture {
    let dataset = generate_scene(cfg).unwrap();
    let reference = build_reference_model(&dataset.database_model(), ReferenceMode::Oracle, pc).unwrap();
    let sequence = dataset.query_sequence();
    Fixture { dataset, reference, sequence }
}

pub fn gt_centers(ds: &SyntheticDataset) -> BTreeMap<FrameId, WorldPoint> {
    ds.query.iter().map(|f| (f.id, f.pose.center())).collect()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    assert!(!v.is_empty());
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

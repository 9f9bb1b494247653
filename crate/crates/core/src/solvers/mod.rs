//! Geometric estimators used by the localization pipeline and the baselines.

mod bundle;
mod p3p;
mod pnp;
mod relative_pose;
mod triangulation;
mod umeyama;

use thiserror::Error;

pub use bundle::{bundle_adjust, BundleConfig, BundleReport, FreezeMask};
pub use p3p::{solve_p3p, solve_p3p_bearings};
pub use pnp::{ransac_pnp, refine_pose, Correspondence2D3D, PnpResult, RansacConfig};
pub use relative_pose::{estimate_relative_pose, RelativePose};
pub use triangulation::{triangulate, triangulate_dlt, triangulation_angle, TriangulationConfig};
pub use umeyama::{umeyama_similarity, SimilarityTransform};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("insufficient correspondences: need {needed}, got {got}")]
    InsufficientCorrespondences { needed: usize, got: usize },
    #[error("no consensus: best hypothesis has {best} inliers, {required} required")]
    NoConsensus { best: usize, required: usize },
    #[error("insufficient parallax")]
    InsufficientParallax,
    #[error("point behind a camera")]
    CheiralityFailure,
    #[error("reprojection error above threshold")]
    ReprojectionTooLarge,
    #[error("numerical failure: {0}")]
    NumericalFailure(&'static str),
}

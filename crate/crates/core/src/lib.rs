//! Sequential camera localization against a frozen reference reconstruction.

pub mod geom;
pub mod matching;
pub mod model;
pub mod solvers;
pub mod synth;
pub mod eval;
pub mod pipeline;
pub mod baselines;

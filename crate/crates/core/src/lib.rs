//! Reward-guided expansive Gaussian splatting at desk scale.
//!
//! Library layout mirrors the pipeline: `splat` and `raster` implement the
//! differentiable renderer, `nn` a minimal conv-net autodiff engine, `reward`
//! the confidence network and its losses, `world` the procedural benchmark
//! generator, `train` the two-round reconstruction pipeline, and `metrics`
//! the evaluation suite.

pub mod img;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod raster;
pub mod reward;
pub mod splat;
pub mod train;
pub mod world;

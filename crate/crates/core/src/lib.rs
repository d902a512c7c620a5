//! Object-level attribution of network-to-brain alignment: tensor kernels, a
//! small inference engine with gradients, per-filter Grad-CAM scoring, filter
//! ablation and rank-correlation analysis.

pub mod detection;
pub mod engine;
pub mod fixtures;
pub mod gradcam;
pub mod io;
pub mod model;
pub mod o2b;
pub mod stats;
pub mod tensor;

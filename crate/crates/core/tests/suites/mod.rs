//! Oracle suites shared by the per-area test targets and the acceptance report.
#![allow(dead_code)]

pub mod ablation;
pub mod gradients;
pub mod overlap;
pub mod pipeline_algebra;
pub mod rank_correlation;
pub mod scoring;
pub mod structural;

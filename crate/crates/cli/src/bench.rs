//! Single-threaded timing of the resumed ablation sweep against full forward passes.

use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use o2b_core::fixtures;
use o2b_core::model::TargetLayerSet;
use o2b_core::o2b::{ablation_deltas_with, base_predictions, Sweep};
use o2b_core::stats::build_targets;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub network: String,
    pub target: String,
    pub filters: usize,
    pub images: usize,
    pub repeats: usize,
    pub threads: usize,
    /// Best wall time over the repeats.
    pub resume_seconds: f64,
    pub full_seconds: f64,
    pub speedup: f64,
    /// Largest absolute disagreement between the two sweeps' deltas.
    pub max_abs_difference: f64,
}

fn best_of<F: FnMut() -> Result<()>>(repeats: usize, mut f: F) -> Result<Duration> {
    let mut best = Duration::MAX;
    for _ in 0..repeats {
        let t = Instant::now();
        f()?;
        best = best.min(t.elapsed());
    }
    Ok(best)
}

/// Sweeps the toy network's last target layer (the one feeding the head).
pub fn run(seed: u64, repeats: usize) -> Result<BenchReport> {
    let repeats = repeats.max(1);
    let g = fixtures::toy_chain(seed);
    let layers = TargetLayerSet::from_graph(&g)?;
    let layer = layers.layers().last().context("toy network has no target layers")?.clone();
    let targets = build_targets(&fixtures::stimulus_table(seed))?;
    let images = fixtures::stimulus_images(g.input_shape(), seed);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build()?;
    pool.install(|| {
        let base = base_predictions(&g, &images)?;
        let sweep = |mode| ablation_deltas_with(&g, &layer.node_id, &images, &targets, &base, mode);
        let (resumed, full) = (sweep(Sweep::Resume)?, sweep(Sweep::Full)?);
        let max_abs_difference = resumed
            .values
            .iter()
            .zip(&full.values)
            .filter_map(|(a, b)| Some((a.as_ref()? - b.as_ref()?).abs()))
            .fold(0.0, f64::max);
        let resume = best_of(repeats, || sweep(Sweep::Resume).map(drop).map_err(Into::into))?;
        let full_t = best_of(repeats, || sweep(Sweep::Full).map(drop).map_err(Into::into))?;
        Ok(BenchReport {
            network: g.metadata().architecture.clone(),
            target: layer.node_id.clone(),
            filters: layer.filters,
            images: targets.image_ids().len(),
            repeats,
            threads: 1,
            resume_seconds: resume.as_secs_f64(),
            full_seconds: full_t.as_secs_f64(),
            speedup: full_t.as_secs_f64() / resume.as_secs_f64().max(f64::MIN_POSITIVE),
            max_abs_difference,
        })
    })
}

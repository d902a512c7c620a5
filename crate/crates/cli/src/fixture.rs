//! Writes a self-contained synthetic experiment: bundles, corpora, stimuli,
//! detections and a run configuration referencing them.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use o2b_core::detection::{detections_to_jsonl, CategoryMap, ClassVocabulary};
use o2b_core::engine::write_corpus;
use o2b_core::fixtures;
use o2b_core::model::{save_model, ModelGraph};
use serde_json::json;

/// Categories whose classes the synthetic detector reports.
pub const DETECTED_CATEGORIES: [&str; 5] = ["Human", "Body Parts", "Transport", "Clothing", "Nature"];
/// Classes drawn from each detected category.
const CLASSES_PER_CATEGORY: usize = 3;
const IMAGE_SIZE: (f64, f64) = (320.0, 240.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    Chain,
    Residual,
    Alexnet,
}

impl Arch {
    pub fn build(self, seed: u64) -> ModelGraph<f32> {
        match self {
            Arch::Chain => fixtures::toy_chain(seed),
            Arch::Residual => fixtures::toy_residual(seed),
            Arch::Alexnet => fixtures::alexnet_like(seed),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FixtureOptions {
    pub arch: Arch,
    pub seed: u64,
    /// Bundles trained "with different seeds" for the correlation table.
    pub seeds: usize,
    pub score_images: usize,
    pub detections_per_image: usize,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        Self { arch: Arch::Chain, seed: 0, seeds: 3, score_images: 12, detections_per_image: 5 }
    }
}

/// Class ids of the first few classes of each detected category.
pub fn detection_pool(vocab: &ClassVocabulary, cats: &CategoryMap) -> Result<Vec<usize>> {
    let groups = cats.categorize(vocab)?;
    Ok(DETECTED_CATEGORIES
        .iter()
        .flat_map(|name| {
            let g = groups.iter().find(|g| g.category == *name).expect("bundled category");
            g.class_ids.iter().take(CLASSES_PER_CATEGORY).copied()
        })
        .collect())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes the fixture under `dir`; returns the config path.
pub fn write_fixture(dir: &Path, opts: &FixtureOptions) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let graph = opts.arch.build(opts.seed);
    let shape = graph.input_shape();
    save_model(&graph, dir.join("bundle"))?;
    let mut seed_bundles = vec!["\"bundle\"".to_string()];
    for s in 1..opts.seeds {
        let rel = format!("seeds/seed_{s}");
        save_model(&opts.arch.build(opts.seed + s as u64), dir.join(&rel))?;
        seed_bundles.push(format!("\"{rel}\""));
    }

    let table = fixtures::stimulus_table(opts.seed);
    write(&dir.join("stimuli.csv"), &table.to_csv())?;
    write(&dir.join("reference_predictions.csv"), &fixtures::stimulus_predictions(&table, opts.seed).to_csv())?;
    let preprocessing = json!({ "source": "synthetic", "seed": opts.seed, "shape": shape });
    write_corpus(dir.join("stimulus_corpus"), &fixtures::stimulus_images(shape, opts.seed), preprocessing.clone())?;

    let score_images: Vec<_> = (0..opts.score_images)
        .map(|i| (format!("img_{i:03}"), fixtures::random_image(shape, 10_000 + opts.seed * 1_000 + i as u64)))
        .collect();
    write_corpus(dir.join("score_corpus"), &score_images, preprocessing)?;
    let vocab = ClassVocabulary::open_images();
    let pool = detection_pool(&vocab, &CategoryMap::bundled())?;
    let ids: Vec<String> = score_images.iter().map(|(id, _)| id.clone()).collect();
    let dets = fixtures::synthetic_detections(&ids, &vocab, &pool, IMAGE_SIZE, opts.detections_per_image, opts.seed);
    write(&dir.join("detections.jsonl"), &detections_to_jsonl(&dets))?;

    let config = format!(
        r#"# Synthetic experiment ({arch}, seed {seed}).
out_dir = "out"
bundle = "bundle"
corpus = "stimulus_corpus/corpus.json"
stimuli = "stimuli.csv"
score_corpus = "score_corpus/corpus.json"
detections = "detections.jsonl"
threshold = 0.25
top_x = 25
select = ["Body Parts", "Human", "Transport"]

[[models]]
name = "{arch}"
bundles = [{bundles}]

[[models]]
name = "reference"
predictions = ["reference_predictions.csv"]
"#,
        arch = graph.metadata().architecture,
        seed = opts.seed,
        bundles = seed_bundles.join(", "),
    );
    let path = dir.join("config.toml");
    write(&path, &config)?;
    Ok(path)
}

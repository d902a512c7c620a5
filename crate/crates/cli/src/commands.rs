//! The pipeline subcommands. Each reads the effective configuration and writes
//! its artifacts under the output directory, every file carrying provenance.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use o2b_core::detection::{
    build_score_matrix, load_detections, overlap_matrix, CategoryMap, ClassVocabulary, Detection, ScoreMatrix,
    DEFAULT_THRESHOLD,
};
use o2b_core::engine::{predict_corpus, Corpus, PredictionTable};
use o2b_core::io::{self, Provenance};
use o2b_core::model::{load_model, AblationMask, ModelGraph, TargetLayerSet};
use o2b_core::o2b::{
    ablation_deltas, base_predictions, class_weights, contributions_to_csv, topx_category_contributions, weight_cube,
    CategoryContribution, DeltaMatrix, DEFAULT_TOP_X,
};
use o2b_core::stats::{
    build_targets, correlation_table, CorrelationReport, CorrelationRow, StimulusTable, TargetTable,
};
use o2b_core::tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::{Config, Effective, Overrides};
use crate::plot::{self, ArchitectureLayers, CrossArchitecture, CrossLayer, LayerPoints, LayerScatter};
use crate::provenance::{bundle_hash, provenance};
use crate::validate;

/// Highest-scoring (filter, class) pairs listed per layer in the summary.
pub const TOP_PAIRS: usize = 10;

/// Contributions of one layer as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionsFile {
    pub node_id: String,
    pub x: usize,
    pub rows: Vec<CategoryContribution>,
    pub provenance: Provenance,
}

/// File stem for a node id.
pub fn node_file(node: &str) -> String {
    node.replace(['/', '\\'], "_")
}

type Images<T> = Vec<(String, Tensor<T>)>;

/// Resolved configuration plus the provenance stamped on every output.
pub struct Run {
    pub eff: Effective,
    pub provenance: Provenance,
    pub out: PathBuf,
}

impl Run {
    pub fn new(o: &Overrides, jobs: Option<usize>) -> Result<Self> {
        let eff = Effective::new(o)?;
        if let Some(n) = jobs.or(eff.resolved.jobs) {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::debug!("worker pool already configured: {e}");
            }
        }
        let hash = match &eff.resolved.bundle {
            Some(b) => Some(bundle_hash(b)?),
            None => None,
        };
        let provenance = provenance(&eff.recorded.hash(), hash.as_deref());
        let out = eff.out_dir();
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self { eff, provenance, out })
    }

    pub fn cfg(&self) -> &Config {
        &self.eff.resolved
    }

    fn path(&self, rel: &str) -> Result<PathBuf> {
        let p = self.out.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        Ok(p)
    }

    fn write(&self, rel: &str, text: &str) -> Result<PathBuf> {
        let p = self.path(rel)?;
        io::write_text(&p, text)?;
        Ok(p)
    }

    fn write_csv(&self, rel: &str, body: &str) -> Result<PathBuf> {
        self.write(rel, &io::csv_with_provenance(&self.provenance, body))
    }

    fn bundle_path(&self) -> Result<&Path> {
        self.eff.require(&self.cfg().bundle, "bundle")
    }

    pub fn graph(&self) -> Result<ModelGraph<f32>> {
        let b = self.bundle_path()?;
        load_model(b).with_context(|| format!("loading bundle {}", b.display()))
    }

    pub fn layers<T: o2b_core::tensor::Scalar>(&self, g: &ModelGraph<T>) -> Result<TargetLayerSet> {
        Ok(match &self.cfg().target_layers {
            Some(ids) => TargetLayerSet::new(g, ids)?,
            None => TargetLayerSet::from_graph(g)?,
        })
    }

    pub fn vocab(&self) -> Result<ClassVocabulary> {
        match &self.cfg().vocabulary {
            None => Ok(ClassVocabulary::open_images()),
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading vocabulary {}", p.display()))?;
                Ok(ClassVocabulary::parse(&text)?)
            }
        }
    }

    pub fn categories(&self) -> Result<CategoryMap> {
        Ok(match &self.cfg().categories {
            None => CategoryMap::bundled(),
            Some(p) => CategoryMap::load(p)?,
        })
    }

    pub fn targets(&self) -> Result<TargetTable> {
        let p = self.eff.require(&self.cfg().stimuli, "stimuli")?;
        let table = StimulusTable::load(p).with_context(|| format!("loading stimuli {}", p.display()))?;
        table.validate()?;
        Ok(build_targets(&table)?)
    }

    fn corpus(&self, value: &Option<PathBuf>, name: &str) -> Result<Corpus> {
        let p = self.eff.require(value, name)?;
        Corpus::load(p).with_context(|| format!("loading {name} manifest {}", p.display()))
    }

    fn images(&self, value: &Option<PathBuf>, name: &str, shape: [usize; 3]) -> Result<Images<f32>> {
        Ok(self.corpus(value, name)?.read_all(shape)?)
    }

    /// Retained detections, checked against the vocabulary.
    pub fn detections(&self, vocab: &ClassVocabulary) -> Result<Vec<Detection>> {
        let p = self.eff.require(&self.cfg().detections, "detections")?;
        let set = load_detections(p, self.cfg().threshold.unwrap_or(DEFAULT_THRESHOLD))?;
        for d in &set.detections {
            vocab.check(d)?;
        }
        if set.clamped > 0 {
            log::info!("clamped {} boxes to their image", set.clamped);
        }
        if set.detections.is_empty() {
            log::warn!("{} holds no detections above threshold; score matrices will be all zero", p.display());
        }
        Ok(set.detections)
    }

    fn top_x(&self) -> usize {
        self.cfg().top_x.unwrap_or(DEFAULT_TOP_X)
    }

    /// Whether an artifact's provenance matches this run, so it can be reused.
    fn is_current(&self, json: &Path) -> bool {
        let Ok(bytes) = fs::read(json) else { return false };
        let Ok(v) = serde_json::from_slice::<serde_json::Value>(&bytes) else { return false };
        let Ok(p) = serde_json::from_value::<Provenance>(v["provenance"].clone()) else { return false };
        p == self.provenance
    }
}

pub fn predict(run: &Run) -> Result<PathBuf> {
    let g = run.graph()?;
    let corpus = run.corpus(&run.cfg().corpus, "corpus")?;
    let table = predict_corpus(&g, &corpus, &AblationMask::empty())?;
    log::info!("predicted {} images", table.len());
    run.write_csv("predictions.csv", &table.to_csv())
}

fn model_predictions(run: &Run, name: &str, csvs: &[PathBuf], bundles: &[PathBuf]) -> Result<Vec<PredictionTable>> {
    let mut seeds = Vec::new();
    for p in csvs {
        seeds.push(PredictionTable::read(p).with_context(|| format!("model `{name}`"))?);
    }
    if !bundles.is_empty() {
        let corpus = run.corpus(&run.cfg().corpus, "corpus")?;
        for b in bundles {
            let g = load_model(b).with_context(|| format!("loading bundle {}", b.display()))?;
            seeds.push(predict_corpus(&g, &corpus, &AblationMask::empty())?);
        }
    }
    Ok(seeds)
}

pub fn correlate(run: &Run) -> Result<CorrelationReport> {
    let targets = run.targets()?;
    let mut entries: Vec<(String, Vec<PathBuf>, Vec<PathBuf>)> =
        run.cfg().models.iter().map(|m| (m.name.clone(), m.predictions.clone(), m.bundles.clone())).collect();
    if entries.is_empty() {
        let g = run.graph().context("no [[models]] configured and no bundle to fall back on")?;
        let name = Some(g.metadata().architecture.clone()).filter(|a| !a.is_empty()).unwrap_or_else(|| "model".into());
        entries.push((name, Vec::new(), vec![run.bundle_path()?.to_path_buf()]));
    }
    let mut rows = Vec::with_capacity(entries.len());
    for (name, csvs, bundles) in &entries {
        let seeds = model_predictions(run, name, csvs, bundles)?;
        let cells = correlation_table(&seeds, &targets).with_context(|| format!("model `{name}`"))?;
        rows.push(CorrelationRow { model: name.clone(), cells });
    }
    let report = CorrelationReport { targets: targets.labels(), rows, provenance: run.provenance.clone() };
    run.write_csv("correlations.csv", &report.to_csv())?;
    let mut header = vec!["model"];
    header.extend(report.targets.iter().map(String::as_str));
    let wide = io::csv_string(
        &header,
        report.rows.iter().map(|r| std::iter::once(r.model.clone()).chain(r.cells.iter().map(plot::cell_label))),
    );
    run.write_csv("correlations_table.csv", &wide)?;
    let json = report.to_json();
    run.write("correlations.json", &json)?;
    run.write("correlations.svg", &plot::render_value(&serde_json::from_str(&json)?, None)?)?;
    Ok(report)
}

fn top_pairs(m: &ScoreMatrix, vocab: &ClassVocabulary) -> Vec<[String; 6]> {
    let mut pairs: Vec<(usize, usize, f64)> = (0..m.filters)
        .flat_map(|f| (0..m.classes).map(move |k| (f, k)))
        .map(|(f, k)| (f, k, m.get(f, k)))
        .filter(|p| p.2 > 0.0)
        .collect();
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    pairs
        .into_iter()
        .take(TOP_PAIRS)
        .map(|(f, k, s)| {
            [
                m.node_id.clone(),
                f.to_string(),
                k.to_string(),
                vocab.name(k).unwrap_or_default().to_string(),
                s.to_string(),
                m.counts[k].to_string(),
            ]
        })
        .collect()
}

fn write_scores(run: &Run, m: &ScoreMatrix, vocab: &ClassVocabulary) -> Result<()> {
    let stem = format!("scores/{}", node_file(&m.node_id));
    m.write(&run.path(&stem)?, &run.provenance)?;
    run.write_csv(&format!("{stem}.csv"), &m.to_csv(vocab))?;
    Ok(())
}

fn compute_scores(
    run: &Run,
    g: &ModelGraph<f32>,
    node: &str,
    images: &Images<f32>,
    dets: &[Detection],
    vocab: &ClassVocabulary,
) -> Result<ScoreMatrix> {
    let m = build_score_matrix(g, node, images, dets, vocab).with_context(|| format!("scoring layer `{node}`"))?;
    write_scores(run, &m, vocab)?;
    Ok(m)
}

pub fn emocam(run: &Run) -> Result<Vec<ScoreMatrix>> {
    let g = run.graph()?;
    let layers = run.layers(&g)?;
    let vocab = run.vocab()?;
    let dets = run.detections(&vocab)?;
    let images = run.images(&run.cfg().score_corpus, "score_corpus", g.input_shape())?;
    let mut out = Vec::new();
    let mut summary = Vec::new();
    for layer in layers.layers() {
        let m = compute_scores(run, &g, &layer.node_id, &images, &dets, &vocab)?;
        summary.extend(top_pairs(&m, &vocab));
        out.push(m);
    }
    run.write_csv(
        "emocam_top.csv",
        &io::csv_string(&["layer", "filter", "class_id", "class", "score", "detections"], summary),
    )?;
    Ok(out)
}

/// Inputs of the ablation sweep, evaluated in double precision.
struct AblationInputs {
    graph: ModelGraph<f64>,
    images: Images<f64>,
    targets: TargetTable,
    base: PredictionTable,
}

impl AblationInputs {
    fn load(run: &Run, g: &ModelGraph<f32>) -> Result<Self> {
        let graph = g.cast::<f64>();
        let images: Images<f64> = run
            .images(&run.cfg().corpus, "corpus", g.input_shape())?
            .into_iter()
            .map(|(id, x)| (id, x.cast()))
            .collect();
        let targets = run.targets()?;
        let base = base_predictions(&graph, &images)?;
        Ok(Self { graph, images, targets, base })
    }

    fn deltas(&self, run: &Run, node: &str) -> Result<DeltaMatrix> {
        let d = ablation_deltas(&self.graph, node, &self.images, &self.targets, &self.base)
            .with_context(|| format!("ablating layer `{node}`"))?;
        if d.undefined() > 0 {
            log::warn!("layer `{node}`: {} undefined correlation deltas", d.undefined());
        }
        let stem = format!("deltas/{}", node_file(node));
        run.write_csv(&format!("{stem}.csv"), &d.to_csv())?;
        run.write(&format!("{stem}.json"), &d.to_json(&run.provenance))?;
        Ok(d)
    }
}

pub fn ablate(run: &Run) -> Result<Vec<DeltaMatrix>> {
    let g = run.graph()?;
    let layers = run.layers(&g)?;
    let inputs = AblationInputs::load(run, &g)?;
    layers.layers().iter().map(|l| inputs.deltas(run, &l.node_id)).collect()
}

pub fn overlap(run: &Run) -> Result<PathBuf> {
    let cats = run.categories()?;
    let vocab = run.vocab()?;
    let dets = run.detections(&vocab)?;
    let m = overlap_matrix(&dets, &cats)?;
    run.write_csv("overlap.csv", &m.to_csv())?;
    let json = m.to_json(&run.provenance);
    let path = run.write("overlap.json", &json)?;
    run.write("overlap.svg", &plot::render_value(&serde_json::from_str(&json)?, None)?)?;
    Ok(path)
}

/// Artifacts of the object-to-alignment stage.
pub struct O2bOutputs {
    pub cross_layer: CrossLayer,
    pub cross_architecture: CrossArchitecture,
    pub checks: usize,
}

pub fn attribution(run: &Run) -> Result<O2bOutputs> {
    let g = run.graph()?;
    let layers = run.layers(&g)?;
    let vocab = run.vocab()?;
    let cats = run.categories()?;
    let x = run.top_x();
    let selected = plot::selection(&cats, &run.cfg().select)?;

    let mut detections: Option<(Vec<Detection>, Images<f32>)> = None;
    let mut ablation: Option<AblationInputs> = None;
    let mut layer_points = Vec::new();
    let mut labels = Vec::new();
    for layer in layers.layers() {
        let node = layer.node_id.as_str();
        let file = node_file(node);

        let score_stem = run.out.join(format!("scores/{file}"));
        let scores = if run.is_current(&io::with_ext(&score_stem, "json")) {
            ScoreMatrix::read(&score_stem)?
        } else {
            if detections.is_none() {
                let dets = run.detections(&vocab)?;
                let images = run.images(&run.cfg().score_corpus, "score_corpus", g.input_shape())?;
                detections = Some((dets, images));
            }
            let (dets, images) = detections.as_ref().expect("loaded above");
            compute_scores(run, &g, node, images, dets, &vocab)?
        };

        let delta_json = run.out.join(format!("deltas/{file}.json"));
        let delta = if run.is_current(&delta_json) {
            DeltaMatrix::read_json(&delta_json)?
        } else {
            if ablation.is_none() {
                ablation = Some(AblationInputs::load(run, &g)?);
            }
            ablation.as_ref().expect("loaded above").deltas(run, node)?
        };

        let cube = weight_cube(&delta, &scores)?;
        let dir = format!("o2b/{file}");
        cube.write(&run.path(&format!("{dir}/cube"))?, &run.provenance)?;
        let weights = class_weights(&cube);
        run.write_csv(&format!("{dir}/class_weights.csv"), &weights.to_csv(&vocab))?;
        run.write(&format!("{dir}/class_weights.json"), &weights.to_json(&run.provenance))?;
        let rows = topx_category_contributions(&weights, &vocab, &cats, x)?;
        run.write_csv(&format!("{dir}/contributions.csv"), &contributions_to_csv(&rows))?;
        let points = plot::points(&rows, &selected);
        run.write(
            &format!("{dir}/contributions.json"),
            &io::to_json(&ContributionsFile { node_id: node.to_string(), x, rows, provenance: run.provenance.clone() }),
        )?;
        run.write(
            &format!("{dir}/scatter.json"),
            &io::to_json(&LayerScatter {
                kind: plot::LAYER_SCATTER.into(),
                node_id: node.to_string(),
                x,
                categories: selected.clone(),
                points: points.clone(),
                provenance: run.provenance.clone(),
            }),
        )?;
        labels = delta.targets.clone();
        layer_points.push(LayerPoints { node_id: node.to_string(), filters: layer.filters, points });
    }

    let architecture =
        Some(g.metadata().architecture.clone()).filter(|a| !a.is_empty()).unwrap_or_else(|| "model".into());
    let cross_layer = CrossLayer {
        kind: plot::CROSS_LAYER.into(),
        architecture: architecture.clone(),
        x,
        categories: selected.clone(),
        targets: labels.clone(),
        layers: layer_points,
        provenance: run.provenance.clone(),
    };
    run.write("cross_layer.json", &io::to_json(&cross_layer))?;
    run.write("scatter.svg", &plot::cross_layer_svg(&cross_layer, run.cfg().plot_target.as_deref())?)?;

    let mut architectures = vec![ArchitectureLayers { name: architecture, x, layers: cross_layer.layers.clone() }];
    for a in &run.cfg().architectures {
        let other: CrossLayer = io::read_json(&a.cross_layer)?;
        if other.targets != labels {
            bail!("{}: targets differ from this run's", a.cross_layer.display());
        }
        architectures.push(ArchitectureLayers {
            name: a.name.clone(),
            x: other.x,
            layers: other
                .layers
                .into_iter()
                .map(|l| LayerPoints {
                    points: l.points.into_iter().filter(|p| selected.contains(&p.category)).collect(),
                    ..l
                })
                .collect(),
        });
    }
    let cross_architecture = CrossArchitecture {
        kind: plot::CROSS_ARCHITECTURE.into(),
        categories: selected.clone(),
        targets: labels,
        architectures,
        provenance: run.provenance.clone(),
    };
    run.write("cross_architecture.json", &io::to_json(&cross_architecture))?;
    run.write(
        "cross_architecture.svg",
        &plot::cross_architecture_svg(&cross_architecture, run.cfg().plot_target.as_deref())?,
    )?;

    overlap(run)?;
    let checks = validate::emitted(&run.out, &layers, &vocab, &cats, &selected)?;
    log::info!("re-validated {checks} emitted artifacts");
    Ok(O2bOutputs { cross_layer, cross_architecture, checks })
}

/// Every stage in order.
pub fn pipeline(run: &Run) -> Result<()> {
    predict(run)?;
    correlate(run)?;
    emocam(run)?;
    ablate(run)?;
    attribution(run)?;
    Ok(())
}

//! Object-level attribution: single-filter ablation deltas, the filter-weighted
//! class cube, per-target class weights and their category aggregation.

mod categories;
mod cube;

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::DetectionError;
use crate::engine::{forward, predict, EngineError, PredictionTable, ResumePlan};
use crate::io::{self, IoError, Provenance};
use crate::model::{AblationMask, ModelError, ModelGraph, TargetLayerSet};
use crate::stats::{spearman_r, StatsError, Target, TargetTable};
use crate::tensor::{Scalar, Tensor};

pub use categories::{contributions_to_csv, topx_category_contributions, CategoryContribution, DEFAULT_TOP_X};
pub use cube::{class_weights, weight_cube, ClassWeights, WeightCube};

#[derive(Debug, Error)]
pub enum O2bError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{0}")]
    Invalid(String),
}

/// Smallest split size for which a p-value exists.
const MIN_SPLIT: usize = 4;

/// Correlation change per (filter, target) when that filter alone is ablated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaMatrix {
    pub node_id: String,
    pub targets: Vec<String>,
    /// Correlation of the intact network with each target.
    pub base: Vec<Option<f64>>,
    /// Row-major `filters x targets`: base minus ablated correlation, `None`
    /// where either correlation is undefined.
    pub values: Vec<Option<f64>>,
}

#[derive(Serialize)]
struct DeltaJson<'a> {
    #[serde(flatten)]
    matrix: &'a DeltaMatrix,
    provenance: &'a Provenance,
}

#[derive(Deserialize)]
struct DeltaFile {
    #[serde(flatten)]
    matrix: DeltaMatrix,
    #[serde(default)]
    #[allow(dead_code)]
    provenance: Provenance,
}

fn cell(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

impl DeltaMatrix {
    pub fn filters(&self) -> usize {
        self.values.len() / self.targets.len().max(1)
    }

    pub fn get(&self, filter: usize, target: usize) -> Option<f64> {
        self.values[filter * self.targets.len() + target]
    }

    pub fn row(&self, filter: usize) -> &[Option<f64>] {
        let n = self.targets.len();
        &self.values[filter * n..(filter + 1) * n]
    }

    pub fn undefined(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    /// Checks the shape and that every defined cell is finite.
    pub fn validate(&self) -> Result<(), O2bError> {
        let n = self.targets.len();
        if n == 0 || self.base.len() != n || !self.values.len().is_multiple_of(n) {
            return Err(O2bError::Shape(format!(
                "{} values over {} targets with {} base correlations",
                self.values.len(),
                n,
                self.base.len()
            )));
        }
        if self.values.iter().chain(&self.base).flatten().any(|v| !v.is_finite()) {
            return Err(O2bError::Invalid("non-finite correlation delta".into()));
        }
        Ok(())
    }

    /// Wide CSV: a `base` row, then one row per filter; undefined cells are blank.
    pub fn to_csv(&self) -> String {
        let mut header = vec!["filter"];
        header.extend(self.targets.iter().map(String::as_str));
        let base = std::iter::once(
            std::iter::once("base".to_string()).chain(self.base.iter().map(|v| cell(*v))).collect::<Vec<_>>(),
        );
        let rows = (0..self.filters())
            .map(|f| std::iter::once(f.to_string()).chain(self.row(f).iter().map(|v| cell(*v))).collect::<Vec<_>>());
        io::csv_string(&header, base.chain(rows))
    }

    pub fn to_json(&self, provenance: &Provenance) -> String {
        io::to_json(&DeltaJson { matrix: self, provenance })
    }

    pub fn read_json(path: &Path) -> Result<Self, O2bError> {
        let file: DeltaFile = io::read_json(path)?;
        file.matrix.validate()?;
        Ok(file.matrix)
    }
}

/// How ablated predictions are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    /// Resume from the cached target activation when the target dominates the output.
    Auto,
    /// Always resume; errors when the target does not dominate the output.
    Resume,
    /// Always run the full network.
    Full,
}

fn correlate(predictions: &PredictionTable, target: &Target) -> Result<Option<f64>, StatsError> {
    let x = predictions.select(target.image_ids.iter().map(String::as_str)).map_err(StatsError::MissingStimuli)?;
    match spearman_r(&x, &target.values) {
        Ok(r) => Ok(Some(r)),
        Err(StatsError::Undefined) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Predictions of the intact network for every image.
pub fn base_predictions<T: Scalar>(
    graph: &ModelGraph<T>,
    images: &[(String, Tensor<T>)],
) -> Result<PredictionTable, O2bError> {
    let empty = AblationMask::empty();
    let rows = images
        .par_iter()
        .map(|(id, x)| Ok((id.clone(), predict(graph, x, &empty)?.as_f64())))
        .collect::<Result<Vec<_>, EngineError>>()?;
    Ok(PredictionTable::new(rows)?)
}

/// [`ablation_deltas_with`] using [`Sweep::Auto`].
pub fn ablation_deltas<T: Scalar>(
    graph: &ModelGraph<T>,
    node: &str,
    images: &[(String, Tensor<T>)],
    targets: &TargetTable,
    base: &PredictionTable,
) -> Result<DeltaMatrix, O2bError> {
    ablation_deltas_with(graph, node, images, targets, base, Sweep::Auto)
}

/// Ablates every channel of `node` in turn and records how each target
/// correlation drops. `base` holds the unmasked predictions; only the images
/// named by `targets` are evaluated.
pub fn ablation_deltas_with<T: Scalar>(
    graph: &ModelGraph<T>,
    node: &str,
    images: &[(String, Tensor<T>)],
    targets: &TargetTable,
    base: &PredictionTable,
    sweep: Sweep,
) -> Result<DeltaMatrix, O2bError> {
    let layers = TargetLayerSet::new(graph, &[node])?;
    let filters = layers.layers()[0].filters;
    if targets.is_empty() {
        return Err(O2bError::Invalid("no correlation targets".into()));
    }
    if let Some(t) = targets.targets.iter().find(|t| t.values.len() < MIN_SPLIT) {
        return Err(StatsError::TooShort(t.values.len(), MIN_SPLIT).into());
    }

    let needed = targets.image_ids();
    let mut subset: Vec<&(String, Tensor<T>)> = images.iter().filter(|(id, _)| needed.contains(id.as_str())).collect();
    subset.sort_by(|a, b| a.0.cmp(&b.0));
    if let Some(w) = subset.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(O2bError::Invalid(format!("image `{}` appears twice", w[0].0)));
    }
    let have: BTreeSet<&str> = subset.iter().map(|(id, _)| id.as_str()).collect();
    let missing: Vec<String> = needed.difference(&have).map(|s| s.to_string()).collect();
    if !missing.is_empty() {
        return Err(StatsError::MissingStimuli(missing).into());
    }

    let base_r = targets.targets.iter().map(|t| correlate(base, t)).collect::<Result<Vec<_>, _>>()?;

    let idx = graph.require(node)?;
    let plan = match sweep {
        Sweep::Full => None,
        Sweep::Resume => Some(ResumePlan::new(graph, node)?),
        Sweep::Auto => graph.dominates_output(idx).then(|| ResumePlan::new(graph, node)).transpose()?,
    };
    let empty = AblationMask::empty();
    let cached: Vec<Tensor<T>> = match plan {
        Some(_) => subset
            .par_iter()
            .map(|(_, x)| {
                let mut pass = forward(graph, x, &empty, &[node])?;
                Ok(pass.captures.remove(node).expect("requested capture"))
            })
            .collect::<Result<_, EngineError>>()?,
        None => Vec::new(),
    };

    let rows = (0..filters)
        .into_par_iter()
        .map(|f| {
            let mask = AblationMask::single(node, f);
            let preds = subset
                .iter()
                .enumerate()
                .map(|(i, (id, x))| {
                    let p = match &plan {
                        Some(plan) => plan.run(graph, &cached[i], &mask)?,
                        None => predict(graph, x, &mask)?,
                    };
                    Ok((id.clone(), p.as_f64()))
                })
                .collect::<Result<Vec<_>, EngineError>>()?;
            let ablated = PredictionTable::new(preds)?;
            targets
                .targets
                .iter()
                .zip(&base_r)
                .map(|(t, b)| Ok(b.zip(correlate(&ablated, t)?).map(|(b, a)| b - a)))
                .collect::<Result<Vec<_>, O2bError>>()
        })
        .collect::<Result<Vec<_>, O2bError>>()?;

    let matrix = DeltaMatrix {
        node_id: node.to_string(),
        targets: targets.labels(),
        base: base_r,
        values: rows.into_iter().flatten().collect(),
    };
    matrix.validate()?;
    Ok(matrix)
}

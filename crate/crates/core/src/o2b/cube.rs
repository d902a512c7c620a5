use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DeltaMatrix, O2bError};
use crate::detection::{ClassVocabulary, ScoreMatrix};
use crate::io::{self, IoError, Provenance};

/// Per-target, per-filter, per-class weights, row-major `targets x filters x classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightCube {
    pub node_id: String,
    pub targets: Vec<String>,
    pub filters: usize,
    pub classes: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CubeSidecar {
    node_id: String,
    targets: Vec<String>,
    filters: usize,
    classes: usize,
    dtype: String,
    layout: String,
    #[serde(default)]
    provenance: Provenance,
}

impl WeightCube {
    pub fn get(&self, target: usize, filter: usize, class: usize) -> f64 {
        self.values[(target * self.filters + filter) * self.classes + class]
    }

    /// The `filters x classes` slice of one target.
    pub fn slice(&self, target: usize) -> &[f64] {
        let n = self.filters * self.classes;
        &self.values[target * n..(target + 1) * n]
    }

    /// Writes `<stem>.bin` (f32, little-endian) and `<stem>.json`.
    pub fn write(&self, stem: &Path, provenance: &Provenance) -> Result<PathBuf, IoError> {
        let bin = io::with_ext(stem, "bin");
        io::write_bytes(&bin, &io::f32_le_bytes(self.values.iter().map(|&v| v as f32)))?;
        io::write_json(
            &io::with_ext(stem, "json"),
            &CubeSidecar {
                node_id: self.node_id.clone(),
                targets: self.targets.clone(),
                filters: self.filters,
                classes: self.classes,
                dtype: "f32".into(),
                layout: "row-major targets x filters x classes".into(),
                provenance: provenance.clone(),
            },
        )?;
        Ok(bin)
    }

    /// Reads a cube written by [`WeightCube::write`]; values are the stored singles.
    pub fn read(stem: &Path) -> Result<Self, IoError> {
        let json = io::with_ext(stem, "json");
        let s: CubeSidecar = io::read_json(&json)?;
        if s.dtype != "f32" {
            return Err(IoError::new(&json, format!("unsupported dtype `{}`", s.dtype)));
        }
        let bin = io::with_ext(stem, "bin");
        let n = s.targets.len() * s.filters * s.classes;
        let values = io::f32_from_le(&bin, &io::read_bytes(&bin)?, n)?;
        Ok(Self {
            node_id: s.node_id,
            targets: s.targets,
            filters: s.filters,
            classes: s.classes,
            values: values.into_iter().map(f64::from).collect(),
        })
    }
}

/// `W[i, j, k] = C[j, i] * S[j, k]`; undefined deltas contribute zero.
pub fn weight_cube(delta: &DeltaMatrix, scores: &ScoreMatrix) -> Result<WeightCube, O2bError> {
    delta.validate()?;
    if delta.node_id != scores.node_id {
        return Err(O2bError::Shape(format!(
            "delta matrix for `{}`, score matrix for `{}`",
            delta.node_id, scores.node_id
        )));
    }
    let (nt, nf, nc) = (delta.targets.len(), delta.filters(), scores.classes);
    if nf != scores.filters || scores.values.len() != nf * nc {
        return Err(O2bError::Shape(format!(
            "{nf} filters in the delta matrix, {} in the score matrix",
            scores.filters
        )));
    }
    let mut values = Vec::with_capacity(nt * nf * nc);
    for i in 0..nt {
        for j in 0..nf {
            let c = delta.get(j, i).unwrap_or(0.0);
            values.extend(scores.row(j).iter().map(|s| c * s));
        }
    }
    Ok(WeightCube { node_id: delta.node_id.clone(), targets: delta.targets.clone(), filters: nf, classes: nc, values })
}

/// Overall class importance per target, row-major `targets x classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub node_id: String,
    pub targets: Vec<String>,
    pub classes: usize,
    pub values: Vec<f64>,
}

#[derive(Serialize)]
struct WeightsJson<'a> {
    #[serde(flatten)]
    weights: &'a ClassWeights,
    provenance: &'a Provenance,
}

#[derive(Deserialize)]
struct WeightsFile {
    #[serde(flatten)]
    weights: ClassWeights,
}

impl ClassWeights {
    pub fn get(&self, target: usize, class: usize) -> f64 {
        self.values[target * self.classes + class]
    }

    pub fn row(&self, target: usize) -> &[f64] {
        &self.values[target * self.classes..(target + 1) * self.classes]
    }

    /// Wide CSV: one row per target, one column per class name.
    pub fn to_csv(&self, vocab: &ClassVocabulary) -> String {
        let mut header = vec!["target"];
        header.extend(vocab.names().iter().map(String::as_str));
        io::csv_string(
            &header,
            self.targets
                .iter()
                .enumerate()
                .map(|(t, label)| std::iter::once(label.clone()).chain(self.row(t).iter().map(|v| v.to_string()))),
        )
    }

    pub fn to_json(&self, provenance: &Provenance) -> String {
        io::to_json(&WeightsJson { weights: self, provenance })
    }

    pub fn read_json(path: &Path) -> Result<Self, O2bError> {
        let file: WeightsFile = io::read_json(path)?;
        let w = file.weights;
        if w.values.len() != w.targets.len() * w.classes {
            return Err(O2bError::Shape(format!(
                "{} values for {} targets x {} classes",
                w.values.len(),
                w.targets.len(),
                w.classes
            )));
        }
        Ok(w)
    }
}

/// Sums the cube over filters in ascending filter order.
pub fn class_weights(cube: &WeightCube) -> ClassWeights {
    let (nf, nc) = (cube.filters, cube.classes);
    let mut values = vec![0.0; cube.targets.len() * nc];
    for (t, out) in values.chunks_mut(nc.max(1)).enumerate().take(cube.targets.len()) {
        let slice = cube.slice(t);
        for j in 0..nf {
            for (o, w) in out.iter_mut().zip(&slice[j * nc..(j + 1) * nc]) {
                *o += w;
            }
        }
    }
    ClassWeights { node_id: cube.node_id.clone(), targets: cube.targets.clone(), classes: nc, values }
}

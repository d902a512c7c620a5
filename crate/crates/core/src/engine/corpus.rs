//! Preprocessed image corpora and prediction tables.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{predict, EngineError};
use crate::model::{AblationMask, ModelGraph};
use crate::tensor::{Scalar, Tensor};

pub const CORPUS_FORMAT: &str = "o2b-corpus";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusEntry {
    pub image_id: String,
    /// Blob path, relative to the manifest directory unless absolute.
    pub path: PathBuf,
    pub shape: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub format: String,
    pub images: Vec<CorpusEntry>,
    /// Free-form record of how the blobs were produced (target size, normalization constants).
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub preprocessing: Value,
}

/// A corpus manifest resolved against its directory, entries sorted by image id.
#[derive(Debug, Clone)]
pub struct Corpus {
    root: PathBuf,
    entries: Vec<CorpusEntry>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> EngineError {
    EngineError::Io { path: path.display().to_string(), message: e.to_string() }
}

impl Corpus {
    pub fn load(manifest: impl AsRef<Path>) -> Result<Self, EngineError> {
        let path = manifest.as_ref();
        let text = fs::read(path).map_err(|e| io_err(path, e))?;
        let m: CorpusManifest = serde_json::from_slice(&text).map_err(|e| io_err(path, e))?;
        if m.format != CORPUS_FORMAT {
            return Err(io_err(path, format!("unsupported corpus format `{}`", m.format)));
        }
        Self::from_entries(path.parent().unwrap_or(Path::new(".")), m.images)
    }

    pub fn from_entries(root: impl Into<PathBuf>, mut entries: Vec<CorpusEntry>) -> Result<Self, EngineError> {
        entries.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        if let Some(w) = entries.windows(2).find(|w| w[0].image_id == w[1].image_id) {
            return Err(EngineError::Image { image_id: w[0].image_id.clone(), reason: "listed more than once".into() });
        }
        Ok(Self { root: root.into(), entries })
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.image_id.as_str())
    }

    /// Reads one blob, checking it against both the manifest and `expected`.
    pub fn read_image(&self, entry: &CorpusEntry, expected: [usize; 3]) -> Result<Tensor<f32>, EngineError> {
        let bad = |reason: String| EngineError::Image { image_id: entry.image_id.clone(), reason };
        if entry.shape != expected {
            return Err(bad(format!("shape {:?} does not match the model input {expected:?}", entry.shape)));
        }
        let path = self.root.join(&entry.path);
        let bytes = fs::read(&path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        let n: usize = expected.iter().product();
        if bytes.len() != n * 4 {
            return Err(bad(format!("blob holds {} bytes, expected {}", bytes.len(), n * 4)));
        }
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Tensor::new(expected.to_vec(), data).map_err(|e| bad(e.to_string()))
    }

    /// Every image, in image-id order.
    pub fn read_all(&self, expected: [usize; 3]) -> Result<Vec<(String, Tensor<f32>)>, EngineError> {
        self.entries.par_iter().map(|e| Ok((e.image_id.clone(), self.read_image(e, expected)?))).collect()
    }
}

/// Writes `images` as little-endian f32 blobs plus a `corpus.json` manifest; returns the manifest path.
pub fn write_corpus(
    dir: impl AsRef<Path>,
    images: &[(String, Tensor<f32>)],
    preprocessing: Value,
) -> Result<PathBuf, EngineError> {
    let dir = dir.as_ref();
    let blobs = dir.join("blobs");
    fs::create_dir_all(&blobs).map_err(|e| io_err(&blobs, e))?;
    let mut entries = Vec::with_capacity(images.len());
    for (i, (id, t)) in images.iter().enumerate() {
        let shape: [usize; 3] = t.shape().try_into().map_err(|_| EngineError::Image {
            image_id: id.clone(),
            reason: format!("shape {:?} is not CHW", t.shape()),
        })?;
        let rel = PathBuf::from("blobs").join(format!("{i:05}.bin"));
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join(&rel), bytes).map_err(|e| io_err(&dir.join(&rel), e))?;
        entries.push(CorpusEntry { image_id: id.clone(), path: rel, shape });
    }
    let manifest = CorpusManifest { format: CORPUS_FORMAT.into(), images: entries, preprocessing };
    let path = dir.join("corpus.json");
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// One prediction per image, sorted by image id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionTable {
    rows: Vec<(String, f64)>,
}

impl PredictionTable {
    pub fn new(mut rows: Vec<(String, f64)>) -> Result<Self, EngineError> {
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(EngineError::Table(format!("duplicate image id `{}`", w[0].0)));
        }
        if let Some((id, _)) = rows.iter().find(|(_, v)| !v.is_finite()) {
            return Err(EngineError::Table(format!("non-finite prediction for `{id}`")));
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[(String, f64)] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<f64> {
        self.rows.binary_search_by(|(id, _)| id.as_str().cmp(image_id)).ok().map(|i| self.rows[i].1)
    }

    /// Predictions for `ids` in the given order; the error lists every missing id.
    pub fn select<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<Vec<f64>, Vec<String>> {
        let mut missing = Vec::new();
        let out: Vec<f64> = ids
            .into_iter()
            .filter_map(|id| {
                let v = self.get(id);
                if v.is_none() {
                    missing.push(id.to_string());
                }
                v
            })
            .collect();
        if missing.is_empty() {
            Ok(out)
        } else {
            Err(missing)
        }
    }

    pub fn ids(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|(id, _)| id.as_str()).collect()
    }

    /// CSV body with header `image_id,prediction`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["image_id", "prediction"]).expect("in-memory write");
        for (id, p) in &self.rows {
            w.write_record([id.as_str(), &p.to_string()]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    /// Parses CSV text; lines starting with `#` are ignored.
    pub fn from_csv(text: &str) -> Result<Self, EngineError> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let headers = r.headers().map_err(|e| EngineError::Table(e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["image_id", "prediction"] {
            return Err(EngineError::Table(format!("expected header image_id,prediction, found {headers:?}")));
        }
        let mut rows = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| EngineError::Table(e.to_string()))?;
            let value =
                rec[1].trim().parse::<f64>().map_err(|e| EngineError::Table(format!("row {}: {e}", line + 1)))?;
            rows.push((rec[0].to_string(), value));
        }
        Self::new(rows)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, EngineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_csv(&text).map_err(|e| io_err(path, e))
    }
}

/// Predictions for in-memory images, evaluated in parallel; row order follows image id.
pub fn predict_images<T: Scalar>(
    graph: &ModelGraph<T>,
    images: &[(String, Tensor<T>)],
    mask: &AblationMask,
) -> Result<PredictionTable, EngineError> {
    let rows = images
        .par_iter()
        .map(|(id, x)| {
            let p = predict(graph, x, mask)
                .map_err(|e| EngineError::Image { image_id: id.clone(), reason: e.to_string() })?;
            Ok((id.clone(), p.as_f64()))
        })
        .collect::<Result<Vec<_>, EngineError>>()?;
    PredictionTable::new(rows)
}

/// Loads every image of `corpus` and predicts it.
pub fn predict_corpus(
    graph: &ModelGraph<f32>,
    corpus: &Corpus,
    mask: &AblationMask,
) -> Result<PredictionTable, EngineError> {
    mask.validate(graph)?;
    let images = corpus.read_all(graph.input_shape())?;
    predict_images(graph, &images, mask)
}

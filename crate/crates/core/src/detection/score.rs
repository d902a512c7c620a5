use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ClassVocabulary, Detection, DetectionError};
use crate::engine::forward;
use crate::gradcam::{backward_to_layer, channel_weights, filter_cam_plane, FilterCamMap};
use crate::io::{self, IoError, Provenance};
use crate::model::{AblationMask, ModelGraph, TargetLayerSet};
use crate::tensor::{Scalar, Tensor};

/// Pixel rectangle `[y0, y1) x [x0, x1)` of a map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoxRegion {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

fn axis_span(lo: f64, hi: f64, scale: f64, size: usize) -> (usize, usize) {
    let a = (lo * scale).floor().max(0.0) as usize;
    let b = ((hi * scale).ceil().max(0.0) as usize).min(size);
    (a.min(size), b)
}

/// Pixels of an `h x w` map covered by a box given in an `image_w x image_h` frame.
/// A pixel belongs to the box when their interiors intersect.
pub fn box_region(bbox: [f64; 4], (image_w, image_h): (f64, f64), (h, w): (usize, usize)) -> Option<BoxRegion> {
    let [x1, y1, x2, y2] = bbox;
    let (x0, x1) = axis_span(x1, x2, w as f64 / image_w, w);
    let (y0, y1) = axis_span(y1, y2, h as f64 / image_h, h);
    (x1 > x0 && y1 > y0).then_some(BoxRegion { y0, y1, x0, x1 })
}

/// `max / (1 + (max - mean))`: equals `max` for a homogeneous region and
/// shrinks as the peak stands out from the mean.
pub fn peak_mean_score(max: f64, mean: f64) -> f64 {
    max / (1.0 + (max - mean))
}

/// [`peak_mean_score`] over a region of a row-major map. The peak-to-mean gap is
/// accumulated directly, so a homogeneous region scores exactly its value.
pub fn score_region<T: Scalar>(map: &[T], width: usize, r: BoxRegion) -> f64 {
    let rows = || (r.y0..r.y1).flat_map(move |y| map[y * width + r.x0..y * width + r.x1].iter().map(|v| v.as_f64()));
    let max = rows().fold(f64::NEG_INFINITY, f64::max);
    let gap = rows().map(|v| max - v).sum::<f64>() / ((r.y1 - r.y0) * (r.x1 - r.x0)) as f64;
    max / (1.0 + gap)
}

/// Box score of a normalized map; `bbox` is in map pixel coordinates.
pub fn score_box<T: Scalar>(cam: &FilterCamMap<T>, bbox: [f64; 4]) -> Result<f64, DetectionError> {
    let (h, w) = (cam.height, cam.width);
    let r =
        box_region(bbox, (w as f64, h as f64), (h, w)).ok_or(DetectionError::EmptyBox { bbox, height: h, width: w })?;
    Ok(score_region(&cam.map, w, r))
}

/// Mean box score per (filter, class) at one layer, row-major `filters x classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub node_id: String,
    pub filters: usize,
    pub classes: usize,
    pub values: Vec<f64>,
    /// Retained detections per class.
    pub counts: Vec<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreSidecar {
    node_id: String,
    filters: usize,
    classes: usize,
    dtype: String,
    layout: String,
    counts: Vec<u64>,
    #[serde(default)]
    provenance: Provenance,
}

impl ScoreMatrix {
    pub fn zeros(node_id: &str, filters: usize, classes: usize) -> Self {
        Self {
            node_id: node_id.to_string(),
            filters,
            classes,
            values: vec![0.0; filters * classes],
            counts: vec![0; classes],
        }
    }

    pub fn get(&self, filter: usize, class: usize) -> f64 {
        self.values[filter * self.classes + class]
    }

    pub fn row(&self, filter: usize) -> &[f64] {
        &self.values[filter * self.classes..(filter + 1) * self.classes]
    }

    /// Classes whose column is zero for every filter.
    pub fn zero_columns(&self) -> usize {
        (0..self.classes).filter(|&k| (0..self.filters).all(|f| self.get(f, k) == 0.0)).count()
    }

    pub fn detected_classes(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// Wide CSV: one row per filter, one column per class name.
    pub fn to_csv(&self, vocab: &ClassVocabulary) -> String {
        let mut header = vec!["filter"];
        header.extend(vocab.names().iter().map(String::as_str));
        io::csv_string(
            &header,
            (0..self.filters).map(|f| std::iter::once(f.to_string()).chain(self.row(f).iter().map(|v| v.to_string()))),
        )
    }

    /// Writes `<stem>.bin` (f64, little-endian) and `<stem>.json`.
    pub fn write(&self, stem: &Path, provenance: &Provenance) -> Result<PathBuf, IoError> {
        let bin = io::with_ext(stem, "bin");
        io::write_bytes(&bin, &io::f64_le_bytes(&self.values))?;
        io::write_json(
            &io::with_ext(stem, "json"),
            &ScoreSidecar {
                node_id: self.node_id.clone(),
                filters: self.filters,
                classes: self.classes,
                dtype: "f64".into(),
                layout: "row-major filters x classes".into(),
                counts: self.counts.clone(),
                provenance: provenance.clone(),
            },
        )?;
        Ok(bin)
    }

    /// Reads a matrix from the stem used by [`ScoreMatrix::write`].
    pub fn read(stem: &Path) -> Result<Self, IoError> {
        let json = io::with_ext(stem, "json");
        let s: ScoreSidecar = io::read_json(&json)?;
        if s.dtype != "f64" || s.counts.len() != s.classes {
            return Err(IoError::new(&json, "inconsistent score matrix sidecar"));
        }
        let bin = io::with_ext(stem, "bin");
        let values = io::f64_from_le(&bin, &io::read_bytes(&bin)?, s.filters * s.classes)?;
        Ok(Self { node_id: s.node_id, filters: s.filters, classes: s.classes, values, counts: s.counts })
    }
}

/// Canonical order of detections within one image, independent of file order.
fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    a.class_id
        .cmp(&b.class_id)
        .then_with(|| {
            a.bbox.iter().zip(&b.bbox).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
        })
        .then_with(|| a.confidence.total_cmp(&b.confidence))
}

/// Scores of every detection of one image under every filter: `[detection][filter]`.
fn score_image<T: Scalar>(
    graph: &ModelGraph<T>,
    target: &str,
    image: &Tensor<T>,
    dets: &[&Detection],
) -> Result<Vec<Vec<f64>>, DetectionError> {
    let pass = forward(graph, image, &AblationMask::empty(), &[target])?;
    let grad = backward_to_layer(graph, &pass, target)?;
    let act = &pass.captures[target];
    let (c, h, w) = act.dims3("score_image").map_err(crate::gradcam::CamError::from)?;
    let alphas = channel_weights(&grad).map_err(crate::gradcam::CamError::from)?;
    let [_, ih, iw] = graph.input_shape();
    let regions = dets
        .iter()
        .map(|d| {
            box_region(d.bbox, (d.image_w, d.image_h), (ih, iw)).ok_or(DetectionError::EmptyBox {
                bbox: d.bbox,
                height: ih,
                width: iw,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = vec![vec![0.0; c]; dets.len()];
    for ch in 0..c {
        let (plane, _) = filter_cam_plane(act.channel(ch), alphas[ch], (h, w), (ih, iw));
        for (row, r) in out.iter_mut().zip(&regions) {
            row[ch] = score_region(&plane, iw, *r);
        }
    }
    Ok(out)
}

/// Mean box score per (filter, class) over every retained detection of the corpus.
/// Per-image work runs in parallel; accumulation follows image id, then canonical detection order.
pub fn build_score_matrix<T: Scalar>(
    graph: &ModelGraph<T>,
    target: &str,
    images: &[(String, Tensor<T>)],
    detections: &[Detection],
    vocab: &ClassVocabulary,
) -> Result<ScoreMatrix, DetectionError> {
    let targets = TargetLayerSet::new(graph, &[target]).map_err(crate::engine::EngineError::from)?;
    let filters = targets.layers()[0].filters;
    let by_id: BTreeMap<&str, &Tensor<T>> = images.iter().map(|(id, t)| (id.as_str(), t)).collect();
    let mut groups: BTreeMap<&str, Vec<&Detection>> = BTreeMap::new();
    for d in detections {
        vocab.check(d)?;
        if !by_id.contains_key(d.image_id.as_str()) {
            return Err(DetectionError::Invalid {
                image_id: d.image_id.clone(),
                reason: "image is not in the corpus".into(),
            });
        }
        groups.entry(&d.image_id).or_default().push(d);
    }
    for dets in groups.values_mut() {
        dets.sort_by(|a, b| detection_order(a, b));
    }
    let groups: Vec<(&str, Vec<&Detection>)> = groups.into_iter().collect();
    let scored = groups
        .par_iter()
        .map(|(id, dets)| score_image(graph, target, by_id[id], dets))
        .collect::<Result<Vec<_>, _>>()?;

    let mut m = ScoreMatrix::zeros(target, filters, vocab.len());
    for ((_, dets), scores) in groups.iter().zip(&scored) {
        for (d, row) in dets.iter().zip(scores) {
            m.counts[d.class_id] += 1;
            for (f, s) in row.iter().enumerate() {
                m.values[f * m.classes + d.class_id] += s;
            }
        }
    }
    for f in 0..filters {
        for k in 0..m.classes {
            if m.counts[k] > 0 {
                m.values[f * m.classes + k] /= m.counts[k] as f64;
            }
        }
    }
    Ok(m)
}

//! Object detections, the detector vocabulary and its grouping into categories,
//! box scoring against CAM maps, and category overlap statistics.

mod overlap;
mod score;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use overlap::{overlap_matrix, OverlapMatrix};
pub use score::{box_region, build_score_matrix, peak_mean_score, score_box, score_region, BoxRegion, ScoreMatrix};

/// Confidence below which detections are discarded by default.
pub const DEFAULT_THRESHOLD: f64 = 0.25;
/// Number of categories in a complete category map.
pub const CATEGORY_COUNT: usize = 34;

const OPEN_IMAGES_CLASSES: &str = include_str!("../../data/oiv7_classes.txt");
const BUNDLED_CATEGORIES: &str = include_str!("../../data/categories.csv");

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("vocabulary: {0}")]
    Vocabulary(String),
    #[error("class `{0}` has no category")]
    Unmapped(String),
    #[error("category map: {0}")]
    CategoryMap(String),
    #[error("detection for image `{image_id}`: {reason}")]
    Invalid { image_id: String, reason: String },
    #[error("box {bbox:?} does not intersect the {height}x{width} map")]
    EmptyBox { bbox: [f64; 4], height: usize, width: usize },
    #[error(transparent)]
    Cam(#[from] crate::gradcam::CamError),
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
}

/// One detected object. Boxes are `[x1, y1, x2, y2]` in image pixels, half-open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub class_id: usize,
    pub class_name: String,
    pub bbox: [f64; 4],
    pub confidence: f64,
    pub image_w: f64,
    pub image_h: f64,
}

impl Detection {
    pub fn area(&self) -> f64 {
        let [x1, y1, x2, y2] = self.bbox;
        (x2 - x1).max(0.0) * (y2 - y1).max(0.0)
    }
}

/// Loaded detections plus counts of what was filtered out.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionSet {
    pub detections: Vec<Detection>,
    pub below_threshold: usize,
    /// Boxes with no area after clamping to the image.
    pub degenerate: usize,
    /// Boxes that were partially outside the image.
    pub clamped: usize,
}

/// Clamps a box to the image; `None` if nothing with positive area remains.
pub fn clamp_box(bbox: [f64; 4], image_w: f64, image_h: f64) -> Option<[f64; 4]> {
    let [x1, y1, x2, y2] = bbox;
    let b = [x1.max(0.0), y1.max(0.0), x2.min(image_w), y2.min(image_h)];
    (b[2] > b[0] && b[3] > b[1]).then_some(b)
}

/// Parses JSON-lines detections. Blank lines are skipped.
pub fn parse_detections(text: &str, threshold: f64) -> Result<DetectionSet, DetectionError> {
    let mut set = DetectionSet::default();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| DetectionError::Malformed { line: line_no, message };
        let mut d: Detection = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if !(0.0..=1.0).contains(&d.confidence) {
            return Err(bad(format!("confidence {} outside [0, 1]", d.confidence)));
        }
        if !(d.image_w > 0.0 && d.image_h > 0.0 && d.image_w.is_finite() && d.image_h.is_finite()) {
            return Err(bad(format!("image size {}x{} is not positive", d.image_w, d.image_h)));
        }
        if d.bbox.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite box coordinate".into()));
        }
        if d.confidence < threshold {
            set.below_threshold += 1;
            continue;
        }
        match clamp_box(d.bbox, d.image_w, d.image_h) {
            None => set.degenerate += 1,
            Some(b) => {
                if b != d.bbox {
                    set.clamped += 1;
                    d.bbox = b;
                }
                set.detections.push(d);
            }
        }
    }
    if set.degenerate > 0 {
        log::warn!("dropped {} detections with empty boxes", set.degenerate);
    }
    Ok(set)
}

pub fn load_detections(path: impl AsRef<Path>, threshold: f64) -> Result<DetectionSet, DetectionError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| DetectionError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_detections(&text, threshold)
}

/// Serializes detections as JSON lines.
pub fn detections_to_jsonl(detections: &[Detection]) -> String {
    detections.iter().map(|d| serde_json::to_string(d).expect("detection serializes") + "\n").collect()
}

/// Ordered detector class names; the index is the class id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassVocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl ClassVocabulary {
    pub fn new(names: Vec<String>) -> Result<Self, DetectionError> {
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if n.trim().is_empty() {
                return Err(DetectionError::Vocabulary(format!("class {i} has an empty name")));
            }
            if index.insert(n.clone(), i).is_some() {
                return Err(DetectionError::Vocabulary(format!("duplicate class `{n}`")));
            }
        }
        Ok(Self { names, index })
    }

    /// One name per non-empty line.
    pub fn parse(text: &str) -> Result<Self, DetectionError> {
        Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
    }

    /// The 601 Open Images V7 detector classes.
    pub fn open_images() -> Self {
        Self::parse(OPEN_IMAGES_CLASSES).expect("bundled vocabulary is valid")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Checks that a detection's id and name agree with this vocabulary.
    pub fn check(&self, d: &Detection) -> Result<(), DetectionError> {
        match self.name(d.class_id) {
            Some(n) if n == d.class_name => Ok(()),
            found => Err(DetectionError::Invalid {
                image_id: d.image_id.clone(),
                reason: format!(
                    "class {} `{}` does not match the vocabulary ({})",
                    d.class_id,
                    d.class_name,
                    found.map_or("out of range".to_string(), |n| format!("`{n}`"))
                ),
            }),
        }
    }
}

/// Class name to category, with categories kept in first-appearance order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryMap {
    categories: Vec<String>,
    of_class: HashMap<String, usize>,
    counts: Vec<usize>,
}

/// Classes of one category, in vocabulary order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CategoryClasses {
    pub category: String,
    pub class_ids: Vec<usize>,
}

impl CategoryMap {
    pub fn new<S: AsRef<str>>(pairs: &[(S, S)]) -> Result<Self, DetectionError> {
        let mut categories: Vec<String> = Vec::new();
        let mut cat_index: HashMap<&str, usize> = HashMap::new();
        let mut of_class = HashMap::with_capacity(pairs.len());
        let mut counts = Vec::new();
        for (class, cat) in pairs {
            let (class, cat) = (class.as_ref(), cat.as_ref());
            let c = *cat_index.entry(cat).or_insert_with(|| {
                categories.push(cat.to_string());
                counts.push(0);
                categories.len() - 1
            });
            if of_class.insert(class.to_string(), c).is_some() {
                return Err(DetectionError::CategoryMap(format!("class `{class}` is mapped twice")));
            }
            counts[c] += 1;
        }
        Ok(Self { categories, of_class, counts })
    }

    /// CSV with header `class_name,category`.
    pub fn parse_csv(text: &str) -> Result<Self, DetectionError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let headers = r.headers().map_err(|e| DetectionError::CategoryMap(e.to_string()))?;
        if headers.iter().collect::<Vec<_>>() != ["class_name", "category"] {
            return Err(DetectionError::CategoryMap(format!("expected header class_name,category, found {headers:?}")));
        }
        let pairs = r
            .records()
            .map(|rec| {
                let rec = rec.map_err(|e| DetectionError::CategoryMap(e.to_string()))?;
                Ok((rec[0].trim().to_string(), rec[1].trim().to_string()))
            })
            .collect::<Result<Vec<_>, DetectionError>>()?;
        Self::new(&pairs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DetectionError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| DetectionError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::parse_csv(&text)
    }

    /// The bundled map of the 601 detector classes onto 34 categories.
    pub fn bundled() -> Self {
        Self::parse_csv(BUNDLED_CATEGORIES).expect("bundled category map is valid")
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == name)
    }

    pub fn category_of(&self, class_name: &str) -> Result<usize, DetectionError> {
        self.of_class.get(class_name).copied().ok_or_else(|| DetectionError::Unmapped(class_name.to_string()))
    }

    /// Number of classes mapped to category `c`.
    pub fn count(&self, c: usize) -> usize {
        self.counts[c]
    }

    pub fn count_of(&self, name: &str) -> Option<usize> {
        self.category_index(name).map(|c| self.counts[c])
    }

    pub fn class_count(&self) -> usize {
        self.of_class.len()
    }

    /// Partition of the vocabulary into categories; every class must be mapped.
    pub fn categorize(&self, vocab: &ClassVocabulary) -> Result<Vec<CategoryClasses>, DetectionError> {
        let mut out: Vec<CategoryClasses> =
            self.categories.iter().map(|c| CategoryClasses { category: c.clone(), class_ids: Vec::new() }).collect();
        for (id, name) in vocab.names().iter().enumerate() {
            out[self.category_of(name)?].class_ids.push(id);
        }
        Ok(out)
    }

    /// Per-class category index, aligned with the vocabulary.
    pub fn class_categories(&self, vocab: &ClassVocabulary) -> Result<Vec<usize>, DetectionError> {
        vocab.names().iter().map(|n| self.category_of(n)).collect()
    }

    /// A complete map: exactly the vocabulary's classes, in 34 categories.
    pub fn validate_complete(&self, vocab: &ClassVocabulary) -> Result<(), DetectionError> {
        self.categorize(vocab)?;
        if self.class_count() != vocab.len() {
            let extra: Vec<&String> = self.of_class.keys().filter(|c| vocab.id(c).is_none()).collect();
            return Err(DetectionError::CategoryMap(format!("classes outside the vocabulary: {extra:?}")));
        }
        if self.categories.len() != CATEGORY_COUNT {
            return Err(DetectionError::CategoryMap(format!(
                "{} categories, expected {CATEGORY_COUNT}",
                self.categories.len()
            )));
        }
        Ok(())
    }
}

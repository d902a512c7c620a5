use std::collections::BTreeMap;

use serde::Serialize;

use super::{CategoryMap, Detection, DetectionError};
use crate::io::{self, Provenance};

/// Mean percentage of a row-category box covered by a co-occurring column-category box.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapMatrix {
    pub categories: Vec<String>,
    sums: Vec<f64>,
    pairs: Vec<u64>,
}

#[derive(Serialize)]
struct OverlapJson<'a> {
    categories: &'a [String],
    /// `null` where no pair of the two categories co-occurs.
    values: Vec<Vec<Option<f64>>>,
    pairs: Vec<Vec<u64>>,
    provenance: &'a Provenance,
}

impl OverlapMatrix {
    pub fn size(&self) -> usize {
        self.categories.len()
    }

    /// `None` when the two categories never co-occur.
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let i = row * self.size() + col;
        (self.pairs[i] > 0).then(|| self.sums[i] / self.pairs[i] as f64)
    }

    pub fn pairs(&self, row: usize, col: usize) -> u64 {
        self.pairs[row * self.size() + col]
    }

    pub fn to_csv(&self) -> String {
        let mut header = vec!["category"];
        header.extend(self.categories.iter().map(String::as_str));
        io::csv_string(
            &header,
            (0..self.size()).map(|r| {
                std::iter::once(self.categories[r].clone())
                    .chain((0..self.size()).map(move |c| self.get(r, c).map_or(String::new(), |v| v.to_string())))
            }),
        )
    }

    pub fn to_json(&self, provenance: &Provenance) -> String {
        let n = self.size();
        io::to_json(&OverlapJson {
            categories: &self.categories,
            values: (0..n).map(|r| (0..n).map(|c| self.get(r, c)).collect()).collect(),
            pairs: (0..n).map(|r| (0..n).map(|c| self.pairs(r, c)).collect()).collect(),
            provenance,
        })
    }
}

/// Percentage of `a`'s area covered by `b`.
pub(crate) fn covered_percent(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    100.0 * w * h / ((a[2] - a[0]) * (a[3] - a[1]))
}

/// Averages over every ordered pair of distinct detections sharing an image.
/// Images are visited in id order and detections in canonical order, so the result
/// does not depend on input ordering.
pub fn overlap_matrix(detections: &[Detection], categories: &CategoryMap) -> Result<OverlapMatrix, DetectionError> {
    let n = categories.categories().len();
    let mut by_image: BTreeMap<&str, Vec<(usize, &Detection)>> = BTreeMap::new();
    for d in detections {
        by_image.entry(&d.image_id).or_default().push((categories.category_of(&d.class_name)?, d));
    }
    let mut sums = vec![0.0; n * n];
    let mut pairs = vec![0u64; n * n];
    for dets in by_image.values_mut() {
        dets.sort_by(|(ca, a), (cb, b)| {
            ca.cmp(cb).then_with(|| a.class_id.cmp(&b.class_id)).then_with(|| {
                a.bbox
                    .iter()
                    .zip(&b.bbox)
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        });
        for (i, (r, a)) in dets.iter().enumerate() {
            for (j, (c, b)) in dets.iter().enumerate() {
                if i != j {
                    sums[r * n + c] += covered_percent(&a.bbox, &b.bbox);
                    pairs[r * n + c] += 1;
                }
            }
        }
    }
    Ok(OverlapMatrix { categories: categories.categories().to_vec(), sums, pairs })
}

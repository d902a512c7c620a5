use serde::{Deserialize, Serialize};

use super::{ClassWeights, O2bError};
use crate::detection::{CategoryMap, ClassVocabulary, DetectionError};
use crate::io;

/// Default number of highest and lowest weighted classes considered per
/// target: a tenth of the 250 classes the detector finds at full scale.
pub const DEFAULT_TOP_X: usize = 25;

/// Signed contribution of one category to one target's class weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryContribution {
    pub target: String,
    pub category: String,
    /// Constituent classes of the category in the mapping.
    pub constituents: usize,
    pub positive_sum: f64,
    pub negative_sum: f64,
    pub positive_avg: f64,
    pub negative_avg: f64,
    pub x: usize,
}

/// Ranks classes per target by weight (descending, ties by ascending class id),
/// adds the positive weights among the top `x` and the negative weights among
/// the bottom `x` to their categories, and divides by constituent counts.
/// Output is target-major, categories in mapping order.
pub fn topx_category_contributions(
    weights: &ClassWeights,
    vocab: &ClassVocabulary,
    categories: &CategoryMap,
    x: usize,
) -> Result<Vec<CategoryContribution>, O2bError> {
    let nc = weights.classes;
    if vocab.len() != nc {
        return Err(O2bError::Shape(format!("{nc} class weights, {} vocabulary entries", vocab.len())));
    }
    if x == 0 || x > nc {
        return Err(O2bError::Invalid(format!("X = {x} must lie in 1..={nc}")));
    }
    let category_of = |k: usize| -> Result<usize, DetectionError> {
        categories.category_of(vocab.name(k).expect("class id within vocabulary"))
    };
    let n = categories.categories().len();
    let mut out = Vec::with_capacity(weights.targets.len() * n);
    for (t, label) in weights.targets.iter().enumerate() {
        let row = weights.row(t);
        let mut order: Vec<usize> = (0..nc).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        let mut pos = vec![0.0; n];
        let mut neg = vec![0.0; n];
        for &k in &order[..x] {
            if row[k] > 0.0 {
                pos[category_of(k)?] += row[k];
            }
        }
        for &k in &order[nc - x..] {
            if row[k] < 0.0 {
                neg[category_of(k)?] += row[k];
            }
        }
        for (c, name) in categories.categories().iter().enumerate() {
            let count = categories.count(c);
            let avg = |s: f64| if count == 0 { 0.0 } else { s / count as f64 };
            out.push(CategoryContribution {
                target: label.clone(),
                category: name.clone(),
                constituents: count,
                positive_sum: pos[c],
                negative_sum: neg[c],
                positive_avg: avg(pos[c]),
                negative_avg: avg(neg[c]),
                x,
            });
        }
    }
    Ok(out)
}

/// Long CSV, one line per (target, category).
pub fn contributions_to_csv(rows: &[CategoryContribution]) -> String {
    io::csv_string(
        &["target", "category", "constituents", "positive_sum", "negative_sum", "positive_avg", "negative_avg", "x"],
        rows.iter().map(|r| {
            [
                r.target.clone(),
                r.category.clone(),
                r.constituents.to_string(),
                r.positive_sum.to_string(),
                r.negative_sum.to_string(),
                r.positive_avg.to_string(),
                r.negative_avg.to_string(),
                r.x.to_string(),
            ]
        }),
    )
}

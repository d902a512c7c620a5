use serde::{Deserialize, Serialize};

use super::{spearman_p, spearman_r, Stars, StatsError, TargetTable};
use crate::engine::PredictionTable;
use crate::io::{self, Provenance};

/// Correlation of one model with one target, aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCell {
    pub target: String,
    /// Stimuli in the target's split.
    pub n: usize,
    pub seeds: usize,
    /// `None` when any seed's correlation is undefined.
    pub mean_r: Option<f64>,
    /// Population standard deviation across seeds.
    pub std_r: Option<f64>,
    /// Two-sided p-value of `mean_r` over `n` stimuli.
    pub p_value: Option<f64>,
    pub stars: Stars,
}

impl CorrelationCell {
    pub fn is_undefined(&self) -> bool {
        self.mean_r.is_none()
    }
}

/// Mean and population standard deviation, summed in ascending value order.
fn mean_std(values: &mut [f64]) -> (f64, f64) {
    values.sort_by(f64::total_cmp);
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let mut dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    dev.sort_by(f64::total_cmp);
    (mean, (dev.iter().sum::<f64>() / k).sqrt())
}

/// One cell per target. Each prediction table is one seed of the same model.
pub fn correlation_table(
    predictions: &[PredictionTable],
    targets: &TargetTable,
) -> Result<Vec<CorrelationCell>, StatsError> {
    if predictions.is_empty() {
        return Err(StatsError::Invariant("at least one seed is required".into()));
    }
    let needed = targets.image_ids();
    for p in predictions {
        let have = p.ids();
        let missing: Vec<String> = needed.iter().filter(|id| !have.contains(*id)).map(|s| s.to_string()).collect();
        if !missing.is_empty() {
            return Err(StatsError::MissingStimuli(missing));
        }
    }
    targets
        .targets
        .iter()
        .map(|t| {
            let mut rs = Vec::with_capacity(predictions.len());
            for p in predictions {
                let x = p.select(t.image_ids.iter().map(String::as_str)).map_err(StatsError::MissingStimuli)?;
                match spearman_r(&x, &t.values) {
                    Ok(r) => rs.push(r),
                    Err(StatsError::Undefined) => {
                        return Ok(CorrelationCell {
                            target: t.label(),
                            n: t.values.len(),
                            seeds: predictions.len(),
                            mean_r: None,
                            std_r: None,
                            p_value: None,
                            stars: Stars::None,
                        })
                    }
                    Err(e) => return Err(e),
                }
            }
            let (mean, std) = mean_std(&mut rs);
            let p = spearman_p(mean, t.values.len())?;
            Ok(CorrelationCell {
                target: t.label(),
                n: t.values.len(),
                seeds: predictions.len(),
                mean_r: Some(mean),
                std_r: Some(std),
                p_value: Some(p),
                stars: Stars::from_p(p),
            })
        })
        .collect()
}

/// Correlation cells of one model entry (a full network or a cut-off variant).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub model: String,
    pub cells: Vec<CorrelationCell>,
}

/// All model rows over the same targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub targets: Vec<String>,
    pub rows: Vec<CorrelationRow>,
    #[serde(default)]
    pub provenance: Provenance,
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

impl CorrelationReport {
    /// Long format: one line per (model, target).
    pub fn to_csv(&self) -> String {
        io::csv_string(
            &["model", "target", "n", "seeds", "mean_r", "std_r", "p_value", "stars"],
            self.rows.iter().flat_map(|row| {
                row.cells.iter().map(move |c| {
                    [
                        row.model.clone(),
                        c.target.clone(),
                        c.n.to_string(),
                        c.seeds.to_string(),
                        opt(c.mean_r),
                        opt(c.std_r),
                        opt(c.p_value),
                        c.stars.to_string(),
                    ]
                })
            }),
        )
    }

    pub fn to_json(&self) -> String {
        io::to_json(self)
    }
}

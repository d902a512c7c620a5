//! Rank correlation with significance, the stimulus table and its correlation
//! targets, and multi-seed correlation tables.

mod stimuli;
mod table;

use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

pub use stimuli::{
    build_targets, Condition, Source, Split, Stimulus, StimulusTable, Target, TargetTable, Valence, STIMULUS_COLUMNS,
};
pub use table::{correlation_table, CorrelationCell, CorrelationReport, CorrelationRow};

/// Largest sample size accepted by [`spearman_p_exact`].
pub const EXACT_MAX_N: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("vectors have lengths {0} and {1}")]
    Length(usize, usize),
    #[error("{0} observations are too few (need at least {1})")]
    TooShort(usize, usize),
    #[error("correlation is undefined: an input is constant")]
    Undefined,
    #[error("correlation {0} lies outside [-1, 1]")]
    OutOfRange(f64),
    #[error("stimulus table is missing columns {0:?}")]
    MissingColumns(Vec<String>),
    #[error("stimulus table row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("stimulus table: {0}")]
    Invariant(String),
    #[error("predictions are missing stimuli {0:?}")]
    MissingStimuli(Vec<String>),
    #[error("{0}")]
    Io(String),
}

/// 1-based ranks; tied values share the mean of their rank range.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // Positions i..j hold equal values; ranks i+1..=j average to (i+j+1)/2.
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

/// Pearson correlation; `Undefined` when either input has zero variance.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::Length(x.len(), y.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::Undefined);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman_r(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::Length(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooShort(x.len(), 3));
    }
    pearson_r(&average_ranks(x), &average_ranks(y))
}

/// Two-sided p-value of a correlation `r` over `n` pairs, from the Student t
/// approximation with `n - 2` degrees of freedom. `|r| = 1` gives 0.
pub fn spearman_p(r: f64, n: usize) -> Result<f64, StatsError> {
    if n < 4 {
        return Err(StatsError::TooShort(n, 4));
    }
    if !(-1.0..=1.0).contains(&r) {
        return Err(StatsError::OutOfRange(r));
    }
    if r.abs() == 1.0 {
        return Ok(0.0);
    }
    if r == 0.0 {
        return Ok(1.0);
    }
    let df = (n - 2) as f64;
    let t = r.abs() * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    Ok((2.0 * dist.sf(t)).min(1.0))
}

/// Exact two-sided permutation p-value: the fraction of all orderings of `y`
/// whose |rho| reaches the observed |rho|.
pub fn spearman_p_exact(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let observed = spearman_r(x, y)?.abs();
    let n = x.len();
    if n > EXACT_MAX_N {
        return Err(StatsError::Invariant(format!("exact mode supports n <= {EXACT_MAX_N}, got {n}")));
    }
    let rx = average_ranks(x);
    let mut ry = average_ranks(y);
    let mean = (n as f64 + 1.0) / 2.0;
    let cx: Vec<f64> = rx.iter().map(|r| r - mean).collect();
    let norm = (cx.iter().map(|v| v * v).sum::<f64>() * ry.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()).sqrt();
    let tol = 1e-12;
    let (mut hits, mut total) = (0u64, 0u64);
    let mut count = |ry: &[f64]| {
        let s: f64 = cx.iter().zip(ry).map(|(a, b)| a * (b - mean)).sum();
        total += 1;
        if (s / norm).abs() >= observed - tol {
            hits += 1;
        }
    };
    // Heap's algorithm over all n! orderings.
    let mut c = vec![0usize; n];
    count(&ry);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                ry.swap(0, i);
            } else {
                ry.swap(c[i], i);
            }
            count(&ry);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}

/// Significance level marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stars {
    #[serde(rename = "")]
    None,
    #[serde(rename = "*")]
    One,
    #[serde(rename = "**")]
    Two,
    #[serde(rename = "***")]
    Three,
}

/// Thresholds for one, two and three stars.
pub const STAR_THRESHOLDS: [f64; 3] = [0.05, 0.01, 0.001];

impl Stars {
    pub fn from_p(p: f64) -> Self {
        match p {
            p if p < STAR_THRESHOLDS[2] => Stars::Three,
            p if p < STAR_THRESHOLDS[1] => Stars::Two,
            p if p < STAR_THRESHOLDS[0] => Stars::One,
            _ => Stars::None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stars::None => "",
            Stars::One => "*",
            Stars::Two => "**",
            Stars::Three => "***",
        }
    }
}

impl fmt::Display for Stars {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

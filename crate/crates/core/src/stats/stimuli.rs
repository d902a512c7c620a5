use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::StatsError;
use crate::io;

/// Exact column layout of a stimulus CSV.
pub const STIMULUS_COLUMNS: [&str; 15] = [
    "image_id",
    "condition",
    "congruent",
    "iv_true",
    "pv_true",
    "sv_true",
    "llr_iv",
    "llr_pv",
    "llr_sv",
    "mlr_iv",
    "mlr_pv",
    "mlr_sv",
    "hlr_iv",
    "hlr_pv",
    "hlr_sv",
];

/// People valence (P) and scene valence (S) of a stimulus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "P+S+")]
    PosPos,
    #[serde(rename = "P+S-")]
    PosNeg,
    #[serde(rename = "P-S-")]
    NegNeg,
    #[serde(rename = "P-S+")]
    NegPos,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Condition::PosPos, Condition::PosNeg, Condition::NegNeg, Condition::NegPos];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::PosPos => "P+S+",
            Condition::PosNeg => "P+S-",
            Condition::NegNeg => "P-S-",
            Condition::NegPos => "P-S+",
        }
    }

    /// People and scene valence agree.
    pub fn is_congruent(self) -> bool {
        matches!(self, Condition::PosPos | Condition::NegNeg)
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim().replace('\u{2212}', "-");
        Condition::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| format!("unknown condition `{s}`"))
    }
}

/// Origin of a target vector: the true labels or one of the brain-region decoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    True,
    #[serde(rename = "LLR")]
    Llr,
    #[serde(rename = "MLR")]
    Mlr,
    #[serde(rename = "HLR")]
    Hlr,
}

impl Source {
    pub const ALL: [Source; 4] = [Source::True, Source::Llr, Source::Mlr, Source::Hlr];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::True => "True",
            Source::Llr => "LLR",
            Source::Mlr => "MLR",
            Source::Hlr => "HLR",
        }
    }
}

/// Image, people or scene valence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Valence {
    #[serde(rename = "IV")]
    Image,
    #[serde(rename = "PV")]
    People,
    #[serde(rename = "SV")]
    Scene,
}

impl Valence {
    pub const ALL: [Valence; 3] = [Valence::Image, Valence::People, Valence::Scene];

    pub fn as_str(self) -> &'static str {
        match self {
            Valence::Image => "IV",
            Valence::People => "PV",
            Valence::Scene => "SV",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    Congruent,
    Incongruent,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::Congruent, Split::Incongruent];

    pub fn short(self) -> &'static str {
        match self {
            Split::Congruent => "Cg.",
            Split::Incongruent => "Incg.",
        }
    }

    pub fn contains(self, s: &Stimulus) -> bool {
        s.congruent == (self == Split::Congruent)
    }
}

/// One stimulus row.
#[derive(Debug, Clone, PartialEq)]
pub struct Stimulus {
    pub image_id: String,
    pub condition: Condition,
    pub congruent: bool,
    /// Binary labels, indexed IV, PV, SV.
    pub truth: [f64; 3],
    /// Decoder outputs, indexed [LLR, MLR, HLR][IV, PV, SV].
    pub decoded: [[f64; 3]; 3],
}

impl Stimulus {
    pub fn value(&self, source: Source, valence: Valence) -> f64 {
        let v = valence.index();
        match source {
            Source::True => self.truth[v],
            Source::Llr => self.decoded[0][v],
            Source::Mlr => self.decoded[1][v],
            Source::Hlr => self.decoded[2][v],
        }
    }
}

/// Stimulus rows sorted by image id.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulusTable {
    rows: Vec<Stimulus>,
}

/// Rows expected in a complete table and per condition.
const TOTAL: usize = 48;
const PER_CONDITION: usize = 12;

fn parse_flag(s: &str) -> Result<bool, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(format!("congruent flag `{other}` is not 0/1/true/false")),
    }
}

impl StimulusTable {
    pub fn new(mut rows: Vec<Stimulus>) -> Self {
        rows.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        Self { rows }
    }

    pub fn rows(&self) -> &[Stimulus] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().map(|r| r.image_id.as_str())
    }

    pub fn parse_csv(text: &str) -> Result<Self, StatsError> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let headers = r.headers().map_err(|e| StatsError::Io(e.to_string()))?.clone();
        let names: Vec<&str> = headers.iter().map(str::trim).collect();
        let missing: Vec<String> =
            STIMULUS_COLUMNS.iter().filter(|c| !names.contains(c)).map(|c| c.to_string()).collect();
        if !missing.is_empty() {
            return Err(StatsError::MissingColumns(missing));
        }
        let col = |name: &str| names.iter().position(|n| *n == name).expect("column checked");
        let idx: Vec<usize> = STIMULUS_COLUMNS.iter().map(|c| col(c)).collect();
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let row = i + 1;
            let bad = |message: String| StatsError::Row { row, message };
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let field = |k: usize| rec.get(idx[k]).unwrap_or("").trim();
            let num = |k: usize| -> Result<f64, StatsError> {
                let v: f64 = field(k).parse().map_err(|e| bad(format!("column {}: {e}", STIMULUS_COLUMNS[k])))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(bad(format!("column {} is not finite", STIMULUS_COLUMNS[k])))
                }
            };
            let mut decoded = [[0.0; 3]; 3];
            for (s, row) in decoded.iter_mut().enumerate() {
                for (v, cell) in row.iter_mut().enumerate() {
                    *cell = num(6 + 3 * s + v)?;
                }
            }
            rows.push(Stimulus {
                image_id: field(0).to_string(),
                condition: field(1).parse().map_err(bad)?,
                congruent: parse_flag(field(2)).map_err(bad)?,
                truth: [num(3)?, num(4)?, num(5)?],
                decoded,
            });
        }
        Ok(Self::new(rows))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StatsError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| StatsError::Io(format!("{}: {e}", path.display())))?;
        Self::parse_csv(&text)
    }

    pub fn to_csv(&self) -> String {
        io::csv_string(
            &STIMULUS_COLUMNS,
            self.rows.iter().map(|s| {
                let mut f =
                    vec![s.image_id.clone(), s.condition.as_str().to_string(), u8::from(s.congruent).to_string()];
                f.extend(s.truth.iter().map(|v| v.to_string()));
                f.extend(s.decoded.iter().flatten().map(|v| v.to_string()));
                f
            }),
        )
    }

    /// Checks every invariant of a complete stimulus set.
    pub fn validate(&self) -> Result<(), StatsError> {
        let fail = |m: String| Err(StatsError::Invariant(m));
        if self.rows.len() != TOTAL {
            return fail(format!("{} rows, expected {TOTAL}", self.rows.len()));
        }
        if let Some(w) = self.rows.windows(2).find(|w| w[0].image_id == w[1].image_id) {
            return fail(format!("duplicate image id `{}`", w[0].image_id));
        }
        for c in Condition::ALL {
            let n = self.rows.iter().filter(|r| r.condition == c).count();
            if n != PER_CONDITION {
                return fail(format!("{n} rows with condition {}, expected {PER_CONDITION}", c.as_str()));
            }
        }
        for r in &self.rows {
            if r.congruent != r.condition.is_congruent() {
                return fail(format!(
                    "`{}`: congruent flag disagrees with condition {}",
                    r.image_id,
                    r.condition.as_str()
                ));
            }
            if r.truth.iter().any(|&v| v != 0.0 && v != 1.0) {
                return fail(format!("`{}`: true labels must be 0 or 1", r.image_id));
            }
        }
        Ok(())
    }
}

/// One correlation target: a column of the stimulus table restricted to a split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Target {
    pub source: Source,
    pub valence: Valence,
    pub split: Split,
    pub image_ids: Vec<String>,
    pub values: Vec<f64>,
}

impl Target {
    /// Display label such as `IV Cg. True`.
    pub fn label(&self) -> String {
        format!("{} {} {}", self.valence.as_str(), self.split.short(), self.source.as_str())
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// All targets, ordered split, then source, then valence type.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetTable {
    pub targets: Vec<Target>,
}

impl TargetTable {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.targets.iter().map(Target::label).collect()
    }

    /// Every stimulus referenced by any target.
    pub fn image_ids(&self) -> std::collections::BTreeSet<&str> {
        self.targets.iter().flat_map(|t| t.image_ids.iter().map(String::as_str)).collect()
    }
}

/// The 24 targets: 4 sources x 3 valence types x 2 splits.
pub fn build_targets(table: &StimulusTable) -> Result<TargetTable, StatsError> {
    table.validate()?;
    let mut targets = Vec::with_capacity(24);
    for split in Split::ALL {
        let rows: Vec<&Stimulus> = table.rows().iter().filter(|s| split.contains(s)).collect();
        for source in Source::ALL {
            for valence in Valence::ALL {
                targets.push(Target {
                    source,
                    valence,
                    split,
                    image_ids: rows.iter().map(|s| s.image_id.clone()).collect(),
                    values: rows.iter().map(|s| s.value(source, valence)).collect(),
                });
            }
        }
    }
    Ok(TargetTable { targets })
}

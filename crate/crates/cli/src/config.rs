//! Run configuration: a TOML file whose relative paths resolve against its
//! directory, with command-line flags taking precedence.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

/// One row of the correlation table: either precomputed prediction CSVs or
/// model bundles to run, one per training seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub name: String,
    #[serde(default)]
    pub predictions: Vec<PathBuf>,
    #[serde(default)]
    pub bundles: Vec<PathBuf>,
}

/// Cross-layer output of another run, merged into the cross-architecture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureEntry {
    pub name: String,
    pub cross_layer: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Never part of the config hash: where results go does not change them.
    #[serde(default, skip_serializing)]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing)]
    pub jobs: Option<usize>,
    pub bundle: Option<PathBuf>,
    /// Stimulus corpus: the images the correlation targets are defined on.
    pub corpus: Option<PathBuf>,
    pub stimuli: Option<PathBuf>,
    /// Corpus the detections refer to.
    pub score_corpus: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub vocabulary: Option<PathBuf>,
    pub categories: Option<PathBuf>,
    pub target_layers: Option<Vec<String>>,
    pub threshold: Option<f64>,
    pub top_x: Option<usize>,
    /// Categories kept in plot data; empty means all.
    #[serde(default)]
    pub select: Vec<String>,
    /// Target label plotted in the scatter figure; defaults to the first.
    pub plot_target: Option<String>,
    #[serde(default)]
    pub models: Vec<ModelEntry>,
    #[serde(default)]
    pub architectures: Vec<ArchitectureEntry>,
}

/// Flags shared by the pipeline subcommands. Each overrides its config field.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Run configuration (TOML).
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Model bundle directory.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Stimulus corpus manifest.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Stimulus table CSV.
    #[arg(long)]
    pub stimuli: Option<PathBuf>,
    /// Corpus manifest of the detection images.
    #[arg(long)]
    pub score_corpus: Option<PathBuf>,
    /// Detections, one JSON object per line.
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Class vocabulary, one name per line.
    #[arg(long)]
    pub vocabulary: Option<PathBuf>,
    /// Class-to-category CSV.
    #[arg(long)]
    pub categories: Option<PathBuf>,
    /// Comma-separated target layer node ids.
    #[arg(long, value_delimiter = ',')]
    pub target_layers: Option<Vec<String>>,
    /// Detection confidence threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Classes ranked at each end per target.
    #[arg(long)]
    pub top_x: Option<usize>,
    /// Comma-separated categories kept in plot data.
    #[arg(long, value_delimiter = ',')]
    pub select: Option<Vec<String>>,
    #[arg(long)]
    pub plot_target: Option<String>,
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Makes every relative path absolute against `base`.
    fn rebased(mut self, base: &Path) -> Self {
        for p in [
            &mut self.out_dir,
            &mut self.bundle,
            &mut self.corpus,
            &mut self.stimuli,
            &mut self.score_corpus,
            &mut self.detections,
            &mut self.vocabulary,
            &mut self.categories,
        ] {
            rebase(base, p);
        }
        for m in &mut self.models {
            for p in m.predictions.iter_mut().chain(m.bundles.iter_mut()) {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        for a in &mut self.architectures {
            if a.cross_layer.is_relative() {
                a.cross_layer = base.join(&a.cross_layer);
            }
        }
        self
    }

    fn apply(&mut self, o: &Overrides) {
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = &o.$f {
                    self.$f = Some(v.clone());
                }
            )*};
        }
        set!(
            out_dir,
            bundle,
            corpus,
            stimuli,
            score_corpus,
            detections,
            vocabulary,
            categories,
            target_layers,
            threshold,
            top_x,
            plot_target
        );
        if let Some(s) = &o.select {
            self.select = s.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.threshold {
            if !(0.0..=1.0).contains(&t) {
                bail!("threshold {t} outside [0, 1]");
            }
        }
        if self.top_x == Some(0) {
            bail!("top_x must be positive");
        }
        for m in &self.models {
            if m.predictions.is_empty() && m.bundles.is_empty() {
                bail!("model `{}` lists neither predictions nor bundles", m.name);
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        crate::provenance::sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// The configuration as written (hashed for provenance) and with paths resolved (used).
#[derive(Debug, Clone)]
pub struct Effective {
    pub recorded: Config,
    pub resolved: Config,
}

impl Effective {
    pub fn new(o: &Overrides) -> Result<Self> {
        let (mut recorded, mut resolved) = match &o.config {
            Some(path) => {
                let raw = Config::load(path)?;
                let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
                (raw.clone(), raw.rebased(base))
            }
            None => (Config::default(), Config::default()),
        };
        recorded.apply(o);
        resolved.apply(o);
        resolved.validate()?;
        Ok(Self { recorded, resolved })
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
        value
            .as_deref()
            .with_context(|| format!("no `{name}` given (set it in the config or pass --{})", name.replace('_', "-")))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolved.out_dir.clone().unwrap_or_else(|| PathBuf::from("o2b-out"))
    }
}

//! Plot data emitted by the pipeline and its rendering to SVG.

use anyhow::{bail, Context, Result};
use o2b_core::detection::CategoryMap;
use o2b_core::io::Provenance;
use o2b_core::o2b::CategoryContribution;
use o2b_core::stats::CorrelationReport;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::svg::{self, Heatmap, Scale, Series};

pub const CROSS_LAYER: &str = "cross-layer";
pub const CROSS_ARCHITECTURE: &str = "cross-architecture";
pub const LAYER_SCATTER: &str = "layer-scatter";

/// Averaged category contribution of one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub target: String,
    pub category: String,
    pub positive_avg: f64,
    pub negative_avg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPoints {
    pub node_id: String,
    pub filters: usize,
    pub points: Vec<Point>,
}

/// Per-layer scatter data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerScatter {
    pub kind: String,
    pub node_id: String,
    pub x: usize,
    pub categories: Vec<String>,
    pub points: Vec<Point>,
    pub provenance: Provenance,
}

/// Evolution of category contributions over the layers of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossLayer {
    pub kind: String,
    pub architecture: String,
    pub x: usize,
    pub categories: Vec<String>,
    pub targets: Vec<String>,
    pub layers: Vec<LayerPoints>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureLayers {
    pub name: String,
    pub x: usize,
    pub layers: Vec<LayerPoints>,
}

/// Category contributions of several networks side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossArchitecture {
    pub kind: String,
    pub categories: Vec<String>,
    pub targets: Vec<String>,
    pub architectures: Vec<ArchitectureLayers>,
    pub provenance: Provenance,
}

/// Checks a category selection against the map; an empty selection keeps every category.
pub fn selection(categories: &CategoryMap, select: &[String]) -> Result<Vec<String>> {
    if select.is_empty() {
        return Ok(categories.categories().to_vec());
    }
    let mut out = Vec::with_capacity(select.len());
    for name in select {
        if categories.category_index(name).is_none() {
            bail!("selected category `{name}` is not in the category map");
        }
        if !out.contains(name) {
            out.push(name.clone());
        }
    }
    Ok(out)
}

/// Contributions restricted to `categories`, in target-major order.
pub fn points(rows: &[CategoryContribution], categories: &[String]) -> Vec<Point> {
    rows.iter()
        .filter(|r| categories.contains(&r.category))
        .map(|r| Point {
            target: r.target.clone(),
            category: r.category.clone(),
            positive_avg: r.positive_avg,
            negative_avg: r.negative_avg,
        })
        .collect()
}

fn series(columns: &[&[Point]], categories: &[String], target: &str) -> Vec<Series> {
    categories
        .iter()
        .map(|cat| Series {
            name: cat.clone(),
            points: columns
                .iter()
                .map(|pts| {
                    pts.iter()
                        .find(|p| p.target == target && &p.category == cat)
                        .map_or((0.0, 0.0), |p| (p.positive_avg, p.negative_avg))
                })
                .collect(),
        })
        .collect()
}

fn pick_target(targets: &[String], wanted: Option<&str>) -> Result<String> {
    match wanted {
        Some(t) if targets.iter().any(|x| x == t) => Ok(t.to_string()),
        Some(t) => bail!("target `{t}` is not among {targets:?}"),
        None => targets.first().cloned().context("no targets to plot"),
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or("n/a".into(), |v| format!("{v:.digits$}"))
}

pub fn correlation_svg(report: &CorrelationReport) -> String {
    let rows: Vec<String> = report.rows.iter().map(|r| r.model.clone()).collect();
    let values: Vec<Vec<Option<f64>>> =
        report.rows.iter().map(|r| r.cells.iter().map(|c| c.mean_r).collect()).collect();
    let labels: Vec<Vec<String>> = report.rows.iter().map(|r| r.cells.iter().map(cell_label).collect()).collect();
    svg::heatmap(
        &Heatmap {
            title: "Spearman correlation with targets",
            rows: &rows,
            cols: &report.targets,
            values: &values,
            labels: &labels,
            scale: Scale::Diverging { limit: 1.0 },
        },
        &report.provenance,
    )
}

/// `mean (std)` followed by significance stars.
pub fn cell_label(c: &o2b_core::stats::CorrelationCell) -> String {
    match c.mean_r {
        None => "n/a".into(),
        Some(m) => format!("{m:.2} ({}){}", fmt_opt(c.std_r, 2), c.stars.as_str()),
    }
}

#[derive(Deserialize)]
struct OverlapFile {
    categories: Vec<String>,
    values: Vec<Vec<Option<f64>>>,
    #[serde(default)]
    provenance: Provenance,
}

fn overlap_svg(v: &Value) -> Result<String> {
    let o: OverlapFile = serde_json::from_value(v.clone()).context("overlap matrix JSON")?;
    let labels: Vec<Vec<String>> = o.values.iter().map(|r| r.iter().map(|c| fmt_opt(*c, 0)).collect()).collect();
    Ok(svg::heatmap(
        &Heatmap {
            title: "Mean box coverage between categories (%)",
            rows: &o.categories,
            cols: &o.categories,
            values: &o.values,
            labels: &labels,
            scale: Scale::Sequential { max: 100.0 },
        },
        &o.provenance,
    ))
}

pub fn cross_layer_svg(c: &CrossLayer, target: Option<&str>) -> Result<String> {
    let target = pick_target(&c.targets, target)?;
    let columns: Vec<String> = c.layers.iter().map(|l| l.node_id.clone()).collect();
    let pts: Vec<&[Point]> = c.layers.iter().map(|l| l.points.as_slice()).collect();
    let title = format!("{}: top-{} category contributions, {target}", c.architecture, c.x);
    Ok(svg::scatter(&title, &columns, &series(&pts, &c.categories, &target), &c.provenance))
}

pub fn cross_architecture_svg(c: &CrossArchitecture, target: Option<&str>) -> Result<String> {
    let target = pick_target(&c.targets, target)?;
    let mut columns = Vec::new();
    let mut pts: Vec<&[Point]> = Vec::new();
    for a in &c.architectures {
        for l in &a.layers {
            columns.push(format!("{}:{}", a.name, l.node_id));
            pts.push(&l.points);
        }
    }
    let title = format!("Category contributions by architecture, {target}");
    Ok(svg::scatter(&title, &columns, &series(&pts, &c.categories, &target), &c.provenance))
}

/// Renders any JSON artifact with a figure form: correlation reports, overlap
/// matrices, cross-layer and cross-architecture plot data.
pub fn render_value(v: &Value, target: Option<&str>) -> Result<String> {
    match v.get("kind").and_then(Value::as_str) {
        Some(CROSS_LAYER) => cross_layer_svg(&serde_json::from_value(v.clone())?, target),
        Some(CROSS_ARCHITECTURE) => cross_architecture_svg(&serde_json::from_value(v.clone())?, target),
        Some(other) => bail!("no figure for artifact kind `{other}`"),
        None if v.get("rows").is_some() => {
            let report: CorrelationReport = serde_json::from_value(v.clone()).context("correlation report JSON")?;
            Ok(correlation_svg(&report))
        }
        None if v.get("pairs").is_some() => overlap_svg(v),
        None => bail!("unrecognized JSON artifact"),
    }
}

//! Re-reads the files written by the object-to-alignment stage and checks the
//! algebraic relations between them.

use std::path::Path;

use anyhow::{bail, Result};
use o2b_core::detection::{CategoryMap, ClassVocabulary, ScoreMatrix};
use o2b_core::io;
use o2b_core::model::TargetLayerSet;
use o2b_core::o2b::{topx_category_contributions, ClassWeights, DeltaMatrix, WeightCube};

use crate::commands::{node_file, ContributionsFile};
use crate::plot::{LayerScatter, LAYER_SCATTER};

/// Checks every target layer's artifacts; returns the number of files checked.
pub fn emitted(
    out: &Path,
    layers: &TargetLayerSet,
    vocab: &ClassVocabulary,
    cats: &CategoryMap,
    selected: &[String],
) -> Result<usize> {
    let mut problems = Vec::new();
    let mut files = 0;
    for layer in layers.layers() {
        let file = node_file(&layer.node_id);
        let dir = out.join("o2b").join(&file);
        let delta = DeltaMatrix::read_json(&out.join(format!("deltas/{file}.json")))?;
        let scores = ScoreMatrix::read(&out.join(format!("scores/{file}")))?;
        let cube = WeightCube::read(&dir.join("cube"))?;
        let weights = ClassWeights::read_json(&dir.join("class_weights.json"))?;
        let contrib: ContributionsFile = io::read_json(&dir.join("contributions.json"))?;
        let scatter: LayerScatter = io::read_json(&dir.join("scatter.json"))?;
        files += 6;
        let mut fail = |m: String| problems.push(format!("{}: {m}", layer.node_id));

        let (nf, nt, nc) = (layer.filters, delta.targets.len(), vocab.len());
        if delta.filters() != nf || scores.filters != nf || cube.filters != nf {
            fail(format!("filter counts {} / {} / {} differ from {nf}", delta.filters(), scores.filters, cube.filters));
            continue;
        }
        if scores.classes != nc || cube.classes != nc || weights.classes != nc {
            fail("class counts differ from the vocabulary".into());
            continue;
        }
        if cube.targets != delta.targets || weights.targets != delta.targets {
            fail("target labels differ between delta matrix and weights".into());
            continue;
        }
        for k in 0..nc {
            let col_zero = (0..nf).all(|j| scores.get(j, k) == 0.0);
            if scores.counts[k] == 0 && !col_zero {
                fail(format!("class {k} has no detections but non-zero scores"));
            }
        }
        if scores.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            fail("box scores outside [0, 1]".into());
        }
        for i in 0..nt {
            for k in 0..nc {
                let mut v = 0.0;
                for j in 0..nf {
                    let w = delta.get(j, i).unwrap_or(0.0) * scores.get(j, k);
                    // The cube is stored in single precision.
                    if cube.get(i, j, k) != f64::from(w as f32) {
                        fail(format!("cube cell ({i}, {j}, {k}) is not the delta-score product"));
                    }
                    v += w;
                }
                if (weights.get(i, k) - v).abs() > 1e-12 {
                    fail(format!("class weight ({i}, {k}) is not the filter sum"));
                }
            }
        }
        match topx_category_contributions(&weights, vocab, cats, contrib.x) {
            Ok(rows) if rows == contrib.rows => {}
            Ok(_) => fail("category contributions do not follow from the class weights".into()),
            Err(e) => fail(e.to_string()),
        }
        for r in &contrib.rows {
            let avg_ok = r.positive_avg == r.positive_sum / r.constituents as f64
                && r.negative_avg == r.negative_sum / r.constituents as f64;
            if r.positive_sum < 0.0 || r.negative_sum > 0.0 || !avg_ok {
                fail(format!("contribution of `{}` to `{}` is inconsistent", r.category, r.target));
            }
        }
        if scatter.kind != LAYER_SCATTER
            || scatter.categories != selected
            || scatter.points.iter().any(|p| !selected.contains(&p.category))
        {
            fail("scatter data is not restricted to the selected categories".into());
        }
    }
    if !problems.is_empty() {
        bail!("emitted artifacts failed re-validation:\n  {}", problems.join("\n  "));
    }
    Ok(files)
}

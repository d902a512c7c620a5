//! Acceptance report: one PASS/FAIL line per criterion, exit status 1 if any fails.

#[path = "../../core/tests/suites/mod.rs"]
mod suites;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

const BIN: &str = env!("CARGO_BIN_EXE_o2b");
const PIPELINE: [&str; 6] = ["predict", "correlate", "emocam", "ablate", "o2b", "overlap"];
const MIN_SPEEDUP: f64 = 2.0;

struct Criterion {
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> String,
}

fn o2b(args: &[&str]) -> String {
    let out = Command::new(BIN).args(args).output().expect("spawn o2b");
    assert!(out.status.success(), "o2b {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

fn gradient() -> String {
    use suites::gradients::*;
    conv2d_backward();
    linear_backward();
    relu_backward();
    sigmoid_backward();
    batchnorm_backward();
    maxpool_backward();
    avgpool_backward();
    adaptive_avgpool_backward();
    add_and_flatten_backward();
    backward_to_layer_matches_patched_differences();
    backward_to_layer_on_the_alexnet_like_stack();
    format!("9 kernels + graph sweeps, {CASES} cases each, eps {EPS:e}, max rel err {MAX_REL:e}")
}

fn rank() -> String {
    use suites::rank_correlation::*;
    matches_rank_then_pearson_oracle_with_ties();
    matches_classical_formula_without_ties();
    invariant_under_monotone_transforms();
    "1000 tied vs rank-then-Pearson, 1000 tie-free vs classical formula (1e-12), 100 monotone transforms".into()
}

fn box_score() -> String {
    use suites::scoring::*;
    box_score_matches_per_pixel_oracle();
    score_box_in_map_coordinates();
    score_equals_peak_only_for_homogeneous_regions();
    monotonicity_grid();
    "500 (map, box) pairs vs per-pixel oracle (1e-12), peak iff homogeneous, monotonicity grid".into()
}

fn algebra() -> String {
    use suites::pipeline_algebra::*;
    class_weights_equal_direct_evaluation();
    factorization_identity_is_exact();
    "100 random (C, S) pairs: class weights vs direct sum (1e-12), cube factorization exact".into()
}

fn ablation() -> String {
    use suites::ablation::*;
    deltas_match_the_full_recompute_oracle();
    dead_filter_row_is_exactly_zero();
    "16 filters x 24 targets vs full recompute (1e-10), dead filter row exactly zero, shape N_f x 24".into()
}

fn structural() -> String {
    use suites::structural::*;
    twenty_four_targets_over_two_splits_of_24();
    star_thresholds();
    default_x_is_a_tenth_of_250_detected_classes();
    category_map_reproduces_the_stated_constituent_counts();
    "24 targets over 24/24 splits, stars at 0.05/0.01/0.001, X = 25 = 250/10, nine constituent counts".into()
}

fn overlap() -> String {
    use suites::overlap::*;
    matches_cell_counting_oracle_on_random_images();
    identical_and_disjoint_boxes();
    "200 random images vs cell-counting oracle (1e-9), identical 100.0, disjoint 0.0".into()
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> String {
    let root = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for run in ["first", "second"] {
        let dir = root.path().join(run);
        o2b(&["fixture", dir.to_str().unwrap()]);
        let config = dir.join("config.toml");
        for cmd in PIPELINE {
            o2b(&[cmd, "--config", config.to_str().unwrap()]);
        }
        outputs.push(tree(&dir.join("out")));
    }
    let (a, b) = (&outputs[0], &outputs[1]);
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>(), "different file sets");
    let differing: Vec<&String> = a.keys().filter(|k| a[*k] != b[*k]).collect();
    assert!(differing.is_empty(), "files differ: {differing:?}");
    format!("{} output files byte-identical across two runs of {}", a.len(), PIPELINE.join(" -> "))
}

fn performance() -> String {
    let report: serde_json::Value = serde_json::from_str(&o2b(&["bench", "--repeats", "5"])).unwrap();
    let speedup = report["speedup"].as_f64().unwrap();
    assert_eq!(report["threads"], 1);
    assert!(speedup >= MIN_SPEEDUP, "speedup {speedup:.2} below {MIN_SPEEDUP}");
    format!(
        "resumed sweep {speedup:.1}x faster than full passes at `{}` (single thread)",
        report["target"].as_str().unwrap()
    )
}

fn message(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<String>()
        .cloned()
        .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panicked".into())
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { name: "gradient suite", limit: Some(Duration::from_secs(60)), run: gradient },
        Criterion { name: "rank-correlation suite", limit: None, run: rank },
        Criterion { name: "box score suite", limit: None, run: box_score },
        Criterion { name: "pipeline algebra", limit: None, run: algebra },
        Criterion { name: "ablation suite", limit: Some(Duration::from_secs(120)), run: ablation },
        Criterion { name: "structural checks", limit: None, run: structural },
        Criterion { name: "overlap suite", limit: None, run: overlap },
        Criterion { name: "determinism", limit: None, run: determinism },
        Criterion { name: "performance", limit: None, run: performance },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(c.run));
        let took = start.elapsed();
        let line = match result {
            Ok(detail) => match c.limit {
                Some(limit) if took > limit => Err(format!("took {took:.1?}, limit {limit:?}")),
                _ => Ok(detail),
            },
            Err(p) => Err(message(p)),
        };
        match line {
            Ok(detail) => println!("PASS  {:<24} {detail} [{took:.1?}]", c.name),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:<24} {why} [{took:.1?}]", c.name);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

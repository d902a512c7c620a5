use o2b_core::detection::ScoreMatrix;
use o2b_core::engine::{forward, PredictionTable};
use o2b_core::fixtures;
use o2b_core::model::{AblationMask, ModelGraph, TargetLayerSet};
use o2b_core::o2b::{ablation_deltas, ablation_deltas_with, base_predictions, weight_cube, Sweep};
use o2b_core::stats::{build_targets, TargetTable};
use o2b_core::tensor::Tensor;

pub type Images = Vec<(String, Tensor<f64>)>;

pub fn setup(seed: u64) -> (ModelGraph<f64>, Images, TargetTable) {
    let table = fixtures::stimulus_table(seed);
    table.validate().unwrap();
    let g = fixtures::toy_chain(seed).cast::<f64>();
    let images =
        fixtures::stimulus_images(fixtures::TOY_INPUT, seed).into_iter().map(|(id, x)| (id, x.cast())).collect();
    (g, images, build_targets(&table).unwrap())
}

/// Spearman correlation from scratch: quadratic average ranks, then Pearson.
pub fn oracle_spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|&a| {
                let below = v.iter().filter(|&&b| b < a).count() as f64;
                let equal = v.iter().filter(|&&b| b == a).count() as f64;
                1.0 + below + (equal - 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

/// Every prediction recomputed from the input image with the full forward pass.
pub fn oracle_correlations(
    g: &ModelGraph<f64>,
    images: &Images,
    targets: &TargetTable,
    mask: &AblationMask,
) -> Vec<Option<f64>> {
    let preds: Vec<(String, f64)> =
        images.iter().map(|(id, x)| (id.clone(), forward(g, x, mask, &[]).unwrap().prediction)).collect();
    let table = PredictionTable::new(preds).unwrap();
    targets
        .targets
        .iter()
        .map(|t| {
            let x = table.select(t.image_ids.iter().map(String::as_str)).unwrap();
            oracle_spearman(&x, &t.values)
        })
        .collect()
}

pub fn deltas_match_the_full_recompute_oracle() {
    let (g, images, targets) = setup(4);
    let base = base_predictions(&g, &images).unwrap();
    let base_r = oracle_correlations(&g, &images, &targets, &AblationMask::empty());
    let layers = TargetLayerSet::from_graph(&g).unwrap();
    assert!(layers.total_filters() <= 16);
    let mut checked = 0;
    for layer in layers.layers() {
        let d = ablation_deltas(&g, &layer.node_id, &images, &targets, &base).unwrap();
        assert_eq!((d.filters(), d.targets.len()), (layer.filters, 24));
        for f in 0..layer.filters {
            let abl = oracle_correlations(&g, &images, &targets, &AblationMask::single(&layer.node_id, f));
            for t in 0..24 {
                let expect = base_r[t].zip(abl[t]).map(|(b, a)| b - a);
                match (d.get(f, t), expect) {
                    (Some(got), Some(e)) => assert!((got - e).abs() <= 1e-10, "{} f{f} t{t}", layer.node_id),
                    (got, e) => assert_eq!(got, e),
                }
                checked += 1;
            }
        }
    }
    assert_eq!(checked, 16 * 24);
}

pub fn dead_filter_row_is_exactly_zero() {
    let (g, images, targets) = setup(4);
    let base = base_predictions(&g, &images).unwrap();
    let (node, ch) = fixtures::TOY_DEAD_FILTER;
    for sweep in [Sweep::Resume, Sweep::Full] {
        let d = ablation_deltas_with(&g, node, &images, &targets, &base, sweep).unwrap();
        assert!(d.row(ch).iter().all(|v| *v == Some(0.0)), "{sweep:?}");
    }
}

pub fn sweep_strategies_agree_on_non_dominating_targets() {
    let g = fixtures::toy_residual(2).cast::<f64>();
    let table = fixtures::stimulus_table(2);
    let targets = build_targets(&table).unwrap();
    let images: Images = fixtures::stimulus_images([3, 12, 12], 2).into_iter().map(|(id, x)| (id, x.cast())).collect();
    let base = base_predictions(&g, &images).unwrap();
    // Inside the residual block resuming is impossible; Auto falls back to full passes.
    assert!(ablation_deltas_with(&g, "layer1.relu1", &images, &targets, &base, Sweep::Resume).is_err());
    let auto = ablation_deltas(&g, "layer1.relu1", &images, &targets, &base).unwrap();
    let full = ablation_deltas_with(&g, "layer1.relu1", &images, &targets, &base, Sweep::Full).unwrap();
    assert_eq!(auto, full);
    let a = ablation_deltas_with(&g, "layer2", &images, &targets, &base, Sweep::Resume).unwrap();
    let b = ablation_deltas_with(&g, "layer2", &images, &targets, &base, Sweep::Full).unwrap();
    for (x, y) in a.values.iter().zip(&b.values) {
        assert!((x.unwrap() - y.unwrap()).abs() <= 1e-12);
    }
}

pub fn constant_ablated_predictions_are_flagged_not_zeroed() {
    // The minimal net has one filter; ablating it leaves only the head bias.
    let g = fixtures::minimal_net().cast::<f64>();
    let table = fixtures::stimulus_table(6);
    let targets = build_targets(&table).unwrap();
    let images: Images = fixtures::stimulus_images([1, 4, 4], 6).into_iter().map(|(id, x)| (id, x.cast())).collect();
    let base = base_predictions(&g, &images).unwrap();
    let d = ablation_deltas(&g, "relu", &images, &targets, &base).unwrap();
    assert_eq!(d.undefined(), 24);
    assert!(d.row(0).iter().all(Option::is_none));
    assert!(d.base.iter().all(Option::is_some));
    assert!(d.to_csv().lines().last().unwrap().split(',').skip(1).all(str::is_empty));
}

pub fn zero_scores_downstream_give_a_zero_cube() {
    let (g, images, targets) = setup(4);
    let base = base_predictions(&g, &images).unwrap();
    let d = ablation_deltas(&g, "relu2", &images, &targets, &base).unwrap();
    assert!(d.values.iter().flatten().any(|v| *v != 0.0));
    let cube = weight_cube(&d, &ScoreMatrix::zeros("relu2", 6, 601)).unwrap();
    assert!(cube.values.iter().all(|v| *v == 0.0));
}

pub fn result_is_independent_of_thread_count() {
    let (g, images, targets) = setup(8);
    let base = base_predictions(&g, &images).unwrap();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let serial = one.install(|| ablation_deltas(&g, "relu3", &images, &targets, &base).unwrap());
    let parallel = ablation_deltas(&g, "relu3", &images, &targets, &base).unwrap();
    assert_eq!(serial, parallel);
}

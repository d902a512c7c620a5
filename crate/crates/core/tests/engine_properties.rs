use o2b_core::engine::{forward, forward_from, predict, ResumePlan};
use o2b_core::fixtures;
use o2b_core::gradcam::{backward_to_layer, per_filter_cam, CamStatus};
use o2b_core::model::{load_model, save_model, AblationMask, FilterId, TargetLayerSet};
use o2b_core::tensor::Tensor;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn resume_matches_full_forward(seed in 0u64..1000, img in 0u64..1000, channels in prop::collection::btree_set(0usize..6, 0..4)) {
        let g = fixtures::toy_chain(seed).cast::<f64>();
        let x = fixtures::random_image(fixtures::TOY_INPUT, img).cast::<f64>();
        let mask: AblationMask = channels.iter().map(|&c| FilterId::new("relu3", c)).collect();
        let cached = forward(&g, &x, &AblationMask::empty(), &["relu3"]).unwrap().captures["relu3"].clone();
        let full = predict(&g, &x, &mask).unwrap();
        let resumed = forward_from(&g, "relu3", &cached, &mask).unwrap();
        prop_assert!((full - resumed).abs() <= 1e-12);
        prop_assert_eq!(forward(&g, &x, &mask, &[]).unwrap().prediction, full);
    }

    #[test]
    fn masking_is_idempotent_and_order_free(seed in 0u64..1000, a in 0usize..4, b in 0usize..6) {
        let g = fixtures::toy_chain(seed);
        let x = fixtures::random_image(fixtures::TOY_INPUT, seed);
        let ab: AblationMask = [FilterId::new("relu1", a), FilterId::new("relu2", b)].into_iter().collect();
        let ba: AblationMask = [FilterId::new("relu2", b), FilterId::new("relu1", a), FilterId::new("relu1", a)].into_iter().collect();
        prop_assert_eq!(predict(&g, &x, &ab).unwrap(), predict(&g, &x, &ba).unwrap());
    }

    #[test]
    fn cams_are_normalized_and_gradient_scale_free(seed in 0u64..500, k in 0.01f64..100.0) {
        let g = fixtures::toy_chain(seed).cast::<f64>();
        let x = fixtures::random_image(fixtures::TOY_INPUT, seed + 1).cast::<f64>();
        let pass = forward(&g, &x, &AblationMask::empty(), &["relu2"]).unwrap();
        let grad = backward_to_layer(&g, &pass, "relu2").unwrap();
        let act = &pass.captures["relu2"];
        let maps = per_filter_cam("x", "relu2", act, &grad, (16, 16)).unwrap();
        let scaled = Tensor::new(grad.shape().to_vec(), grad.data().iter().map(|v| v * k).collect()).unwrap();
        let maps_k = per_filter_cam("x", "relu2", act, &scaled, (16, 16)).unwrap();
        for (m, mk) in maps.iter().zip(&maps_k) {
            prop_assert!(m.map.iter().all(|v| (0.0..=1.0).contains(v)));
            if m.status == CamStatus::Normal {
                let hi = m.map.iter().cloned().fold(0.0, f64::max);
                let lo = m.map.iter().cloned().fold(1.0, f64::min);
                prop_assert_eq!((lo, hi), (0.0, 1.0));
            }
            prop_assert_eq!(m.status, mk.status);
            for (a, b) in m.map.iter().zip(&mk.map) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn bundle_round_trip_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    for (name, g) in [
        ("chain", fixtures::toy_chain(3)),
        ("residual", fixtures::toy_residual(3)),
        ("alexnet", fixtures::alexnet_like(3)),
    ] {
        let path = dir.path().join(name);
        save_model(&g, &path).unwrap();
        let back = load_model(&path).unwrap();
        let x = fixtures::random_image(g.input_shape(), 9);
        let empty = AblationMask::empty();
        assert_eq!(predict(&g, &x, &empty).unwrap(), predict(&back, &x, &empty).unwrap(), "{name}");
        assert_eq!(TargetLayerSet::from_graph(&g).unwrap(), TargetLayerSet::from_graph(&back).unwrap());
    }
}

#[test]
fn resume_points_follow_dominance() {
    let g = fixtures::toy_residual(0);
    for node in ["stem.maxpool", "layer1", "layer2", "smooth", "fc"] {
        assert!(ResumePlan::new(&g, node).is_ok(), "{node}");
    }
    for node in ["layer1.conv1", "layer1.relu1", "layer1.conv2"] {
        assert!(ResumePlan::new(&g, node).is_err(), "{node}");
    }
}

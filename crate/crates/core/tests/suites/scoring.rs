use o2b_core::detection::{
    box_region, build_score_matrix, peak_mean_score, score_box, score_region, ClassVocabulary, Detection,
};
use o2b_core::fixtures;
use o2b_core::gradcam::{image_cams, CamStatus, FilterCamMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct per-pixel evaluation: a pixel counts when its open unit square meets the
/// open box (both in map coordinates).
pub fn oracle_score(map: &[f64], h: usize, w: usize, bbox: [f64; 4], sx: f64, sy: f64) -> Option<f64> {
    let [x1, y1, x2, y2] = [bbox[0] * sx, bbox[1] * sy, bbox[2] * sx, bbox[3] * sy];
    let mut inside = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64, y as f64);
            if px < x2 && px + 1.0 > x1 && py < y2 && py + 1.0 > y1 {
                inside.push(map[y * w + x]);
            }
        }
    }
    if inside.is_empty() {
        return None;
    }
    let max = inside.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = inside.iter().sum::<f64>() / inside.len() as f64;
    Some(max / (1.0 + max - mean))
}

pub fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f64> {
    let mut m: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
    let (lo, hi) = m.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    m.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
    m
}

pub fn box_score_matches_per_pixel_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut checked = 0;
    while checked < 500 {
        let (h, w) = (rng.gen_range(2..=24), rng.gen_range(2..=24));
        let map = random_map(&mut rng, h, w);
        let (iw, ih) = (rng.gen_range(10.0..800.0), rng.gen_range(10.0..800.0));
        let x1 = rng.gen_range(0.0..iw);
        let y1 = rng.gen_range(0.0..ih);
        let bbox = [x1, y1, rng.gen_range(x1..=iw), rng.gen_range(y1..=ih)];
        let expect = oracle_score(&map, h, w, bbox, w as f64 / iw, h as f64 / ih);
        let got = box_region(bbox, (iw, ih), (h, w)).map(|r| score_region(&map, w, r));
        match (got, expect) {
            (Some(g), Some(e)) => {
                assert!((g - e).abs() <= 1e-12, "{g} vs {e}");
                checked += 1;
            }
            (None, None) => {}
            other => panic!("region disagreement {other:?} for {bbox:?}"),
        }
    }
}

pub fn score_box_in_map_coordinates() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..100 {
        let (h, w) = (rng.gen_range(2..=12), rng.gen_range(2..=12));
        let map = random_map(&mut rng, h, w);
        let x1 = rng.gen_range(0.0..w as f64 - 0.5);
        let y1 = rng.gen_range(0.0..h as f64 - 0.5);
        let bbox = [x1, y1, rng.gen_range(x1 + 0.1..=w as f64), rng.gen_range(y1 + 0.1..=h as f64)];
        let cam = FilterCamMap {
            image_id: "i".into(),
            node_id: "n".into(),
            channel: 0,
            height: h,
            width: w,
            map: map.clone(),
            status: CamStatus::Normal,
        };
        let e = oracle_score(&map, h, w, bbox, 1.0, 1.0).unwrap();
        assert!((score_box(&cam, bbox).unwrap() - e).abs() <= 1e-12);
    }
}

pub fn score_equals_peak_only_for_homogeneous_regions() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..200 {
        let n = rng.gen_range(1..=30);
        let homogeneous = rng.gen_bool(0.5);
        let level = rng.gen_range(0.0..=1.0);
        let v: Vec<f64> = if homogeneous { vec![level; n] } else { (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect() };
        let r = o2b_core::detection::BoxRegion { y0: 0, y1: 1, x0: 0, x1: n };
        let max = v.iter().cloned().fold(0.0, f64::max);
        let s = score_region(&v, n, r);
        let flat = v.iter().all(|x| *x == v[0]);
        assert_eq!(s == max, flat || max == 0.0, "{v:?}");
    }
}

pub fn monotonicity_grid() {
    let steps: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    for &mean in &steps {
        for w in steps.windows(2) {
            let (a, b) = (w[0], w[1]);
            if a >= mean {
                // Higher peak over the same mean scores higher.
                assert!(peak_mean_score(b, mean) > peak_mean_score(a, mean));
            }
        }
    }
    for &max in &steps {
        for w in steps.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= max && max > 0.0 {
                // Higher mean under the same peak scores higher.
                assert!(peak_mean_score(max, b) > peak_mean_score(max, a));
            }
        }
    }
    for &max in &steps {
        for &mean in steps.iter().filter(|m| **m <= max) {
            let s = peak_mean_score(max, mean);
            assert!((0.0..=max).contains(&s));
        }
    }
}

pub fn corpus(seed: u64, n: usize) -> Vec<(String, o2b_core::tensor::Tensor<f64>)> {
    (0..n)
        .map(|i| (format!("img_{i:02}"), fixtures::random_image(fixtures::TOY_INPUT, seed + i as u64).cast()))
        .collect()
}

pub fn score_matrix_matches_per_detection_oracle() {
    let g = fixtures::toy_chain(5).cast::<f64>();
    let images = corpus(50, 6);
    let vocab = ClassVocabulary::open_images();
    let ids: Vec<String> = images.iter().map(|(id, _)| id.clone()).collect();
    let pool: Vec<usize> = (0..8).collect();
    let dets = fixtures::synthetic_detections(&ids, &vocab, &pool, (320.0, 240.0), 4, 5);
    for target in ["relu1", "relu2", "relu3"] {
        let m = build_score_matrix(&g, target, &images, &dets, &vocab).unwrap();
        let mut sums = vec![0.0; m.filters * m.classes];
        let mut counts = vec![0u64; m.classes];
        for (id, x) in &images {
            let cams = image_cams(&g, id, x, target).unwrap();
            for d in dets.iter().filter(|d| &d.image_id == id) {
                counts[d.class_id] += 1;
                for cam in &cams {
                    let (sx, sy) = (cam.width as f64 / d.image_w, cam.height as f64 / d.image_h);
                    let s = oracle_score(&cam.map, cam.height, cam.width, d.bbox, sx, sy).unwrap();
                    sums[cam.channel * m.classes + d.class_id] += s;
                }
            }
        }
        assert_eq!(m.counts, counts);
        for f in 0..m.filters {
            for k in 0..m.classes {
                let e = if counts[k] == 0 { 0.0 } else { sums[f * m.classes + k] / counts[k] as f64 };
                assert!((m.get(f, k) - e).abs() <= 1e-12, "{target} f{f} k{k}");
            }
        }
        let dead = fixtures::TOY_DEAD_FILTER;
        if target == dead.0 {
            assert!(m.row(dead.1).iter().all(|v| *v == 0.0));
        }
    }
}

pub fn full_vocabulary_with_250_detected_classes_leaves_351_zero_columns() {
    let g = fixtures::toy_chain(1);
    let vocab = ClassVocabulary::open_images();
    assert_eq!(vocab.len(), 601);
    let images: Vec<(String, o2b_core::tensor::Tensor<f32>)> =
        (0..10).map(|i| (format!("img_{i}"), fixtures::random_image(fixtures::TOY_INPUT, 70 + i))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut classes: Vec<usize> = (0..601).collect();
    rand::seq::SliceRandom::shuffle(classes.as_mut_slice(), &mut rng);
    let dets: Vec<Detection> = classes[..250]
        .iter()
        .enumerate()
        .map(|(i, &k)| Detection {
            image_id: format!("img_{}", i % 10),
            class_id: k,
            class_name: vocab.name(k).unwrap().to_string(),
            bbox: [0.0, 0.0, rng.gen_range(60.0..100.0), rng.gen_range(60.0..100.0)],
            confidence: 0.5,
            image_w: 100.0,
            image_h: 100.0,
        })
        .collect();
    let m = build_score_matrix(&g, "relu3", &images, &dets, &vocab).unwrap();
    assert_eq!(m.detected_classes(), 250);
    assert_eq!(m.zero_columns(), 351);
}

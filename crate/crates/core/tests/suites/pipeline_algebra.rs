use o2b_core::detection::{CategoryMap, ClassVocabulary, ScoreMatrix};
use o2b_core::o2b::{class_weights, topx_category_contributions, weight_cube, ClassWeights, DeltaMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TARGETS: usize = 24;

pub fn random_pair(rng: &mut ChaCha8Rng) -> (DeltaMatrix, ScoreMatrix) {
    let nf = rng.gen_range(1..=12);
    let nc = rng.gen_range(1..=40);
    let delta = DeltaMatrix {
        node_id: "layer".into(),
        targets: (0..TARGETS).map(|t| format!("t{t}")).collect(),
        base: (0..TARGETS).map(|_| Some(rng.gen_range(-1.0..1.0))).collect(),
        values: (0..nf * TARGETS).map(|_| Some(rng.gen_range(-0.5..0.5))).collect(),
    };
    let mut scores = ScoreMatrix::zeros("layer", nf, nc);
    for v in &mut scores.values {
        // Roughly a third of the classes are never detected.
        *v = if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..1.0) };
    }
    (delta, scores)
}

/// `V[i][k] = sum_j C[j, i] * S[j, k]`, evaluated without the cube.
pub fn direct(delta: &DeltaMatrix, s: &ScoreMatrix) -> Vec<f64> {
    let mut v = vec![0.0; TARGETS * s.classes];
    for i in 0..TARGETS {
        for k in 0..s.classes {
            v[i * s.classes + k] = (0..s.filters).map(|j| delta.get(j, i).unwrap() * s.get(j, k)).sum();
        }
    }
    v
}

pub fn class_weights_equal_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..100 {
        let (c, s) = random_pair(&mut rng);
        let w = weight_cube(&c, &s).unwrap();
        let v = class_weights(&w);
        for (a, b) in v.values.iter().zip(direct(&c, &s)) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

pub fn factorization_identity_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..100 {
        let (c, s) = random_pair(&mut rng);
        let w = weight_cube(&c, &s).unwrap();
        assert_eq!(w.values.len(), TARGETS * s.filters * s.classes);
        for i in 0..TARGETS {
            for j in 0..s.filters {
                let cji = c.get(j, i).unwrap();
                for k in 0..s.classes {
                    assert_eq!(w.get(i, j, k), cji * s.get(j, k));
                    if s.get(j, k) != 0.0 {
                        let back = w.get(i, j, k) / s.get(j, k);
                        assert!((back - cji).abs() <= 1e-15 * cji.abs().max(f64::MIN_POSITIVE));
                    }
                }
            }
        }
    }
}

pub fn zero_scores_or_deltas_give_a_zero_cube() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let (mut c, s) = random_pair(&mut rng);
    let zero_s = ScoreMatrix::zeros("layer", s.filters, s.classes);
    assert!(weight_cube(&c, &zero_s).unwrap().values.iter().all(|v| *v == 0.0));
    c.values.iter_mut().for_each(|v| *v = Some(0.0));
    assert!(weight_cube(&c, &s).unwrap().values.iter().all(|v| *v == 0.0));
}

pub fn scaling_and_negation() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    for _ in 0..50 {
        let (c, s) = random_pair(&mut rng);
        let v = class_weights(&weight_cube(&c, &s).unwrap());
        let k = rng.gen_range(0.1..10.0);
        let mut ks = s.clone();
        ks.values.iter_mut().for_each(|x| *x *= k);
        let kv = class_weights(&weight_cube(&c, &ks).unwrap());
        for (a, b) in kv.values.iter().zip(&v.values) {
            assert!((a - k * b).abs() <= 1e-12 * (1.0 + (k * b).abs()));
        }
        let mut nc = c.clone();
        nc.values.iter_mut().for_each(|x| *x = x.map(|x| -x));
        let nv = class_weights(&weight_cube(&nc, &s).unwrap());
        for (a, b) in nv.values.iter().zip(&v.values) {
            assert_eq!(*a, -b);
        }
    }
}

pub fn categories_outside_both_extremes_report_zero() {
    let names: Vec<String> = (0..10).map(|k| format!("c{k}")).collect();
    let vocab = ClassVocabulary::new(names.clone()).unwrap();
    let pairs: Vec<(String, String)> =
        names.iter().enumerate().map(|(k, n)| (n.clone(), ["A", "B", "C"][k % 3].to_string())).collect();
    let cats = CategoryMap::new(&pairs).unwrap();
    // Class weights c0..c9 descending by id: 0.9, 0.8, ..., 0.0; X = 2 keeps c0, c1 (A, B)
    // on top and c8, c9 at the bottom, which are not negative.
    let weights = ClassWeights {
        node_id: "n".into(),
        targets: vec!["t".into()],
        classes: 10,
        values: (0..10).map(|k| 0.9 - 0.1 * k as f64).collect(),
    };
    let r = topx_category_contributions(&weights, &vocab, &cats, 2).unwrap();
    let c = r.iter().find(|c| c.category == "C").unwrap();
    assert_eq!((c.positive_sum, c.negative_sum), (0.0, 0.0));
    assert!(r.iter().all(|c| c.negative_sum == 0.0));
    assert_eq!(r.iter().map(|c| c.positive_sum).sum::<f64>(), 0.9 + 0.8);
}

use o2b_core::detection::{overlap_matrix, CategoryMap, Detection};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CLASSES: [(&str, &str); 5] =
    [("Man", "Human"), ("Woman", "Human"), ("Car", "Transport"), ("Hat", "Clothing"), ("Tree", "Nature")];

pub fn categories() -> CategoryMap {
    CategoryMap::new(&CLASSES).unwrap()
}

/// Integer box on a 40x40 grid with positive area.
pub fn grid_box(rng: &mut ChaCha8Rng) -> [i64; 4] {
    let x1 = rng.gen_range(0..39);
    let y1 = rng.gen_range(0..39);
    [x1, y1, rng.gen_range(x1 + 1..=40), rng.gen_range(y1 + 1..=40)]
}

/// Percentage of `a`'s unit cells also inside `b`, by counting cells.
pub fn oracle_percent(a: [i64; 4], b: [i64; 4]) -> f64 {
    let mut inside = 0;
    let mut both = 0;
    for y in a[1]..a[3] {
        for x in a[0]..a[2] {
            inside += 1;
            if x >= b[0] && x < b[2] && y >= b[1] && y < b[3] {
                both += 1;
            }
        }
    }
    100.0 * both as f64 / inside as f64
}

pub fn detection(image: &str, class: usize, bbox: [f64; 4]) -> Detection {
    Detection {
        image_id: image.into(),
        class_id: class,
        class_name: CLASSES[class].0.into(),
        bbox,
        confidence: 0.9,
        image_w: 40.0,
        image_h: 40.0,
    }
}

pub fn matches_cell_counting_oracle_on_random_images() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let cats = categories();
    let n = cats.categories().len();
    let mut dets = Vec::new();
    let mut sums = vec![0.0; n * n];
    let mut pairs = vec![0u64; n * n];
    // Box coordinates are scaled by an arbitrary factor; percentages are scale-free.
    let scale = 0.37;
    for img in 0..200 {
        let boxes: Vec<(usize, [i64; 4])> =
            (0..rng.gen_range(2..=6)).map(|_| (rng.gen_range(0..5), grid_box(&mut rng))).collect();
        for (class, b) in &boxes {
            dets.push(detection(&format!("img{img:03}"), *class, b.map(|v| v as f64 * scale)));
        }
        for (i, (ca, a)) in boxes.iter().enumerate() {
            for (j, (cb, b)) in boxes.iter().enumerate() {
                if i != j {
                    let (r, c) = (cats.category_of(CLASSES[*ca].0).unwrap(), cats.category_of(CLASSES[*cb].0).unwrap());
                    sums[r * n + c] += oracle_percent(*a, *b);
                    pairs[r * n + c] += 1;
                }
            }
        }
    }
    let m = overlap_matrix(&dets, &cats).unwrap();
    for r in 0..n {
        for c in 0..n {
            assert_eq!(m.pairs(r, c), pairs[r * n + c]);
            match m.get(r, c) {
                Some(v) => assert!((v - sums[r * n + c] / pairs[r * n + c] as f64).abs() <= 1e-9),
                None => assert_eq!(pairs[r * n + c], 0),
            }
        }
    }
}

pub fn identical_and_disjoint_boxes() {
    let cats = categories();
    let same = [detection("a", 0, [1.0, 1.0, 5.0, 5.0]), detection("a", 2, [1.0, 1.0, 5.0, 5.0])];
    let m = overlap_matrix(&same, &cats).unwrap();
    assert_eq!(m.get(0, 1), Some(100.0));
    assert_eq!(m.get(1, 0), Some(100.0));
    let apart = [detection("a", 0, [1.0, 1.0, 5.0, 5.0]), detection("a", 2, [6.0, 6.0, 9.0, 9.0])];
    let m = overlap_matrix(&apart, &cats).unwrap();
    assert_eq!(m.get(0, 1), Some(0.0));
    let touching = [detection("a", 0, [1.0, 1.0, 5.0, 5.0]), detection("a", 2, [5.0, 1.0, 9.0, 5.0])];
    assert_eq!(overlap_matrix(&touching, &cats).unwrap().get(0, 1), Some(0.0));
}

pub fn boxes_in_different_images_never_pair() {
    let cats = categories();
    let d = [detection("a", 0, [0.0, 0.0, 5.0, 5.0]), detection("b", 2, [0.0, 0.0, 5.0, 5.0])];
    let m = overlap_matrix(&d, &cats).unwrap();
    assert_eq!(m.get(0, 1), None);
    assert!(m.to_csv().contains("Human,,,,"));
}

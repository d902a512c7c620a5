mod suites;

use o2b_core::detection::score_region;
use proptest::prelude::*;

#[test]
fn box_score_matches_per_pixel_oracle() {
    suites::scoring::box_score_matches_per_pixel_oracle();
}

#[test]
fn score_box_in_map_coordinates() {
    suites::scoring::score_box_in_map_coordinates();
}

#[test]
fn score_equals_peak_only_for_homogeneous_regions() {
    suites::scoring::score_equals_peak_only_for_homogeneous_regions();
}

#[test]
fn monotonicity_grid() {
    suites::scoring::monotonicity_grid();
}

#[test]
fn score_matrix_matches_per_detection_oracle() {
    suites::scoring::score_matrix_matches_per_detection_oracle();
}

#[test]
fn full_vocabulary_with_250_detected_classes_leaves_351_zero_columns() {
    suites::scoring::full_vocabulary_with_250_detected_classes_leaves_351_zero_columns();
}

proptest! {
    #[test]
    fn score_lies_between_mean_and_peak(v in prop::collection::vec(0.0f64..=1.0, 1..50)) {
        let n = v.len();
        let r = o2b_core::detection::BoxRegion { y0: 0, y1: 1, x0: 0, x1: n };
        let s = score_region(&v, n, r);
        let max = v.iter().cloned().fold(0.0, f64::max);
        let mean = v.iter().sum::<f64>() / n as f64;
        prop_assert!(s <= max + 1e-15);
        prop_assert!(s >= mean * max / (1.0 + max) - 1e-15);
    }

    #[test]
    fn score_is_permutation_invariant(mut v in prop::collection::vec(0.0f64..=1.0, 2..40), k in 0usize..40) {
        let n = v.len();
        let r = o2b_core::detection::BoxRegion { y0: 0, y1: 1, x0: 0, x1: n };
        let a = score_region(&v, n, r);
        v.rotate_left(k % n);
        prop_assert!((score_region(&v, n, r) - a).abs() <= 1e-12);
    }
}

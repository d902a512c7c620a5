use o2b_core::detection::{CategoryMap, ClassVocabulary, ScoreMatrix, CATEGORY_COUNT, DEFAULT_THRESHOLD};
use o2b_core::fixtures;
use o2b_core::o2b::{class_weights, weight_cube, DeltaMatrix, DEFAULT_TOP_X};
use o2b_core::stats::{build_targets, Split, Stars, StimulusTable, STAR_THRESHOLDS};

pub fn twenty_four_targets_over_two_splits_of_24() {
    let table = fixtures::stimulus_table(0);
    assert_eq!(table.len(), 48);
    let targets = build_targets(&table).unwrap();
    assert_eq!(targets.len(), 24);
    for t in &targets.targets {
        assert_eq!(t.values.len(), 24);
        assert_eq!(t.image_ids.len(), 24);
    }
    let congruent = targets.targets.iter().filter(|t| t.split == Split::Congruent).count();
    assert_eq!(congruent, 12);
    let labels = targets.labels();
    assert_eq!(labels[0], "IV Cg. True");
    assert_eq!(labels[23], "SV Incg. HLR");
    let mut unique = labels.clone();
    unique.sort();
    unique.dedup();
    assert_eq!(unique.len(), 24);
}

pub fn stimulus_table_round_trips_and_rejects_broken_tables() {
    let table = fixtures::stimulus_table(1);
    let back = StimulusTable::parse_csv(&table.to_csv()).unwrap();
    assert_eq!(back, table);
    let mut rows = table.rows().to_vec();
    rows.pop();
    assert!(build_targets(&StimulusTable::new(rows)).is_err());
    let mut rows = table.rows().to_vec();
    rows[0].congruent = !rows[0].congruent;
    assert!(StimulusTable::new(rows).validate().is_err());
}

pub fn star_thresholds() {
    assert_eq!(STAR_THRESHOLDS, [0.05, 0.01, 0.001]);
    assert_eq!(Stars::from_p(0.04).as_str(), "*");
    assert_eq!(Stars::from_p(0.009).as_str(), "**");
    assert_eq!(Stars::from_p(0.0009).as_str(), "***");
    assert_eq!(Stars::from_p(0.2).as_str(), "");
}

pub fn default_x_is_a_tenth_of_250_detected_classes() {
    assert_eq!(DEFAULT_TOP_X, 25);
    assert_eq!(DEFAULT_TOP_X * 10, 250);
    assert_eq!(DEFAULT_THRESHOLD, 0.25);
}

pub fn category_map_reproduces_the_stated_constituent_counts() {
    let cats = CategoryMap::bundled();
    let vocab = ClassVocabulary::open_images();
    cats.validate_complete(&vocab).unwrap();
    assert_eq!(cats.categories().len(), CATEGORY_COUNT);
    assert_eq!(CATEGORY_COUNT, 34);
    assert_eq!(cats.class_count(), 601);
    for (name, count) in [
        ("Human", 5),
        ("Body Parts", 13),
        ("Transport", 28),
        ("Clothing", 30),
        ("Furniture", 25),
        ("Health", 9),
        ("Nature", 14),
        ("Places", 11),
        ("Sports", 39),
    ] {
        assert_eq!(cats.count_of(name), Some(count), "{name}");
    }
}

pub fn car_is_class_90_and_its_weight_aggregates_its_column() {
    let vocab = ClassVocabulary::open_images();
    assert_eq!(vocab.id("Car"), Some(90));
    let nf = 3;
    let delta = DeltaMatrix {
        node_id: "features.4".into(),
        targets: build_targets(&fixtures::stimulus_table(0)).unwrap().labels(),
        base: vec![Some(0.3); 24],
        values: (0..nf * 24).map(|i| Some(0.01 * (i % 7) as f64 - 0.02)).collect(),
    };
    let mut s = ScoreMatrix::zeros("features.4", nf, vocab.len());
    for j in 0..nf {
        s.values[j * vocab.len() + 90] = 0.2 + 0.1 * j as f64;
    }
    let w = weight_cube(&delta, &s).unwrap();
    let v = class_weights(&w);
    assert_eq!(v.targets[0], "IV Cg. True");
    let column: f64 = (0..nf).map(|j| w.get(0, j, 90)).sum();
    assert_eq!(v.get(0, 90), column);
}

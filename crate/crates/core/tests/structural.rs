mod suites;

#[test]
fn twenty_four_targets_over_two_splits_of_24() {
    suites::structural::twenty_four_targets_over_two_splits_of_24();
}

#[test]
fn stimulus_table_round_trips_and_rejects_broken_tables() {
    suites::structural::stimulus_table_round_trips_and_rejects_broken_tables();
}

#[test]
fn star_thresholds() {
    suites::structural::star_thresholds();
}

#[test]
fn default_x_is_a_tenth_of_250_detected_classes() {
    suites::structural::default_x_is_a_tenth_of_250_detected_classes();
}

#[test]
fn category_map_reproduces_the_stated_constituent_counts() {
    suites::structural::category_map_reproduces_the_stated_constituent_counts();
}

#[test]
fn car_is_class_90_and_its_weight_aggregates_its_column() {
    suites::structural::car_is_class_90_and_its_weight_aggregates_its_column();
}

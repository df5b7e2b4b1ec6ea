mod common;

use common::suites::{gp_closed_form_cases, metric_checks, operator_algebra_max_err};

#[test]
fn metrics_match_hand_computed_values() {
    let failed: Vec<String> = metric_checks().into_iter().filter(|(_, ok)| !ok).map(|(n, _)| n).collect();
    assert!(failed.is_empty(), "failed: {failed:?}");
}

#[test]
fn gradient_penalty_closed_forms() {
    for (label, got, expected) in gp_closed_form_cases() {
        assert!((got - expected).abs() <= 1e-5, "{label}: {got} vs {expected}");
    }
}

#[test]
fn staged_operators_equal_composed_pair() {
    assert!(operator_algebra_max_err(100, 3) <= 1e-6);
}

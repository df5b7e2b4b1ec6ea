mod common;

use common::suites::{differentiability_suite, FD_TOLERANCE};

#[test]
fn analytic_gradients_match_finite_differences() {
    let results = differentiability_suite();
    let failures: Vec<String> = results
        .iter()
        .filter(|(_, err)| !(*err <= FD_TOLERANCE))
        .map(|(name, err)| format!("{name}: {err:.3e}"))
        .collect();
    assert!(failures.is_empty(), "gradient mismatches: {failures:?}");
    let names: Vec<&str> = results.iter().map(|(n, _)| *n).collect();
    for required in ["perspective", "jpeg_approx", "generator", "gradient_penalty", "perceptual_multiscale"] {
        assert!(names.contains(&required), "suite lost {required}");
    }
}

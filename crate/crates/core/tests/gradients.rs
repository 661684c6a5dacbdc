//! Analytic loss gradients against central finite differences.

mod common;

use std::time::{Duration, Instant};

#[test]
fn gradients_match_finite_differences() {
    let start = Instant::now();
    let tally = common::gradient_suite(20, 1e-4);
    assert!(
        start.elapsed() < Duration::from_secs(60),
        "took {:?}",
        start.elapsed()
    );
    assert!(tally.worst_fraction >= 0.95, "{tally:?}");
}

#[test]
fn a_wrong_gradient_is_detected() {
    // Sanity check of the checker: a tolerance of zero cannot be met by
    // finite differences on a curved loss.
    let (checked, within) = common::gradient_check(
        ltfair_core::approx::Architecture::TanhMlp,
        "weighted_bce",
        0,
        0.0,
    );
    assert!(within < checked);
}

//! Analytic gradients against central finite differences in f64.

mod common;

use common::{gradient_suite, FD_TOLERANCE};

#[test]
fn every_loss_matches_finite_differences() {
    let results = gradient_suite(100, 2024);
    let bad: Vec<_> = results.iter().filter(|r| !(r.2 <= FD_TOLERANCE)).collect();
    assert!(bad.is_empty(), "gradient mismatches: {bad:?}");
}

mod support;

use granbench::harness::{self, HarnessError};
use proptest::prelude::*;

#[test]
fn binomial_tails_match_published_values() {
    for (k, expected) in [(25, 0.0011), (24, 0.0035), (23, 0.0100)] {
        let p = harness::binomial_test_one_sided(k, 32, 0.5).unwrap();
        assert!((p - expected).abs() <= 5e-5, "k = {k}: {p}");
    }
}

#[test]
fn binomial_tail_matches_direct_summation() {
    for n in [1u64, 5, 32, 60] {
        for k in 0..=n {
            for p0 in [0.1, 0.5, 0.73] {
                let got = harness::binomial_test_one_sided(k, n, p0).unwrap();
                let want = support::binomial_upper(k, n, p0).min(1.0);
                assert!((got - want).abs() < 1e-10, "P(X ≥ {k}) for n = {n}, p = {p0}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn clopper_pearson_matches_published_intervals() {
    for (k, lo, hi) in [(25, 0.600, 0.907), (17, 0.347, 0.709)] {
        let (l, h) = harness::clopper_pearson(k, 32, 0.05).unwrap();
        assert!((l - lo).abs() <= 0.002 && (h - hi).abs() <= 0.002, "k = {k}: ({l}, {h})");
    }
}

#[test]
fn clopper_pearson_bounds_solve_the_tail_equations() {
    // The lower bound puts α/2 in the upper tail at k, the upper bound puts
    // α/2 in the lower tail at k.
    for (k, n, alpha) in [(25u64, 32u64, 0.05), (17, 32, 0.05), (1, 10, 0.1), (9, 10, 0.01)] {
        let (lo, hi) = harness::clopper_pearson(k, n, alpha).unwrap();
        assert!((support::binomial_upper(k, n, lo) - alpha / 2.0).abs() < 1e-9);
        assert!((support::binomial_lower(k, n, hi) - alpha / 2.0).abs() < 1e-9);
    }
}

#[test]
fn clopper_pearson_edges_are_closed() {
    assert_eq!(harness::clopper_pearson(0, 10, 0.05).unwrap().0, 0.0);
    assert_eq!(harness::clopper_pearson(10, 10, 0.05).unwrap().1, 1.0);
}

#[test]
fn invalid_statistics_arguments_are_rejected() {
    assert!(matches!(harness::binomial_test_one_sided(5, 4, 0.5), Err(HarnessError::InvalidArgument(_))));
    assert!(matches!(harness::binomial_test_one_sided(2, 4, 1.0), Err(HarnessError::InvalidArgument(_))));
    assert!(matches!(harness::clopper_pearson(0, 0, 0.05), Err(HarnessError::InvalidArgument(_))));
    assert!(matches!(harness::clopper_pearson(1, 4, 0.0), Err(HarnessError::InvalidArgument(_))));
}

#[test]
fn pearson_rejects_degenerate_series() {
    assert!(matches!(harness::pearson(&[1.0, 2.0], &[1.0]), Err(HarnessError::DegenerateInput(_))));
    assert!(matches!(harness::pearson(&[1.0], &[1.0]), Err(HarnessError::DegenerateInput(_))));
    assert!(matches!(harness::pearson(&[1.0, 1.0, 1.0], &[0.0, 1.0, 0.0]), Err(HarnessError::DegenerateInput(_))));
}

#[test]
fn pearson_p_value_of_perfect_and_null_correlation() {
    assert_eq!(harness::pearson_p_value(1.0, 10), 0.0);
    assert!((harness::pearson_p_value(0.0, 10) - 1.0).abs() < 1e-12);
    assert_eq!(harness::pearson_p_value(0.5, 2), 1.0);
}

fn series() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (3usize..40).prop_flat_map(|n| (prop::collection::vec(-50i32..50, n), prop::collection::vec(-50i32..50, n))).prop_map(
        |(xs, ys)| (xs.into_iter().map(f64::from).collect(), ys.into_iter().map(f64::from).collect()),
    )
}

proptest! {
    #[test]
    fn pearson_agrees_with_raw_moments((xs, ys) in series()) {
        if let Ok(r) = harness::pearson(&xs, &ys) {
            prop_assert!((-1.0..=1.0).contains(&r));
            prop_assert!((r - support::pearson_raw(&xs, &ys)).abs() < 1e-9);
        }
    }

    #[test]
    fn pearson_is_symmetric_and_affine_invariant((xs, ys) in series(), a in 0.5f64..4.0, b in -10.0f64..10.0) {
        if let Ok(r) = harness::pearson(&xs, &ys) {
            prop_assert!((harness::pearson(&ys, &xs).unwrap() - r).abs() < 1e-12);
            let scaled: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            prop_assert!((harness::pearson(&scaled, &ys).unwrap() - r).abs() < 1e-9);
            let flipped: Vec<f64> = xs.iter().map(|x| -x).collect();
            prop_assert!((harness::pearson(&flipped, &ys).unwrap() + r).abs() < 1e-9);
        }
    }

    #[test]
    fn binomial_tail_decreases_in_k(n in 1u64..80, p0 in 0.05f64..0.95) {
        let tails: Vec<f64> = (0..=n).map(|k| harness::binomial_test_one_sided(k, n, p0).unwrap()).collect();
        prop_assert_eq!(tails[0], 1.0);
        prop_assert!(tails.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn clopper_pearson_contains_the_estimate(n in 1u64..80, k_frac in 0.0f64..=1.0, alpha in 0.01f64..0.2) {
        let k = (k_frac * n as f64).round() as u64;
        let (lo, hi) = harness::clopper_pearson(k, n, alpha).unwrap();
        let est = k as f64 / n as f64;
        prop_assert!(lo <= est + 1e-12 && est <= hi + 1e-12);
        let (lo2, hi2) = harness::clopper_pearson(k, n, alpha / 2.0).unwrap();
        prop_assert!(lo2 <= lo + 1e-12 && hi <= hi2 + 1e-12);
    }
}

mod common;

use proptest::prelude::*;

#[test]
fn hundred_random_networks_match_finite_differences() {
    let out = common::run(100, 2024);
    assert!(out.failures.is_empty(), "{} mismatches, first: {}", out.failures.len(), out.failures[0]);
    // (40 + 15) + (20 + 12) + (12 + 9) + 4 learnable values per network.
    assert_eq!(out.checked, 100 * 112);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_seed_matches_finite_differences(seed in any::<u64>()) {
        let out = common::run(1, seed);
        prop_assert!(out.failures.is_empty(), "{:?}", out.failures);
    }
}

mod common;

use common::gradient_error;
use proptest::prelude::*;

#[test]
fn twenty_random_nets_match_finite_differences() {
    for seed in 0..20 {
        let err = gradient_error(seed);
        assert!(err < 1e-5, "seed {seed}: relative error {err}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn backprop_matches_finite_differences(seed in any::<u64>()) {
        prop_assert!(gradient_error(seed) < 1e-5);
    }
}

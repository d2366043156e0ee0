mod common;

use alesal_core::model::AblationConfig;
use common::*;
use proptest::prelude::*;

#[test]
fn every_operator_matches_finite_differences() {
    for (name, report) in op_suite() {
        assert!(report.passed(), "{name}: max rel err {:.2e}, failures {:?}", report.max_rel_error, report.failures);
    }
}

#[test]
fn tiny_network_matches_finite_differences() {
    let report = check_tiny_network(tiny_config(), 3);
    assert!(report.passed(), "max rel err {:.2e}, {} failures: {:?}", report.max_rel_error, report.failures.len(), report.failures.first());
}

#[test]
fn tiny_network_ablations_match_finite_differences() {
    for ablation in [AblationConfig::TA_ONLY, AblationConfig::PA_ONLY, AblationConfig::NONE] {
        let report = check_tiny_network(ModelConfig { ablation, ..tiny_config() }, 4);
        assert!(report.passed(), "{}: max rel err {:.2e}", ablation.label(), report.max_rel_error);
    }
    let shared = ModelConfig { shared_gru: true, ..tiny_config() };
    assert!(check_tiny_network(shared, 5).passed());
}

use alesal_core::model::ModelConfig;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dense_random_shapes(batch in 1usize..4, inp in 1usize..6, out in 1usize..5, seed in 0u64..1000) {
        let r = check_dense(batch, inp, out, seed);
        prop_assert!(r.passed(), "{:.2e}", r.max_rel_error);
    }

    #[test]
    fn conv_random_shapes(cin in 1usize..3, len in 5usize..12, cout in 1usize..3, half in 0usize..3, stride in 1usize..3, seed in 0u64..1000) {
        let k = 2 * half + 1;
        let r = check_conv(cin, len, cout, k, stride, half, seed);
        prop_assert!(r.passed(), "{:.2e}", r.max_rel_error);
    }

    #[test]
    fn gru_random_shapes(t in 1usize..5, inp in 1usize..4, hid in 1usize..4, seed in 0u64..1000) {
        let r = check_gru(t, inp, hid, seed);
        prop_assert!(r.passed(), "{:.2e}", r.max_rel_error);
    }

    #[test]
    fn attention_random_shapes(t in 1usize..5, d in 1usize..4, out in 1usize..3, seed in 0u64..1000) {
        let r = check_self_attention(t, d, out, seed);
        prop_assert!(r.passed(), "{:.2e}", r.max_rel_error);
    }
}

mod common;

use clues_core::model::{finite_diff_grad, per_sample_grad, per_sample_grad_layer, per_sample_loss, Architecture};
use common::*;
use proptest::prelude::*;

fn arch_strategy() -> impl Strategy<Value = Architecture> {
    prop_oneof![
        (2usize..7, 2usize..7).prop_map(|(d_in, d_out)| Architecture::Linear { d_in, d_out }),
        (2usize..6, 2usize..7, 2usize..6).prop_map(|(d_in, hidden, d_out)| Architecture::Mlp { d_in, hidden, d_out }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn adapter_gradient_matches_central_differences(arch in arch_strategy(), seed in 0u64..10_000, class in any::<bool>()) {
        let (base, ad) = adapted(arch, 1, seed);
        let mut r = rng(seed ^ 0xabc);
        let z = if class {
            class_sample(&mut r, 0, arch.input_dim(), arch.output_dim())
        } else {
            regression_sample(&mut r, 0, arch.input_dim(), arch.output_dim())
        };
        let g = per_sample_grad(&base, Some(&ad), &z).unwrap();
        let fd = finite_diff_grad(
            |p| per_sample_loss(&base, Some(&ad.with_flat(p).unwrap()), &z).unwrap(),
            &ad.flat(),
            1e-5,
        );
        prop_assert!(rel_err(&g, &fd) < 1e-6, "relative error {}", rel_err(&g, &fd));
    }

    #[test]
    fn full_finetune_gradient_matches_central_differences(arch in arch_strategy(), seed in 0u64..10_000) {
        let base = clues_core::ModelParams::random(arch, 1.0, seed);
        let mut r = rng(seed);
        let z = regression_sample(&mut r, 0, arch.input_dim(), arch.output_dim());
        let g = per_sample_grad(&base, None, &z).unwrap();
        let fd = finite_diff_grad(|p| per_sample_loss(&base.with_flat(p).unwrap(), None, &z).unwrap(), &base.flat(), 1e-5);
        prop_assert!(rel_err(&g, &fd) < 1e-6);
    }

    #[test]
    fn layer_gradient_is_a_contiguous_block(seed in 0u64..10_000) {
        let arch = Architecture::Mlp { d_in: 4, hidden: 5, d_out: 3 };
        let (base, ad) = adapted(arch, 2, seed);
        let z = regression_sample(&mut rng(seed), 1, 4, 3);
        let full = per_sample_grad(&base, Some(&ad), &z).unwrap();
        let fc1 = per_sample_grad_layer(&base, &ad, &z, "fc1").unwrap();
        let fc2 = per_sample_grad_layer(&base, &ad, &z, "fc2").unwrap();
        prop_assert_eq!([fc1, fc2].concat(), full);
    }
}

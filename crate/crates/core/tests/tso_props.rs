mod common;

use hopool_core::descriptors::normalized_hotd;
use hopool_core::tensor::{identity_tensor, super_diagonal};
use hopool_core::tso::{
    maxexp_f, maxexp_scalar, sigme, tso, tso_fast_even, tso_fast_odd, tso_naive, tso_naive_counted,
};
use hopool_core::{DenseTensor, FeatureMatrix};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn descriptor(seed: u64, order: usize, d: usize) -> DenseTensor {
    let mut rng = common::rng(seed);
    let f = FeatureMatrix::new(common::normal_matrix(&mut rng, d, 2 * d + 1)).unwrap();
    normalized_hotd(&f, order).unwrap()
}

fn sorted_eigs(m: &DMatrix<f64>) -> Vec<f64> {
    let mut e: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    e.sort_by(f64::total_cmp);
    e
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn eta_one_is_identity(seed in any::<u64>(), order in 2usize..=4, d in 1usize..=4) {
        let t = descriptor(seed, order, d);
        prop_assert!(tso(&t, 1).unwrap().max_abs_diff(&t).unwrap() <= 1e-14);
    }

    #[test]
    fn fast_even_matches_oracle(seed in any::<u64>(), d in 1usize..=4, half in 1usize..=2, eta in 1u32..=64) {
        let t = descriptor(seed, 2 * half, d);
        let fast = tso_fast_even(&t, eta).unwrap();
        let oracle = common::even_tso(&t, eta);
        prop_assert!(common::rel_err(common::unfold_balanced(&fast).as_slice(), oracle.as_slice()) <= 1e-10);
        prop_assert!(fast.relative_error(&tso_naive(&t, eta).unwrap()).unwrap() <= 1e-10);
    }

    #[test]
    fn fast_odd_matches_oracle(seed in any::<u64>(), d in 1usize..=3, k in 0u32..=3) {
        let eta = 3u32.pow(k);
        let t = descriptor(seed, 3, d);
        let fast = tso_fast_odd(&t, eta).unwrap();
        prop_assert!(common::rel_err(fast.data(), &common::odd_tso(&t, eta)) <= 1e-10);
        prop_assert!(fast.relative_error(&tso_naive(&t, eta).unwrap()).unwrap() <= 1e-10);
    }

    #[test]
    fn spectral_consistency(seed in any::<u64>(), d in 1usize..=6, eta in 1u32..=40) {
        let mut rng = common::rng(seed);
        let m = common::unit_trace_psd(&mut rng, d);
        let out = maxexp_f(&m, eta).unwrap();
        let expect: Vec<f64> = sorted_eigs(&m).iter().map(|&l| maxexp_scalar(l.clamp(0.0, 1.0), eta).unwrap()).collect();
        let got = sorted_eigs(&out);
        for (a, b) in got.iter().zip(&expect) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
        for l in got {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&l));
        }
    }

    #[test]
    fn super_diagonal_monotone_in_eta(seed in any::<u64>(), d in 1usize..=4) {
        let mut rng = common::rng(seed);
        let t = DenseTensor::from_matrix(&common::unit_trace_psd(&mut rng, d)).unwrap();
        let mut prev = super_diagonal(&t).into_vec();
        for eta in 2..=32 {
            let cur = super_diagonal(&tso(&t, eta).unwrap()).into_vec();
            for (a, b) in prev.iter().zip(&cur) {
                prop_assert!(*b >= *a - 1e-12);
            }
            prev = cur;
        }
    }

    #[test]
    fn maxexp_scalar_in_unit_interval_and_monotone(l in 0.0f64..=1.0, eta in 1u32..=200) {
        let a = maxexp_scalar(l, eta).unwrap();
        let b = maxexp_scalar(l, eta + 1).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b >= a);
    }

    #[test]
    fn sigme_is_odd_and_bounded(p in -5.0f64..5.0, eta_prime in 0.1f64..500.0) {
        let s = sigme(p, eta_prime);
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!((s + sigme(-p, eta_prime)).abs() <= 1e-12);
    }
}

#[test]
fn naive_contraction_count_is_eta_minus_one() {
    let t = descriptor(5, 2, 3);
    for eta in [1, 2, 5, 17] {
        assert_eq!(tso_naive_counted(&t, eta).unwrap().1, eta as usize - 1);
    }
}

#[test]
fn diffusion_reversal_limit() {
    let mut rng = common::rng(77);
    let m = common::unit_trace_psd(&mut rng, 6);
    let out = maxexp_f(&m, 1 << 20).unwrap();
    let id = DMatrix::<f64>::identity(6, 6);
    assert!((out - id).amax() <= 1e-6);
}

#[test]
fn identity_is_fixed() {
    for order in 2..=4 {
        let id = identity_tensor(3, order).unwrap();
        let out = if order == 3 { tso_fast_odd(&id, 9).unwrap() } else { tso_fast_even(&id, 9).unwrap() };
        assert!(out.max_abs_diff(&id).unwrap() <= 1e-15);
    }
}

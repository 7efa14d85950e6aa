mod common;

use hopool_core::descriptors::{hotd, normalized_hotd, poly_kernel_sum};
use hopool_core::tensor::super_diagonal;
use hopool_core::FeatureMatrix;
use nalgebra::DVector;
use proptest::prelude::*;

fn features(seed: u64, d: usize, n: usize) -> FeatureMatrix {
    let mut rng = common::rng(seed);
    FeatureMatrix::new(common::normal_matrix(&mut rng, d, n)).unwrap()
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut s = seed;
    for i in (1..n).rev() {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        order.swap(i, (s >> 33) as usize % (i + 1));
    }
    order
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matches_entrywise_definition(seed in any::<u64>(), d in 1usize..=4, n in 1usize..=6, r in 2usize..=4) {
        let mut rng = common::rng(seed);
        let phi = common::normal_matrix(&mut rng, d, n);
        let w: Vec<f64> = common::normal_matrix(&mut rng, 1, n).iter().map(|v| v.abs() + 0.1).collect();
        let mu: Vec<f64> = common::normal_matrix(&mut rng, 1, d).as_slice().to_vec();
        let f = FeatureMatrix::new(phi.clone()).unwrap()
            .with_weights(DVector::from_vec(w.clone())).unwrap()
            .with_mean(DVector::from_vec(mu.clone())).unwrap();
        let oracle = common::descriptor(&phi, &w, &mu, r);
        prop_assert!(common::rel_err(hotd(&f, r).unwrap().data(), &oracle) <= 1e-12);
    }

    #[test]
    fn kernel_linearization(seed in any::<u64>(), d in 1usize..=4, n in 1usize..=5, m in 1usize..=5, r in 2usize..=4) {
        let f = features(seed, d, n);
        let g = features(seed ^ 0x9e37, d, m);
        let lhs = poly_kernel_sum(&f, &g, r).unwrap();
        let rhs = hotd(&f, r).unwrap().inner(&hotd(&g, r).unwrap()).unwrap();
        let ones_f = vec![1.0; n];
        let ones_g = vec![1.0; m];
        let zeros = vec![0.0; d];
        let (oracle, scale) = common::kernel(f.features(), &ones_f, &zeros, g.features(), &ones_g, &zeros, r);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * scale.max(1.0));
        prop_assert!((lhs - oracle).abs() <= 1e-10 * scale.max(1.0));
    }

    #[test]
    fn column_permutation_invariance(seed in any::<u64>(), d in 1usize..=4, n in 2usize..=8, r in 2usize..=4) {
        let f = features(seed, d, n);
        let order = shuffled(n, seed);
        let g = FeatureMatrix::new(common::permute_columns(f.features(), &order)).unwrap();
        let a = hotd(&f, r).unwrap();
        let b = hotd(&g, r).unwrap();
        prop_assert!(a.max_abs_diff(&b).unwrap() <= 1e-14 * a.max_abs().max(1.0));
    }

    #[test]
    fn homogeneity(seed in any::<u64>(), d in 1usize..=3, n in 1usize..=5, r in 2usize..=4, c in -3.0f64..3.0) {
        let f = features(seed, d, n);
        let g = FeatureMatrix::new(f.features() * c).unwrap();
        let scaled = hotd(&f, r).unwrap().scaled(c.powi(r as i32));
        let direct = hotd(&g, r).unwrap();
        prop_assert!(direct.max_abs_diff(&scaled).unwrap() <= 1e-12 * scaled.max_abs().max(1.0));
    }

    #[test]
    fn normalized_super_diagonal_sum_at_most_one(seed in any::<u64>(), d in 1usize..=4, n in 1usize..=6, r in 2usize..=4) {
        let f = features(seed, d, n);
        let t = normalized_hotd(&f, r).unwrap();
        let s = super_diagonal(&t).sum();
        prop_assert!(s.is_finite());
        if r % 2 == 0 {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&s));
        }
    }
}

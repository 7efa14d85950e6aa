mod common;

use hopool_core::attention::{attention, concat_heads, multi_head, similarity_matrix, split_heads};
use hopool_core::{AttentionBundle, AttentionKind, Error};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn bundle(seed: u64, d: usize, nq: usize, nk: usize, heads: usize) -> AttentionBundle {
    let mut rng = common::rng(seed);
    let q = common::normal_matrix(&mut rng, d, nq);
    let k = common::normal_matrix(&mut rng, d, nk);
    let v = common::normal_matrix(&mut rng, d, nk);
    AttentionBundle::new(q, k, v, 0.5, heads).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_rows_sum_to_one(seed in any::<u64>(), d in 1usize..=6, nq in 1usize..=5, nk in 1usize..=5) {
        let s = similarity_matrix(&bundle(seed, d, nq, nk, 1), AttentionKind::Softmax).unwrap();
        for row in s.row_iter() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn rbf_matches_oracle(seed in any::<u64>(), d in 1usize..=6, nq in 1usize..=5, nk in 1usize..=5) {
        let b = bundle(seed, d, nq, nk, 1);
        let s = similarity_matrix(&b, AttentionKind::Rbf).unwrap();
        for i in 0..nq {
            for j in 0..nk {
                let expect = common::rbf(b.q().column(i).as_slice(), b.k().column(j).as_slice(), 0.5);
                prop_assert!((s[(i, j)] - expect).abs() <= 1e-12);
                prop_assert!(s[(i, j)] > 0.0 && s[(i, j)] <= 1.0);
            }
        }
    }

    #[test]
    fn key_value_permutation_equivariance(seed in any::<u64>(), nk in 2usize..=6, kind_rbf in any::<bool>()) {
        let kind = if kind_rbf { AttentionKind::Rbf } else { AttentionKind::Softmax };
        let b = bundle(seed, 4, 3, nk, 2);
        let order: Vec<usize> = (0..nk).rev().collect();
        let p = AttentionBundle::new(
            b.q().clone(),
            common::permute_columns(b.k(), &order),
            common::permute_columns(b.v(), &order),
            b.sigma(),
            b.heads(),
        ).unwrap();
        let a = multi_head(&b, kind).unwrap();
        let c = multi_head(&p, kind).unwrap();
        prop_assert!((a - c).amax() <= 1e-12);
    }

    #[test]
    fn head_split_round_trip(seed in any::<u64>(), heads in 1usize..=4, per in 1usize..=3, n in 1usize..=5) {
        let mut rng = common::rng(seed);
        let m = common::normal_matrix(&mut rng, heads * per, n);
        prop_assert_eq!(concat_heads(&split_heads(&m, heads)), m);
    }

    #[test]
    fn single_head_is_plain_attention(seed in any::<u64>(), d in 1usize..=5) {
        let b = bundle(seed, d, 3, 4, 1);
        prop_assert_eq!(multi_head(&b, AttentionKind::Rbf).unwrap(), attention(&b, AttentionKind::Rbf).unwrap());
    }
}

#[test]
fn zero_vector_is_rejected() {
    let q = DMatrix::zeros(3, 1);
    let k = DMatrix::from_element(3, 2, 1.0);
    let b = AttentionBundle::new(q, k.clone(), k, 0.5, 1).unwrap();
    assert!(matches!(similarity_matrix(&b, AttentionKind::Rbf), Err(Error::ZeroVector)));
}

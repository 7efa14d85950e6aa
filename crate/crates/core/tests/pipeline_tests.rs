mod common;

use hopool_core::pipeline::{
    forward_episode, hop_unit, synth_episode, tenet_rpn_attend, RoiBox, SynthSpec,
};
use hopool_core::{EpisodeBatch, HeadWeights, PipelineConfig, SplitConfig, TsoParams};
use nalgebra::{DMatrix, DVector};

fn config(threads: usize) -> PipelineConfig {
    PipelineConfig { heads: 2, threads: Some(threads), ..PipelineConfig::default() }
}

fn config_d8(threads: usize) -> PipelineConfig {
    PipelineConfig { split: SplitConfig::new(vec![2, 1, 1]).unwrap(), ..config(threads) }
}

fn positive(rng: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    common::normal_matrix(rng, rows, cols).map(|v| v.abs() + 0.05)
}

#[test]
fn deterministic_across_thread_counts() {
    let e = synth_episode(&SynthSpec::new(9, 4, 5, 16, 9, 2.0)).unwrap();
    let w = HeadWeights::seeded(16, 1).unwrap();
    let base = forward_episode(&e, &config(1), &w).unwrap().flatten();
    for threads in [1, 2, 3, 8] {
        let other = forward_episode(&e, &config(threads), &w).unwrap().flatten();
        assert_eq!(base.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), other.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn groups_are_independent() {
    let cfg = SplitConfig::default();
    let p = TsoParams::default().with_odd_rounding(true);
    let mut rng = common::rng(4);
    let map = positive(&mut rng, 16, 12);
    let full = hop_unit(&map, &cfg, &p).unwrap();
    for g in cfg.groups(16).unwrap() {
        let mut masked = DMatrix::zeros(16, 12);
        masked.rows_mut(g.start, g.len).copy_from(&map.rows(g.start, g.len));
        let alone = hop_unit(&masked, &cfg, &p).unwrap();
        assert_eq!(full.rows(g.start, g.len), alone.rows(g.start, g.len), "group of order {}", g.order);
    }
}

#[test]
fn self_match_has_zero_spatial_relation() {
    let mut rng = common::rng(6);
    let support = positive(&mut rng, 8, 4);
    let e = EpisodeBatch {
        supports: vec![support.clone()],
        support_labels: vec![0],
        query: support,
        grid: (2, 2),
        boxes: vec![RoiBox { row: 0, col: 0, height: 2, width: 2 }],
        roi_labels: vec![0],
    };
    let out = forward_episode(&e, &config_d8(1), &HeadWeights::seeded(8, 2).unwrap()).unwrap();
    let r = &out.relations[0];
    assert!(r.spatial.iter().all(|&v| v == 0.0));
    assert!(r.fo_ho.iter().all(|&v| v >= 0.0));
    assert_eq!(out.support_hops[0], out.roi_hops[0]);
}

#[test]
fn episode_shapes() {
    let (z, b, d, n) = (5, 3, 8, 9);
    let e = synth_episode(&SynthSpec::new(21, z, b, d, n, 1.0)).unwrap();
    let out = forward_episode(&e, &config_d8(2), &HeadWeights::seeded(d, 3).unwrap()).unwrap();
    assert_eq!(out.support_hops.len(), z);
    assert_eq!(out.roi_hops.len(), b);
    assert!(out.support_hops.iter().chain(&out.roi_hops).all(|h| h.len() == d));
    assert_eq!(out.rpn_map.shape(), e.query.shape());
    assert_eq!(out.objectness.len(), b);
    assert_eq!(out.zshot.shape(), (b, 2 * d));
    assert_eq!(out.relations.len(), b);
    for r in &out.relations {
        assert_eq!(r.spatial.shape(), (d, n));
        assert_eq!(r.fo_ho.len(), 2 * d);
        assert_eq!(r.combined.shape(), (2 * d, n));
    }
    assert_eq!(out.head_features(0).shape(), (4 * d, n));
    assert!(out.flatten().iter().all(|v| v.is_finite()));
}

#[test]
fn support_order_does_not_change_orderless_outputs() {
    let e = synth_episode(&SynthSpec::new(31, 3, 2, 16, 9, 2.0)).unwrap();
    let w = HeadWeights::seeded(16, 4).unwrap();
    let base = forward_episode(&e, &config(1), &w).unwrap();
    let order: Vec<usize> = vec![4, 2, 7, 0, 8, 1, 6, 3, 5];
    let mut shuffled = e.clone();
    for s in &mut shuffled.supports {
        *s = common::permute_columns(s, &order);
    }
    let other = forward_episode(&shuffled, &config(1), &w).unwrap();
    for (a, b) in base.support_hops.iter().zip(&other.support_hops) {
        assert!((a - b).amax() <= 1e-10);
    }
    assert!((&base.rpn_map - &other.rpn_map).amax() <= 1e-10);
    assert!((&base.zshot - &other.zshot).amax() <= 1e-10);
    for (a, b) in base.objectness.iter().zip(&other.objectness) {
        assert!((a - b).abs() <= 1e-10);
    }
}

#[test]
fn rpn_matches_dense_oracle() {
    let mut rng = common::rng(8);
    let query = common::normal_matrix(&mut rng, 4, 2);
    let supports: Vec<DVector<f64>> = (0..2).map(|_| DVector::from_column_slice(common::normal_matrix(&mut rng, 4, 1).as_slice())).collect();
    let out = tenet_rpn_attend(&supports, &query, 1, 0.5).unwrap();
    assert_eq!(out.shape(), (4, 2));
    for i in 0..2 {
        let mut expect = DVector::zeros(4);
        for s in &supports {
            expect += s * common::rbf(query.column(i).as_slice(), s.as_slice(), 0.5);
        }
        assert!((out.column(i) - expect).amax() <= 1e-12);
    }
    let reversed: Vec<_> = supports.iter().rev().cloned().collect();
    assert!((tenet_rpn_attend(&reversed, &query, 1, 0.5).unwrap() - out).amax() <= 1e-12);
}

#[test]
fn zero_separation_features_are_indistinguishable() {
    for seed in 0..5 {
        let e = synth_episode(&SynthSpec::new(seed, 5, 3, 8, 9, 0.0)).unwrap();
        let support: Vec<f64> = e.supports.iter().flat_map(|s| s.iter().copied()).collect();
        let query: Vec<f64> = e.boxes.iter().flat_map(|b| e.crop(b).iter().copied().collect::<Vec<_>>()).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let all: Vec<f64> = support.iter().chain(&query).copied().collect();
        let mu = mean(&all);
        let sigma = (all.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (all.len() - 1) as f64).sqrt();
        let n = support.len().min(query.len()) as f64;
        let gap = (mean(&support) - mean(&query)).abs();
        assert!(gap < 3.0 * sigma / n.sqrt(), "seed {seed}: gap {gap}, bound {}", 3.0 * sigma / n.sqrt());
    }
}

#[test]
fn invalid_episode_is_rejected() {
    let mut e = synth_episode(&SynthSpec::new(1, 2, 2, 8, 9, 1.0)).unwrap();
    e.boxes[0].width += 1;
    assert!(forward_episode(&e, &config_d8(1), &HeadWeights::seeded(8, 0).unwrap()).is_err());
}

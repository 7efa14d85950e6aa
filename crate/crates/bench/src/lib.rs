//! Fixtures shared by the criterion benches.

use hopool_core::bench::bench_descriptor;
use hopool_core::pipeline::{synth_episode, SynthSpec};
use hopool_core::{DenseTensor, EpisodeBatch, HeadWeights, Result};

pub const SEED: u64 = 7;

/// Exponents `2, 4, ..., 2^max_log2`.
pub fn doubling_etas(max_log2: u32) -> Vec<u32> {
    (1..=max_log2).map(|k| 1 << k).collect()
}

/// Normalized descriptor of random features, `order` x `dim`.
pub fn descriptor(order: usize, dim: usize) -> Result<DenseTensor> {
    bench_descriptor(order, dim, SEED)
}

/// Synthetic episode with `z` supports and `b` RoIs, plus matching weights.
pub fn episode(z: usize, b: usize, d: usize, n: usize) -> Result<(EpisodeBatch, HeadWeights)> {
    Ok((synth_episode(&SynthSpec::new(SEED, z, b, d, n, 2.0))?, HeadWeights::seeded(d, SEED)?))
}

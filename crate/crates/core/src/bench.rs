//! Timing harness for the naive and fast TSO paths.
//!
//! Every measurement is the median of at least [`MIN_RUNS`] warm runs on a
//! single worker, read from a monotonic clock.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::descriptors::{normalized_hotd, FeatureMatrix};
use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::tensor::{check_capacity, DenseTensor};
use crate::tso::{is_power_of_three, tso_fast_even_counted, tso_fast_odd_counted, tso_naive_counted};

pub const MIN_RUNS: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Naive,
    Fast,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Naive => "naive",
            Algorithm::Fast => "fast",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub op: String,
    pub r: usize,
    pub d: usize,
    pub eta: u32,
    pub algorithm: Algorithm,
    pub wall_time_ns: u64,
    pub contraction_count: usize,
}

impl BenchRecord {
    pub const CSV_HEADER: &'static str = "op,r,d,eta,algorithm,wall_time_ns,contraction_count";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.op, self.r, self.d, self.eta, self.algorithm, self.wall_time_ns, self.contraction_count
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchGrid {
    pub r: usize,
    pub d: usize,
    pub etas: Vec<u32>,
    pub runs: usize,
    pub seed: u64,
}

impl BenchGrid {
    /// `eta = 2, 4, ..., 1024` at `r = 2`, `d = 64`.
    pub fn doubling(r: usize, d: usize) -> Self {
        Self { r, d, etas: (1..=10).map(|k| 1 << k).collect(), runs: MIN_RUNS, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.r < 2 {
            return invalid(format!("benchmark order must be >= 2, got {}", self.r));
        }
        check_capacity(self.r, self.d)?;
        if self.runs < MIN_RUNS {
            return invalid(format!("need at least {MIN_RUNS} runs, got {}", self.runs));
        }
        if self.etas.is_empty() || self.etas.contains(&0) {
            return invalid("eta list must be non-empty and positive");
        }
        if self.r % 2 == 1 {
            if let Some(&bad) = self.etas.iter().find(|&&e| !is_power_of_three(e)) {
                return Err(Error::InvalidOddEta { requested: bad, nearest: crate::tso::nearest_power_of_three(bad) });
            }
        }
        Ok(())
    }
}

/// `floor(log2 eta) + popcount(eta) - 1` for even orders, `2 log3 eta` for
/// odd orders.
pub fn fast_contraction_count(r: usize, eta: u32) -> usize {
    if eta == 0 {
        return 0;
    }
    if r.is_multiple_of(2) {
        (31 - eta.leading_zeros() + eta.count_ones() - 1) as usize
    } else {
        let mut n = eta;
        let mut steps = 0;
        while n >= 3 {
            n /= 3;
            steps += 1;
        }
        2 * steps
    }
}

/// `eta - 1` for even orders; the odd-order reference evaluates the same
/// cubing chain as the fast path.
pub fn naive_contraction_count(r: usize, eta: u32) -> usize {
    if r.is_multiple_of(2) {
        eta.saturating_sub(1) as usize
    } else {
        fast_contraction_count(r, eta)
    }
}

/// Trace-normalized descriptor of `2d` random features.
pub fn bench_descriptor(r: usize, d: usize, seed: u64) -> Result<DenseTensor> {
    let mut rng = rng::seeded(seed);
    let f = FeatureMatrix::new(rng::normal_matrix(&mut rng, d, 2 * d))?;
    normalized_hotd(&f, r)
}

fn median_ns(samples: &mut [u64]) -> u64 {
    samples.sort_unstable();
    samples[samples.len() / 2].max(1)
}

fn time_runs(runs: usize, mut f: impl FnMut() -> Result<usize>) -> Result<(u64, usize)> {
    let count = f()?;
    let mut samples = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        let c = std::hint::black_box(f()?);
        samples.push(start.elapsed().as_nanos() as u64);
        if c != count {
            return invalid("contraction count changed between runs");
        }
    }
    Ok((median_ns(&mut samples), count))
}

/// Times both paths for every eta; fails if a measured contraction count
/// disagrees with its analytic value.
pub fn bench_tso(grid: &BenchGrid) -> Result<Vec<BenchRecord>> {
    grid.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build benchmark worker: {e}")))?;
    pool.install(|| {
        let t = bench_descriptor(grid.r, grid.d, grid.seed)?;
        let mut records = Vec::with_capacity(2 * grid.etas.len());
        for &eta in &grid.etas {
            for algorithm in [Algorithm::Naive, Algorithm::Fast] {
                let (ns, count) = time_runs(grid.runs, || {
                    let (out, c) = match (algorithm, grid.r % 2) {
                        (Algorithm::Naive, _) => tso_naive_counted(&t, eta)?,
                        (Algorithm::Fast, 0) => tso_fast_even_counted(&t, eta)?,
                        (Algorithm::Fast, _) => tso_fast_odd_counted(&t, eta)?,
                    };
                    std::hint::black_box(out);
                    Ok(c)
                })?;
                let expected = match algorithm {
                    Algorithm::Naive => naive_contraction_count(grid.r, eta),
                    Algorithm::Fast => fast_contraction_count(grid.r, eta),
                };
                if count != expected {
                    return invalid(format!("{algorithm} eta={eta}: {count} contractions, expected {expected}"));
                }
                records.push(BenchRecord {
                    op: "tso".into(),
                    r: grid.r,
                    d: grid.d,
                    eta,
                    algorithm,
                    wall_time_ns: ns,
                    contraction_count: count,
                });
            }
        }
        Ok(records)
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return invalid("slope fit needs two or more paired points");
    }
    if x.iter().chain(y).any(|v| !v.is_finite() || *v <= 0.0) {
        return invalid("slope fit needs positive finite values");
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return invalid("slope fit needs distinct x values");
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok(sxy / sxx)
}

/// Slopes of naive time vs `eta` and fast time vs `log2 eta`, plus the
/// fast/naive ratio at the largest eta.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityFit {
    pub naive_slope: f64,
    pub fast_slope: f64,
    pub max_eta: u32,
    pub ratio_at_max: f64,
}

pub fn fit_complexity(records: &[BenchRecord]) -> Result<ComplexityFit> {
    let pick = |alg: Algorithm| -> Vec<&BenchRecord> {
        records.iter().filter(|r| r.algorithm == alg && r.eta >= 2).collect()
    };
    let naive = pick(Algorithm::Naive);
    let fast = pick(Algorithm::Fast);
    let naive_slope = loglog_slope(
        &naive.iter().map(|r| r.eta as f64).collect::<Vec<_>>(),
        &naive.iter().map(|r| r.wall_time_ns as f64).collect::<Vec<_>>(),
    )?;
    let fast_slope = loglog_slope(
        &fast.iter().map(|r| (r.eta as f64).log2()).collect::<Vec<_>>(),
        &fast.iter().map(|r| r.wall_time_ns as f64).collect::<Vec<_>>(),
    )?;
    let max_eta = records.iter().map(|r| r.eta).max().unwrap_or(0);
    let at = |alg: Algorithm| {
        records
            .iter()
            .find(|r| r.algorithm == alg && r.eta == max_eta)
            .map(|r| r.wall_time_ns as f64)
    };
    let ratio_at_max = match (at(Algorithm::Fast), at(Algorithm::Naive)) {
        (Some(f), Some(n)) => f / n,
        _ => return invalid("records lack a fast/naive pair at the largest eta"),
    };
    Ok(ComplexityFit { naive_slope, fast_slope, max_eta, ratio_at_max })
}

//! Runnable invariant suites with machine-readable reports.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{multi_head, similarity_matrix, AttentionBundle, AttentionKind};
use crate::descriptors::{hotd, normalized_hotd, poly_kernel_sum, FeatureMatrix};
use crate::error::{Error, Result};
use crate::heads::{build_spatial_hop_tokens, compute_relations, spatial_hop_head, zshot_head, HeadWeights, HopEmbedding};
use crate::io::load_tensor;
use crate::pipeline::{
    forward_episode, hop_unit, numerical_jacobian, synth_episode, PipelineConfig, SplitConfig, SynthSpec,
};
use crate::rng;
use crate::shrinkage::{random_spectrum, verify_theorem1, verify_theorem2, ShrinkageProblem, Theorem1Options};
use crate::tensor::{unfold, DenseTensor};
use crate::tso::{
    extract_representation, maxexp_f, maxexp_scalar, sigme, tso_fast_even, tso_fast_even_counted, tso_fast_odd,
    tso_naive, TsoParams,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuiteName {
    Descriptors,
    Tso,
    Theorems,
    Attention,
    Heads,
    Pipeline,
    All,
}

impl SuiteName {
    pub const ALL: [SuiteName; 6] =
        [Self::Descriptors, Self::Tso, Self::Theorems, Self::Attention, Self::Heads, Self::Pipeline];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Descriptors => "descriptors",
            Self::Tso => "tso",
            Self::Theorems => "theorems",
            Self::Attention => "attention",
            Self::Heads => "heads",
            Self::Pipeline => "pipeline",
            Self::All => "all",
        }
    }
}

impl fmt::Display for SuiteName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SuiteName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .chain(std::iter::once(&Self::All))
            .find(|n| n.as_str() == s)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown suite {s:?}")))
    }
}

/// One named check: passes when `residual <= threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub suite: String,
    pub name: String,
    pub passed: bool,
    pub residual: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub schema_version: u32,
    pub suite: String,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub seed: u64,
    pub params: TsoParams,
    pub split: SplitConfig,
    pub sigma: f64,
    pub heads: usize,
    /// Optional `TNSR` tensor; the tso suite adds checks on it.
    pub input: Option<PathBuf>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            params: TsoParams::default(),
            split: SplitConfig::default(),
            sigma: crate::heads::DEFAULT_SIGMA,
            heads: 1,
            input: None,
        }
    }
}

struct Recorder {
    suite: &'static str,
    checks: Vec<Check>,
}

impl Recorder {
    fn new(suite: SuiteName) -> Self {
        Self { suite: suite.as_str(), checks: Vec::new() }
    }

    fn record(&mut self, name: &str, outcome: Result<f64>, threshold: f64) {
        let (residual, detail) = match outcome {
            Ok(r) => (r, String::new()),
            Err(e) => (f64::INFINITY, e.to_string()),
        };
        self.checks.push(Check {
            suite: self.suite.into(),
            name: name.into(),
            passed: residual.is_finite() && residual <= threshold,
            residual,
            threshold,
            detail,
        });
    }

    fn flag(&mut self, name: &str, outcome: Result<bool>) {
        self.record(name, outcome.map(|ok| if ok { 0.0 } else { 1.0 }), 0.0);
    }
}

/// Runs the named suite. Errors are reserved for bad input (for example an
/// unreadable `--input` file); failing checks are reported, not raised.
pub fn run_suite(name: SuiteName, opts: &SuiteOptions) -> Result<SuiteReport> {
    let input = opts.input.as_deref().map(load_tensor).transpose()?;
    let names: Vec<SuiteName> = if name == SuiteName::All { SuiteName::ALL.to_vec() } else { vec![name] };
    let mut checks = Vec::new();
    for n in names {
        let mut rec = Recorder::new(n);
        match n {
            SuiteName::Descriptors => descriptors_suite(&mut rec, opts),
            SuiteName::Tso => tso_suite(&mut rec, opts, input.as_ref()),
            SuiteName::Theorems => theorems_suite(&mut rec, opts),
            SuiteName::Attention => attention_suite(&mut rec, opts),
            SuiteName::Heads => heads_suite(&mut rec, opts),
            SuiteName::Pipeline => pipeline_suite(&mut rec, opts),
            SuiteName::All => unreachable!("expanded above"),
        }
        checks.extend(rec.checks);
    }
    Ok(SuiteReport {
        schema_version: SCHEMA_VERSION,
        suite: name.to_string(),
        seed: opts.seed,
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

fn random_features<R: Rng>(rng: &mut R, d: usize, n: usize) -> Result<FeatureMatrix> {
    FeatureMatrix::new(rng::normal_matrix(rng, d, n))
}

fn descriptors_suite(rec: &mut Recorder, opts: &SuiteOptions) {
    let mut rng = rng::seeded(opts.seed);
    let linearization = (|| {
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let d = rng.random_range(1..=6);
            let r = rng.random_range(2..=4);
            let (n, m) = (rng.random_range(1..=5), rng.random_range(1..=5));
            let f = random_features(&mut rng, d, n)?;
            let g = random_features(&mut rng, d, m)?;
            let k = poly_kernel_sum(&f, &g, r)?;
            let inner = hotd(&f, r)?.inner(&hotd(&g, r)?)?;
            worst = worst.max((k - inner).abs() / k.abs().max(1.0));
        }
        Ok(worst)
    })();
    rec.record("kernel_linearization", linearization, 1e-10);

    let orderless = (|| {
        let f = random_features(&mut rng, 4, 7)?;
        let mut order: Vec<usize> = (0..7).collect();
        order.shuffle(&mut rng);
        let cols: Vec<_> = order.iter().map(|&j| f.features().column(j).into_owned()).collect();
        let g = FeatureMatrix::new(DMatrix::from_columns(&cols))?;
        let mut worst: f64 = 0.0;
        for r in 2..=4 {
            worst = worst.max(hotd(&f, r)?.max_abs_diff(&hotd(&g, r)?)?);
        }
        Ok(worst)
    })();
    rec.record("column_permutation_invariance", orderless, 1e-12);

    let symmetric = (|| {
        let f = random_features(&mut rng, 3, 5)?;
        Ok((2..=4).map(|r| hotd(&f, r).map(|t| t.max_asymmetry())).collect::<Result<Vec<_>>>()?.into_iter().fold(0.0, f64::max))
    })();
    rec.record("super_symmetry", symmetric, 1e-12);

    let trace = (|| {
        let mut excess: f64 = 0.0;
        for r in [2, 4] {
            let f = random_features(&mut rng, 4, 6)?;
            let t = normalized_hotd(&f, r)?;
            excess = excess.max(unfold(&t, r / 2)?.to_matrix().trace() - 1.0);
        }
        Ok(excess.max(0.0))
    })();
    rec.record("normalized_trace_at_most_one", trace, 0.0);
}

fn tso_suite(rec: &mut Recorder, opts: &SuiteOptions, input: Option<&DenseTensor>) {
    let mut rng = rng::seeded(opts.seed.wrapping_add(1));
    let even = (|| {
        let mut worst: f64 = 0.0;
        for (r, d) in [(2, 8), (4, 3)] {
            let t = normalized_hotd(&random_features(&mut rng, d, 2 * d)?, r)?;
            for eta in 1..=20 {
                worst = worst.max(tso_fast_even(&t, eta)?.relative_error(&tso_naive(&t, eta)?)?);
            }
        }
        Ok(worst)
    })();
    rec.record("even_fast_matches_naive", even, 1e-10);

    let odd = (|| {
        let t = normalized_hotd(&random_features(&mut rng, 3, 6)?, 3)?;
        let mut worst: f64 = 0.0;
        for eta in [1, 3, 9, 27] {
            worst = worst.max(tso_fast_odd(&t, eta)?.relative_error(&tso_naive(&t, eta)?)?);
        }
        Ok(worst)
    })();
    rec.record("odd_fast_matches_naive", odd, 1e-10);

    let spectral = (|| {
        let mut worst: f64 = 0.0;
        for _ in 0..10 {
            let m = rng::trace_normalized_psd(&mut rng, 5, 0.1);
            let eig = m.clone().symmetric_eigen();
            for eta in [2, 7, 32] {
                let out = maxexp_f(&m, eta)?;
                let projected = eig.eigenvectors.transpose() * &out * &eig.eigenvectors;
                for (i, &l) in eig.eigenvalues.iter().enumerate() {
                    worst = worst.max((projected[(i, i)] - maxexp_scalar(l.clamp(0.0, 1.0), eta)?).abs());
                }
            }
        }
        Ok(worst)
    })();
    rec.record("maxexp_spectral_oracle", spectral, 1e-10);

    let count = (|| {
        let t = normalized_hotd(&random_features(&mut rng, 3, 4)?, 2)?;
        Ok(tso_fast_even_counted(&t, 7)?.1 as f64 - 4.0)
    })()
    .map(f64::abs);
    rec.record("contraction_count_eta7", count, 0.0);

    let zero = (|| {
        let rep = extract_representation(&DenseTensor::zeros(3, 4)?, &opts.params)?;
        Ok(rep.iter().map(|v| v.abs()).fold(0.0, f64::max))
    })();
    rec.record("zero_descriptor_maps_to_zero", zero, 0.0);

    if let Some(t) = input {
        let matches = (|| {
            let eta = opts.params.eta_for(t.order())?.used;
            let fast = if t.order() % 2 == 0 { tso_fast_even(t, eta)? } else { tso_fast_odd(t, eta)? };
            fast.relative_error(&tso_naive(t, eta)?)
        })();
        rec.record("input_fast_matches_naive", matches, 1e-10);
        let bounded = extract_representation(t, &opts.params)
            .map(|rep| rep.iter().map(|v| (v.abs() - 1.0).max(0.0)).fold(0.0, f64::max));
        rec.record("input_representation_bounded", bounded, 0.0);
    }
}

fn theorems_suite(rec: &mut Recorder, opts: &SuiteOptions) {
    let mut rng = rng::seeded(opts.seed.wrapping_add(2));
    let reports = (0..10)
        .map(|i| {
            let d = rng.random_range(2..=8);
            let eta = rng.random_range(2..=32);
            let prob = ShrinkageProblem::new(&random_spectrum(&mut rng, d)?, eta)?;
            verify_theorem1(&prob, &Theorem1Options { seed: opts.seed.wrapping_add(i), ..Theorem1Options::default() })
        })
        .collect::<Result<Vec<_>>>();
    match reports {
        Ok(reports) => {
            let dist = reports.iter().map(|r| r.residual).fold(0.0, f64::max);
            let stat = reports.iter().map(|r| r.stationarity).fold(0.0, f64::max);
            rec.record("theorem1_minimizer_distance", Ok(dist), crate::shrinkage::THEOREM1_DISTANCE_TOL);
            rec.record("theorem1_stationarity", Ok(stat), crate::shrinkage::THEOREM1_STATIONARITY_TOL);
        }
        Err(e) => {
            let msg = e.to_string();
            rec.record("theorem1_minimizer_distance", Err(Error::Domain(msg.clone())), 0.0);
            rec.record("theorem1_stationarity", Err(Error::Domain(msg)), 0.0);
        }
    }
    match verify_theorem2(6, 3, opts.seed) {
        Ok(r) => {
            rec.record("theorem2_limit", Ok(r.final_deviation()), crate::shrinkage::THEOREM2_LIMIT_TOL);
            rec.flag("theorem2_monotone", Ok(r.monotone));
        }
        Err(e) => rec.record("theorem2_limit", Err(e), 0.0),
    }
}

fn attention_suite(rec: &mut Recorder, opts: &SuiteOptions) {
    let mut rng = rng::seeded(opts.seed.wrapping_add(3));
    let q = rng::normal_matrix(&mut rng, 8, 5);
    let k = rng::normal_matrix(&mut rng, 8, 6);
    let v = rng::normal_matrix(&mut rng, 8, 6);
    let bundle = AttentionBundle::new(q.clone(), k.clone(), v.clone(), opts.sigma, 1);

    let rows = bundle.as_ref().map_err(clone_err).and_then(|b| {
        let s = similarity_matrix(b, AttentionKind::Softmax)?;
        Ok(s.row_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max))
    });
    rec.record("softmax_rows_sum_to_one", rows, 1e-12);

    let diag = AttentionBundle::self_attention(&q, opts.sigma, 1).and_then(|b| {
        let s = similarity_matrix(&b, AttentionKind::Rbf)?;
        Ok((0..s.nrows()).map(|i| (s[(i, i)] - 1.0).abs()).fold(0.0, f64::max))
    });
    rec.record("rbf_self_similarity_is_one", diag, 0.0);

    let single = bundle.as_ref().map_err(clone_err).and_then(|b| {
        Ok((multi_head(b, AttentionKind::Rbf)? - crate::attention::attention(b, AttentionKind::Rbf)?).amax())
    });
    rec.record("one_head_equals_single_head", single, 1e-14);

    let perm = (|| {
        let mut order: Vec<usize> = (0..6).collect();
        order.shuffle(&mut rng);
        let pk = DMatrix::from_columns(&order.iter().map(|&j| k.column(j).into_owned()).collect::<Vec<_>>());
        let pv = DMatrix::from_columns(&order.iter().map(|&j| v.column(j).into_owned()).collect::<Vec<_>>());
        let mut worst: f64 = 0.0;
        for heads in [1, 2, 4] {
            for kind in [AttentionKind::Softmax, AttentionKind::Rbf] {
                let a = multi_head(&AttentionBundle::new(q.clone(), k.clone(), v.clone(), opts.sigma, heads)?, kind)?;
                let b = multi_head(&AttentionBundle::new(q.clone(), pk.clone(), pv.clone(), opts.sigma, heads)?, kind)?;
                worst = worst.max((a - b).amax());
            }
        }
        Ok(worst)
    })();
    rec.record("key_value_permutation_invariance", perm, 1e-12);
}

fn clone_err(e: &Error) -> Error {
    Error::InvalidArgument(e.to_string())
}

fn heads_suite(rec: &mut Recorder, opts: &SuiteOptions) {
    let d = 4;
    let weights = HeadWeights::seeded(d, opts.seed);
    let mut rng = rng::seeded(opts.seed.wrapping_add(4));

    let single = weights.as_ref().map_err(clone_err).and_then(|w| {
        let support = HopEmbedding { pooled: rng::normal_vector(&mut rng, 2 * d), hop: rng::normal_vector(&mut rng, d) };
        let queries: Vec<HopEmbedding> = (0..3)
            .map(|_| HopEmbedding { pooled: rng::normal_vector(&mut rng, 2 * d), hop: rng::normal_vector(&mut rng, d) })
            .collect();
        let out = zshot_head(std::slice::from_ref(&support), &queries, w, 1, opts.sigma)?;
        let v1 = &w.w_v * (&support.pooled + &w.w_p * &support.hop);
        let mut worst: f64 = 0.0;
        for b in 0..queries.len() {
            let row: DVector<f64> = out.row(b).transpose();
            let scale = row.dot(&v1) / v1.norm_squared();
            worst = worst.max((row - &v1 * scale).amax());
        }
        Ok(worst)
    });
    rec.record("zshot_single_support_proportional", single, 1e-12);

    let self_match = weights.as_ref().map_err(clone_err).and_then(|w| {
        let map = rng::normal_matrix(&mut rng, 2 * d, 6);
        let psi = rng::normal_vector(&mut rng, d);
        let t = spatial_hop_head(&build_spatial_hop_tokens(&map, &psi, w)?, opts.heads, opts.sigma)?;
        let r = compute_relations(&t, &t, w)?;
        let mut squares = DVector::zeros(2 * d);
        squares.rows_mut(0, d).copy_from(&t.fo().component_mul(&t.fo()));
        squares.rows_mut(d, d).copy_from(&t.ho().component_mul(&t.ho()));
        Ok(r.spatial.amax().max((r.fo_ho - squares).amax()))
    });
    rec.record("relation_self_match", self_match, 0.0);

    let shapes = weights.as_ref().map_err(clone_err).and_then(|w| {
        let map = rng::normal_matrix(&mut rng, 2 * d, 9);
        let t = spatial_hop_head(&build_spatial_hop_tokens(&map, &rng::normal_vector(&mut rng, d), w)?, 2, opts.sigma)?;
        let r = compute_relations(&t, &t, w)?;
        Ok(t.as_matrix().shape() == (d, 11) && r.combined.shape() == (2 * d, 9) && r.fo_ho.len() == 2 * d)
    });
    rec.flag("token_and_relation_shapes", shapes);
}

fn pipeline_suite(rec: &mut Recorder, opts: &SuiteOptions) {
    let cfg = PipelineConfig {
        split: SplitConfig::new(vec![2, 1, 1]).expect("valid split"),
        params: opts.params.clone(),
        heads: opts.heads,
        sigma: opts.sigma,
        threads: Some(1),
    };
    let spec = SynthSpec::new(opts.seed, 5, 3, 8, 9, 10.0);
    let episode = synth_episode(&spec);
    let weights = HeadWeights::seeded(8, opts.seed);

    let run = |threads: usize| -> Result<_> {
        let e = episode.as_ref().map_err(clone_err)?;
        let w = weights.as_ref().map_err(clone_err)?;
        forward_episode(e, &PipelineConfig { threads: Some(threads), ..cfg.clone() }, w)
    };

    let shapes = run(1).map(|out| {
        out.relations.len() == 3
            && out.relations.iter().all(|r| r.spatial.shape() == (8, 9) && r.fo_ho.len() == 16)
            && out.zshot.shape() == (3, 16)
            && out.flatten().iter().all(|v| v.is_finite())
    });
    rec.flag("episode_shapes_and_finiteness", shapes);

    let determinism = (|| {
        let a = run(1)?.flatten();
        let b = run(4)?.flatten();
        Ok(a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()))
    })();
    rec.flag("deterministic_across_thread_counts", determinism);

    let orderless = (|| {
        let e = episode.as_ref().map_err(clone_err)?;
        let mut rng = rng::seeded(opts.seed.wrapping_add(5));
        let mut worst: f64 = 0.0;
        for s in &e.supports {
            let mut order: Vec<usize> = (0..s.ncols()).collect();
            order.shuffle(&mut rng);
            let p = DMatrix::from_columns(&order.iter().map(|&j| s.column(j).into_owned()).collect::<Vec<_>>());
            worst = worst.max((hop_unit(s, &cfg.split, &cfg.params)? - hop_unit(&p, &cfg.split, &cfg.params)?).amax());
        }
        Ok(worst)
    })();
    rec.record("hop_vectors_orderless", orderless, 1e-10);

    let independence = (|| {
        let e = episode.as_ref().map_err(clone_err)?;
        let map = &e.supports[0];
        let full = hop_unit(map, &cfg.split, &cfg.params)?;
        let mut worst: f64 = 0.0;
        for g in cfg.split.groups(8)? {
            let mut masked = DMatrix::zeros(map.nrows(), map.ncols());
            masked.rows_mut(g.start, g.len).copy_from(&map.rows(g.start, g.len));
            let part = hop_unit(&masked, &cfg.split, &cfg.params)?;
            worst = worst.max((full.rows(g.start, g.len) - part.rows(g.start, g.len)).amax());
        }
        Ok(worst)
    })();
    rec.record("group_independence", independence, 0.0);

    let sig = numerical_jacobian(|x| Ok(vec![sigme(x[0], opts.params.eta_prime)]), &[0.0], 1e-6)
        .map(|j| (j[(0, 0)] - opts.params.eta_prime / 2.0).abs());
    rec.record("sigme_slope_at_zero", sig, 1e-3);
    let mx = numerical_jacobian(|x| Ok(vec![maxexp_scalar(x[0], 2)?]), &[0.5], 1e-6).map(|j| (j[(0, 0)] - 1.0).abs());
    rec.record("maxexp_slope", mx, 1e-5);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_parse() {
        assert_eq!("tso".parse::<SuiteName>().unwrap(), SuiteName::Tso);
        assert_eq!("all".parse::<SuiteName>().unwrap(), SuiteName::All);
        assert!("bogus".parse::<SuiteName>().is_err());
    }

    #[test]
    fn attention_suite_passes_and_serializes() {
        let report = run_suite(SuiteName::Attention, &SuiteOptions::default()).unwrap();
        assert!(report.passed, "{:#?}", report.checks);
        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(json["schema_version"], SCHEMA_VERSION);
        assert_eq!(json["checks"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn missing_input_is_an_error() {
        let opts = SuiteOptions { input: Some("/nonexistent/input.tnsr".into()), ..SuiteOptions::default() };
        assert!(run_suite(SuiteName::Tso, &opts).is_err());
    }
}

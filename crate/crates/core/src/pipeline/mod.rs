//! End-to-end forward pass over a synthetic few-shot episode.
//!
//! Per episode: HOP vectors for every support crop, RBF cross-attention of the
//! query map against those vectors, index-range RoI crops of the query map,
//! HOP vectors per RoI, the Z-shot head, the Spatial-HOP head on averaged
//! supports and on each RoI, and finally the per-RoI relations.

mod jacobian;
mod synth;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::attention::{multi_head, AttentionBundle, AttentionKind};
use crate::descriptors::{normalized_hotd, FeatureMatrix};
use crate::error::{invalid, Error, Result};
use crate::heads::{
    build_spatial_hop_tokens, compute_relations, spatial_hop_head, z_average, zshot_head, HeadWeights,
    HopEmbedding, RelationOutput, DEFAULT_SIGMA,
};
use crate::rng;
use crate::tensor::super_diagonal;
use crate::tso::{sigme, tso, EtaChoice, TsoParams};

pub use jacobian::{numerical_jacobian, richardson_gap, DEFAULT_STEP};
pub use synth::{class_ranking, matched_class_first, synth_episode, SynthSpec};

/// Environment variable bounding the RoI worker pool.
pub const POOL_THREADS_ENV: &str = "TENET_POOL_THREADS";

/// Channel ratios for orders 2, 3, 4 (in that order; one to three parts).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitConfig {
    ratios: Vec<u32>,
}

/// One channel group of a split.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChannelGroup {
    pub order: usize,
    pub start: usize,
    pub len: usize,
}

impl SplitConfig {
    pub fn new(ratios: Vec<u32>) -> Result<Self> {
        if ratios.is_empty() || ratios.len() > 3 {
            return invalid(format!("split needs 1 to 3 parts, got {}", ratios.len()));
        }
        if ratios.contains(&0) {
            return invalid("split ratios must be positive");
        }
        Ok(Self { ratios })
    }

    pub fn ratios(&self) -> &[u32] {
        &self.ratios
    }

    /// `floor(ratio * d / sum)` channels per part; the remainder goes to the
    /// order-2 group.
    pub fn groups(&self, d: usize) -> Result<Vec<ChannelGroup>> {
        let total: u64 = self.ratios.iter().map(|&r| r as u64).sum();
        let mut counts: Vec<usize> = self.ratios.iter().map(|&r| (r as u64 * d as u64 / total) as usize).collect();
        let assigned: usize = counts.iter().sum();
        counts[0] += d - assigned;
        if let Some(c) = counts.iter().find(|&&c| c < 2) {
            return invalid(format!("split {self} of d={d} leaves a group with {c} channel(s); each needs >= 2"));
        }
        let mut start = 0;
        Ok(counts
            .into_iter()
            .enumerate()
            .map(|(i, len)| {
                let g = ChannelGroup { order: i + 2, start, len };
                start += len;
                g
            })
            .collect())
    }
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { ratios: vec![5, 2, 1] }
    }
}

impl fmt::Display for SplitConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.ratios.iter().map(u32::to_string).collect();
        f.write_str(&parts.join(":"))
    }
}

impl FromStr for SplitConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let ratios = s
            .split(':')
            .map(|p| {
                p.trim()
                    .parse::<u32>()
                    .map_err(|_| Error::InvalidArgument(format!("bad split part {p:?} in {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(ratios)
    }
}

/// HOP vector of a `d x N` map plus the eta actually used per order.
#[derive(Clone, Debug, PartialEq)]
pub struct HopOutput {
    pub vector: DVector<f64>,
    pub etas: Vec<EtaChoice>,
}

/// Split channels, build a normalized descriptor per group, shrink it, take
/// the super-diagonal, concatenate and apply SigmE.
pub fn hop_unit(map: &DMatrix<f64>, cfg: &SplitConfig, p: &TsoParams) -> Result<DVector<f64>> {
    hop_unit_detailed(map, cfg, p).map(|h| h.vector)
}

pub fn hop_unit_detailed(map: &DMatrix<f64>, cfg: &SplitConfig, p: &TsoParams) -> Result<HopOutput> {
    p.validate()?;
    let d = map.nrows();
    let groups = cfg.groups(d)?;
    let mut vector = DVector::zeros(d);
    let mut etas = Vec::with_capacity(groups.len());
    for g in groups {
        let choice = p.eta_for(g.order)?;
        let f = FeatureMatrix::new(map.rows(g.start, g.len).into_owned())?;
        let shrunk = tso(&normalized_hotd(&f, g.order)?, choice.used)?;
        for (i, &v) in super_diagonal(&shrunk).values().iter().enumerate() {
            vector[g.start + i] = sigme(v, p.eta_prime);
        }
        etas.push(choice);
    }
    Ok(HopOutput { vector, etas })
}

/// Cross-attention of the query map (queries, one per position) against the
/// support HOP vectors (keys and values). Output has the query map's shape.
pub fn tenet_rpn_attend(supports: &[DVector<f64>], query_map: &DMatrix<f64>, heads: usize, sigma: f64) -> Result<DMatrix<f64>> {
    if supports.is_empty() {
        return invalid("cross-attention needs Z >= 1 support vectors");
    }
    let d = query_map.nrows();
    if supports.iter().any(|s| s.len() != d) {
        return invalid(format!("support vectors must have length {d}"));
    }
    let kv = DMatrix::from_columns(supports);
    let bundle = AttentionBundle::new(query_map.clone(), kv.clone(), kv, sigma, heads)?;
    Ok(multi_head(&bundle, AttentionKind::Rbf)?.transpose())
}

/// Half-open index ranges over the query grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoiBox {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl RoiBox {
    pub fn area(&self) -> usize {
        self.height * self.width
    }

    /// Row-major positions of the box on a grid with `cols` columns.
    pub fn positions(&self, cols: usize) -> impl Iterator<Item = usize> + '_ {
        (self.row..self.row + self.height).flat_map(move |r| (self.col..self.col + self.width).map(move |c| r * cols + c))
    }
}

/// Z support maps, one query map on a `rows x cols` grid, B boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeBatch {
    pub supports: Vec<DMatrix<f64>>,
    pub support_labels: Vec<usize>,
    pub query: DMatrix<f64>,
    pub grid: (usize, usize),
    pub boxes: Vec<RoiBox>,
    pub roi_labels: Vec<usize>,
}

impl EpisodeBatch {
    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.supports.first() else {
            return invalid("episode needs Z >= 1 supports");
        };
        if self.boxes.is_empty() {
            return invalid("episode needs B >= 1 boxes");
        }
        let (d, n) = first.shape();
        if d == 0 || n == 0 {
            return invalid("support maps must be non-empty");
        }
        if self.supports.iter().any(|s| s.shape() != (d, n)) {
            return invalid("support maps must share one shape");
        }
        if self.support_labels.len() != self.supports.len() || self.roi_labels.len() != self.boxes.len() {
            return invalid("label counts must match supports and boxes");
        }
        let (rows, cols) = self.grid;
        if self.query.nrows() != d || self.query.ncols() != rows * cols {
            return invalid(format!(
                "query map is {:?}, expected {d}x{} for a {rows}x{cols} grid",
                self.query.shape(),
                rows * cols
            ));
        }
        for (i, b) in self.boxes.iter().enumerate() {
            if b.height == 0 || b.width == 0 || b.row + b.height > rows || b.col + b.width > cols {
                return invalid(format!("box {i} {b:?} leaves the {rows}x{cols} grid"));
            }
            if b.area() != n {
                return invalid(format!("box {i} covers {} positions, supports have {n}", b.area()));
            }
        }
        if self.supports.iter().chain(std::iter::once(&self.query)).any(|m| m.iter().any(|v| !v.is_finite())) {
            return invalid("episode contains non-finite features");
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.query.nrows()
    }

    /// `d x N` crop of the query map.
    pub fn crop(&self, b: &RoiBox) -> DMatrix<f64> {
        let cols: Vec<_> = b.positions(self.grid.1).map(|p| self.query.column(p).into_owned()).collect();
        DMatrix::from_columns(&cols)
    }
}

/// `[m; m]`: the `2d`-channel map the relation heads consume.
pub fn lift_channels(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (d, n) = m.shape();
    DMatrix::from_fn(2 * d, n, |i, j| m[(i % d, j)])
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub split: SplitConfig,
    pub params: TsoParams,
    pub heads: usize,
    pub sigma: f64,
    /// RoI worker count; `None` reads the environment, then uses 1.
    pub threads: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { split: SplitConfig::default(), params: TsoParams::default(), heads: 1, sigma: DEFAULT_SIGMA, threads: None }
    }
}

impl PipelineConfig {
    pub fn worker_count(&self) -> usize {
        self.threads
            .or_else(|| std::env::var(POOL_THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()))
            .filter(|&n| n > 0)
            .unwrap_or(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeOutput {
    pub support_hops: Vec<DVector<f64>>,
    pub roi_hops: Vec<DVector<f64>>,
    /// Query map after cross-attention, `d x N*`.
    pub rpn_map: DMatrix<f64>,
    /// Mean cross-attention response inside each box.
    pub objectness: Vec<f64>,
    /// `B x 2d`.
    pub zshot: DMatrix<f64>,
    pub relations: Vec<RelationOutput>,
    /// Every order whose eta was replaced (odd orders need powers of 3).
    pub eta_substitutions: Vec<EtaChoice>,
}

impl EpisodeOutput {
    /// Z-shot row repeated over positions stacked on the combined relation,
    /// `4d x N`.
    pub fn head_features(&self, b: usize) -> DMatrix<f64> {
        let rel = &self.relations[b].combined;
        let z = self.zshot.row(b);
        let (h, n) = rel.shape();
        DMatrix::from_fn(z.len() + h, n, |i, j| if i < z.len() { z[i] } else { rel[(i - z.len(), j)] })
    }

    /// Every number in a fixed order; used for equality checks across runs.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for v in self.support_hops.iter().chain(&self.roi_hops) {
            out.extend(v.iter());
        }
        out.extend(self.rpn_map.iter());
        out.extend(&self.objectness);
        out.extend(self.zshot.iter());
        for r in &self.relations {
            out.extend(r.spatial.iter());
            out.extend(r.fo_ho.iter());
            out.extend(r.combined.iter());
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let (a, b) = (self.flatten(), other.flatten());
        if a.len() != b.len() {
            return f64::INFINITY;
        }
        a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }
}

struct RoiResult {
    hop: HopOutput,
    objectness: f64,
    crop: DMatrix<f64>,
}

pub fn forward_episode(e: &EpisodeBatch, cfg: &PipelineConfig, w: &HeadWeights) -> Result<EpisodeOutput> {
    let threads = cfg.worker_count();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|err| Error::InvalidArgument(format!("cannot build a {threads}-worker pool: {err}")))?;
    pool.install(|| forward_in_pool(e, cfg, w))
}

fn forward_in_pool(e: &EpisodeBatch, cfg: &PipelineConfig, w: &HeadWeights) -> Result<EpisodeOutput> {
    e.validate()?;
    let d = e.dim();
    if w.dim() != d {
        return invalid(format!("head weights are for d={}, episode has d={d}", w.dim()));
    }
    let support_out: Vec<HopOutput> = e
        .supports
        .par_iter()
        .map(|s| hop_unit_detailed(s, &cfg.split, &cfg.params))
        .collect::<Result<_>>()?;
    let support_hops: Vec<DVector<f64>> = support_out.iter().map(|h| h.vector.clone()).collect();
    let rpn_map = tenet_rpn_attend(&support_hops, &e.query, cfg.heads, cfg.sigma)?;

    let rois: Vec<RoiResult> = e
        .boxes
        .par_iter()
        .map(|b| {
            let crop = e.crop(b);
            let hop = hop_unit_detailed(&crop, &cfg.split, &cfg.params)?;
            let positions: Vec<usize> = b.positions(e.grid.1).collect();
            let total: f64 = positions.iter().map(|&p| rpn_map.column(p).sum()).sum();
            Ok(RoiResult { hop, objectness: total / (positions.len() * d) as f64, crop })
        })
        .collect::<Result<_>>()?;

    let lifted_supports: Vec<DMatrix<f64>> = e.supports.iter().map(lift_channels).collect();
    let support_emb = lifted_supports
        .iter()
        .zip(&support_hops)
        .map(|(m, h)| HopEmbedding::from_map(m, h.clone()))
        .collect::<Result<Vec<_>>>()?;
    let lifted_rois: Vec<DMatrix<f64>> = rois.iter().map(|r| lift_channels(&r.crop)).collect();
    let roi_emb = lifted_rois
        .iter()
        .zip(&rois)
        .map(|(m, r)| HopEmbedding::from_map(m, r.hop.vector.clone()))
        .collect::<Result<Vec<_>>>()?;
    let zshot = zshot_head(&support_emb, &roi_emb, w, cfg.heads, cfg.sigma)?;

    let (avg_map, avg_hop) = z_average(&lifted_supports, &support_hops)?;
    let support_tokens = spatial_hop_head(&build_spatial_hop_tokens(&avg_map, &avg_hop, w)?, cfg.heads, cfg.sigma)?;
    let relations = lifted_rois
        .par_iter()
        .zip(&rois)
        .map(|(m, r)| {
            let tokens = spatial_hop_head(&build_spatial_hop_tokens(m, &r.hop.vector, w)?, cfg.heads, cfg.sigma)?;
            compute_relations(&support_tokens, &tokens, w)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut eta_substitutions: Vec<EtaChoice> = Vec::new();
    for choice in support_out.iter().chain(rois.iter().map(|r| &r.hop)).flat_map(|h| &h.etas) {
        if choice.substituted() && !eta_substitutions.contains(choice) {
            eta_substitutions.push(*choice);
        }
    }

    Ok(EpisodeOutput {
        support_hops,
        roi_hops: rois.iter().map(|r| r.hop.vector.clone()).collect(),
        rpn_map,
        objectness: rois.iter().map(|r| r.objectness).collect(),
        zshot,
        relations,
        eta_substitutions,
    })
}

/// FC(2d -> d) + ReLU + FC(d -> 2d) with fixed seeded weights. Only the
/// shapes matter; nothing is trained.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationMlp {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

impl RelationMlp {
    pub fn seeded(d: usize, seed: u64) -> Result<Self> {
        if d == 0 {
            return invalid("MLP needs d >= 1");
        }
        let mut rng = rng::seeded(seed);
        let b_in = 1.0 / ((2 * d) as f64).sqrt();
        let b_hidden = 1.0 / (d as f64).sqrt();
        Ok(Self {
            w1: rng::uniform_matrix(&mut rng, d, 2 * d, b_in),
            b1: rng::uniform_matrix(&mut rng, d, 1, b_in).column(0).into_owned(),
            w2: rng::uniform_matrix(&mut rng, 2 * d, d, b_hidden),
            b2: rng::uniform_matrix(&mut rng, 2 * d, 1, b_hidden).column(0).into_owned(),
        })
    }

    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.w1.ncols() {
            return invalid(format!("MLP input has length {}, expected {}", x.len(), self.w1.ncols()));
        }
        let hidden = (&self.w1 * x + &self.b1).map(|v| v.max(0.0));
        Ok(&self.w2 * hidden + &self.b2)
    }
}

//! Transformer relation heads.
//!
//! Spatial feature maps carry `2d` channels, HOP vectors `d` channels. The
//! Z-shot head cross-attends from query-RoI embeddings to support embeddings;
//! the Spatial-HOP head self-attends over `N` spatial tokens plus one
//! first-order (FO) and one high-order (HO) token; relations between a
//! processed support token matrix and a processed RoI token matrix are then a
//! spatial difference and element-wise FO / HO products.

use nalgebra::{DMatrix, DVector};

use crate::attention::{multi_head, AttentionBundle, AttentionKind};
use crate::error::{invalid, Result};
use crate::rng;

/// RBF bandwidth used by both heads unless overridden.
pub const DEFAULT_SIGMA: f64 = 0.5;

/// Projection matrices of both heads.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadWeights {
    pub w_q: DMatrix<f64>,
    pub w_k: DMatrix<f64>,
    pub w_v: DMatrix<f64>,
    /// `2d x d`: lifts a HOP vector into the spatial channel space.
    pub w_p: DMatrix<f64>,
    /// `d x d`: projects the HOP vector into the HO token.
    pub w_g: DMatrix<f64>,
    /// `d x 2d`: projects the FO+HO relation vector.
    pub w_u: DMatrix<f64>,
}

impl HeadWeights {
    pub fn new(
        w_q: DMatrix<f64>,
        w_k: DMatrix<f64>,
        w_v: DMatrix<f64>,
        w_p: DMatrix<f64>,
        w_g: DMatrix<f64>,
        w_u: DMatrix<f64>,
    ) -> Result<Self> {
        let d = w_g.nrows();
        let expected = [
            ("w_q", &w_q, (2 * d, 2 * d)),
            ("w_k", &w_k, (2 * d, 2 * d)),
            ("w_v", &w_v, (2 * d, 2 * d)),
            ("w_p", &w_p, (2 * d, d)),
            ("w_g", &w_g, (d, d)),
            ("w_u", &w_u, (d, 2 * d)),
        ];
        if d == 0 {
            return invalid("head weights need d >= 1");
        }
        for (name, m, shape) in expected {
            if m.shape() != shape {
                return invalid(format!("{name} must be {shape:?}, got {:?}", m.shape()));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return invalid(format!("{name} has non-finite entries"));
            }
        }
        Ok(Self { w_q, w_k, w_v, w_p, w_g, w_u })
    }

    /// Uniform in `[-1/sqrt(d), 1/sqrt(d)]` from a fixed seed.
    pub fn seeded(d: usize, seed: u64) -> Result<Self> {
        if d == 0 {
            return invalid("head weights need d >= 1");
        }
        let mut rng = rng::seeded(seed);
        let bound = 1.0 / (d as f64).sqrt();
        let w_q = rng::uniform_matrix(&mut rng, 2 * d, 2 * d, bound);
        let w_k = rng::uniform_matrix(&mut rng, 2 * d, 2 * d, bound);
        let w_v = rng::uniform_matrix(&mut rng, 2 * d, 2 * d, bound);
        let w_p = rng::uniform_matrix(&mut rng, 2 * d, d, bound);
        let w_g = rng::uniform_matrix(&mut rng, d, d, bound);
        let w_u = rng::uniform_matrix(&mut rng, d, 2 * d, bound);
        Self::new(w_q, w_k, w_v, w_p, w_g, w_u)
    }

    /// HOP dimension `d`.
    pub fn dim(&self) -> usize {
        self.w_g.nrows()
    }

    pub fn named(&self) -> [(&'static str, &DMatrix<f64>); 6] {
        [
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("w_p", &self.w_p),
            ("w_g", &self.w_g),
            ("w_u", &self.w_u),
        ]
    }
}

/// Spatially pooled features (`2d`) and HOP vector (`d`) of one support crop
/// or query RoI.
#[derive(Clone, Debug, PartialEq)]
pub struct HopEmbedding {
    pub pooled: DVector<f64>,
    pub hop: DVector<f64>,
}

impl HopEmbedding {
    /// Average-pool a `2d x N` map.
    pub fn from_map(map: &DMatrix<f64>, hop: DVector<f64>) -> Result<Self> {
        if map.ncols() == 0 {
            return invalid("feature map has no spatial positions");
        }
        Ok(Self { pooled: column_mean(map), hop })
    }
}

fn column_mean(m: &DMatrix<f64>) -> DVector<f64> {
    m.column_sum() / m.ncols() as f64
}

fn embed(w: &HeadWeights, proj: &DMatrix<f64>, e: &HopEmbedding) -> Result<DVector<f64>> {
    let d = w.dim();
    if e.pooled.len() != 2 * d || e.hop.len() != d {
        return invalid(format!(
            "embedding shapes ({}, {}) do not match weights (2d={}, d={d})",
            e.pooled.len(),
            e.hop.len(),
            2 * d
        ));
    }
    Ok(proj * (&e.pooled + &w.w_p * &e.hop))
}

fn stack_columns(cols: &[DVector<f64>]) -> DMatrix<f64> {
    DMatrix::from_columns(cols)
}

/// Cross-attention from `B` query embeddings to `Z` support embeddings.
/// Returns `B x 2d`; row `b` is the RBF-weighted sum of the value vectors.
pub fn zshot_head(
    support: &[HopEmbedding],
    query: &[HopEmbedding],
    w: &HeadWeights,
    heads: usize,
    sigma: f64,
) -> Result<DMatrix<f64>> {
    if support.is_empty() || query.is_empty() {
        return invalid("Z-shot head needs at least one support and one query");
    }
    let q = query.iter().map(|e| embed(w, &w.w_q, e)).collect::<Result<Vec<_>>>()?;
    let k = support.iter().map(|e| embed(w, &w.w_k, e)).collect::<Result<Vec<_>>>()?;
    let v = support.iter().map(|e| embed(w, &w.w_v, e)).collect::<Result<Vec<_>>>()?;
    let bundle = AttentionBundle::new(stack_columns(&q), stack_columns(&k), stack_columns(&v), sigma, heads)?;
    multi_head(&bundle, AttentionKind::Rbf)
}

/// `[phi^l_1 .. phi^l_N, FO, HO]`, `d x (N + 2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenMatrix {
    tokens: DMatrix<f64>,
}

impl TokenMatrix {
    pub fn from_matrix(tokens: DMatrix<f64>) -> Result<Self> {
        if tokens.ncols() < 3 || tokens.nrows() == 0 {
            return invalid("token matrix needs at least one spatial token plus FO and HO");
        }
        Ok(Self { tokens })
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.tokens
    }

    pub fn dim(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn spatial_count(&self) -> usize {
        self.tokens.ncols() - 2
    }

    pub fn spatial(&self) -> DMatrix<f64> {
        self.tokens.columns(0, self.spatial_count()).into_owned()
    }

    pub fn fo(&self) -> DVector<f64> {
        self.tokens.column(self.spatial_count()).into_owned()
    }

    pub fn ho(&self) -> DVector<f64> {
        self.tokens.column(self.spatial_count() + 1).into_owned()
    }
}

/// Tokens from a `2d x N` map: the first `d` channels of every position, the
/// spatial mean of the last `d` channels (FO), and `W_g psi` (HO).
pub fn build_spatial_hop_tokens(map: &DMatrix<f64>, psi: &DVector<f64>, w: &HeadWeights) -> Result<TokenMatrix> {
    if !map.nrows().is_multiple_of(2) {
        return invalid(format!("channel count {} is odd; cannot split in halves", map.nrows()));
    }
    let d = map.nrows() / 2;
    if d != w.dim() || psi.len() != d {
        return invalid(format!(
            "map half-width {d}, psi length {} and weight dim {} must agree",
            psi.len(),
            w.dim()
        ));
    }
    if map.ncols() == 0 {
        return invalid("feature map has no spatial positions");
    }
    let n = map.ncols();
    let lower = map.rows(0, d);
    let upper = map.rows(d, d).into_owned();
    let mut tokens = DMatrix::zeros(d, n + 2);
    tokens.columns_mut(0, n).copy_from(&lower);
    tokens.set_column(n, &column_mean(&upper));
    tokens.set_column(n + 1, &(&w.w_g * psi));
    TokenMatrix::from_matrix(tokens)
}

/// RBF self-attention over all `N + 2` tokens; output keeps the layout.
pub fn spatial_hop_head(tokens: &TokenMatrix, heads: usize, sigma: f64) -> Result<TokenMatrix> {
    let bundle = AttentionBundle::self_attention(tokens.as_matrix(), sigma, heads)?;
    TokenMatrix::from_matrix(multi_head(&bundle, AttentionKind::Rbf)?.transpose())
}

/// Relations between one processed support token matrix and one processed
/// RoI token matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationOutput {
    /// Support minus RoI spatial tokens, `d x N`.
    pub spatial: DMatrix<f64>,
    /// `[FO_s * FO_q ; HO_s * HO_q]`, length `2d`.
    pub fo_ho: DVector<f64>,
    /// `[spatial ; W_u fo_ho repeated over N positions]`, `2d x N`.
    pub combined: DMatrix<f64>,
}

pub fn compute_relations(support: &TokenMatrix, query: &TokenMatrix, w: &HeadWeights) -> Result<RelationOutput> {
    if support.as_matrix().shape() != query.as_matrix().shape() {
        return invalid(format!(
            "token matrices differ: {:?} vs {:?}",
            support.as_matrix().shape(),
            query.as_matrix().shape()
        ));
    }
    let d = support.dim();
    if d != w.dim() {
        return invalid(format!("token dim {d} != weight dim {}", w.dim()));
    }
    let n = support.spatial_count();
    let spatial = support.spatial() - query.spatial();
    let mut fo_ho = DVector::zeros(2 * d);
    fo_ho.rows_mut(0, d).copy_from(&support.fo().component_mul(&query.fo()));
    fo_ho.rows_mut(d, d).copy_from(&support.ho().component_mul(&query.ho()));
    let projected = &w.w_u * &fo_ho;
    let mut combined = DMatrix::zeros(2 * d, n);
    combined.rows_mut(0, d).copy_from(&spatial);
    for mut col in combined.rows_mut(d, d).column_iter_mut() {
        col.copy_from(&projected);
    }
    Ok(RelationOutput { spatial, fo_ho, combined })
}

/// Means over the Z supports of their maps and HOP vectors.
pub fn z_average(maps: &[DMatrix<f64>], reps: &[DVector<f64>]) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (Some(first_map), Some(first_rep)) = (maps.first(), reps.first()) else {
        return invalid("z_average needs Z >= 1");
    };
    if maps.len() != reps.len() {
        return invalid(format!("{} maps but {} HOP vectors", maps.len(), reps.len()));
    }
    if maps.iter().any(|m| m.shape() != first_map.shape()) || reps.iter().any(|r| r.len() != first_rep.len()) {
        return invalid("support shapes are inconsistent");
    }
    let z = maps.len() as f64;
    let map = maps.iter().fold(DMatrix::zeros(first_map.nrows(), first_map.ncols()), |acc, m| acc + m) / z;
    let rep = reps.iter().fold(DVector::zeros(first_rep.len()), |acc, r| acc + r) / z;
    Ok((map, rep))
}

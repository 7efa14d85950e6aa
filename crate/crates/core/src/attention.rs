//! Attention layers over column-token matrices.
//!
//! Inputs follow the `d x N` convention (one token per column); outputs are
//! `N_q x d_v`, i.e. `alpha(gamma(Q, K)) V^T`. Two similarity / non-linearity
//! pairs are provided: scaled dot product with row SoftMax, and the
//! SoftMax-free RBF kernel on l2-normalized queries and keys.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{invalid, Error, Result};

/// Stabilizer for near-constant tokens in [`layer_norm_residual`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionKind {
    Softmax,
    Rbf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBundle {
    q: DMatrix<f64>,
    k: DMatrix<f64>,
    v: DMatrix<f64>,
    sigma: f64,
    heads: usize,
}

impl AttentionBundle {
    pub fn new(q: DMatrix<f64>, k: DMatrix<f64>, v: DMatrix<f64>, sigma: f64, heads: usize) -> Result<Self> {
        if q.is_empty() || k.is_empty() || v.is_empty() {
            return invalid("attention inputs must be non-empty");
        }
        if q.nrows() != k.nrows() {
            return invalid(format!("query dim {} != key dim {}", q.nrows(), k.nrows()));
        }
        if k.ncols() != v.ncols() {
            return invalid(format!("{} keys but {} values", k.ncols(), v.ncols()));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return invalid(format!("sigma must be positive, got {sigma}"));
        }
        if heads == 0 || !q.nrows().is_multiple_of(heads) || !v.nrows().is_multiple_of(heads) {
            return invalid(format!(
                "{heads} heads do not divide channel dims {} / {}",
                q.nrows(),
                v.nrows()
            ));
        }
        Ok(Self { q, k, v, sigma, heads })
    }

    /// Self-attention bundle with `Q = K = V = tokens`.
    pub fn self_attention(tokens: &DMatrix<f64>, sigma: f64, heads: usize) -> Result<Self> {
        Self::new(tokens.clone(), tokens.clone(), tokens.clone(), sigma, heads)
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// Split into per-head single-head bundles.
    pub fn split(&self) -> Vec<AttentionBundle> {
        let q = split_heads(&self.q, self.heads);
        let k = split_heads(&self.k, self.heads);
        let v = split_heads(&self.v, self.heads);
        q.into_iter()
            .zip(k)
            .zip(v)
            .map(|((q, k), v)| AttentionBundle { q, k, v, sigma: self.sigma, heads: 1 })
            .collect()
    }
}

fn l2_normalized(x: DVectorView<'_, f64>) -> Result<DVector<f64>> {
    let norm = x.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(x / norm)
}

/// `exp(-||q^ - k^||^2 / (2 sigma^2))` with `q^`, `k^` the l2-normalized inputs.
pub fn rbf_similarity(q: &[f64], k: &[f64], sigma: f64) -> Result<f64> {
    if q.len() != k.len() {
        return invalid(format!("vector lengths differ: {} vs {}", q.len(), k.len()));
    }
    if sigma.is_nan() || sigma <= 0.0 {
        return invalid(format!("sigma must be positive, got {sigma}"));
    }
    let qh = l2_normalized(DVectorView::from_slice(q, q.len()))?;
    let kh = l2_normalized(DVectorView::from_slice(k, k.len()))?;
    Ok((-(qh - kh).norm_squared() / (2.0 * sigma * sigma)).exp())
}

/// `alpha(gamma(Q, K))` for a single head: `N_q x N_k`.
pub fn similarity_matrix(b: &AttentionBundle, kind: AttentionKind) -> Result<DMatrix<f64>> {
    let (nq, nk) = (b.q.ncols(), b.k.ncols());
    match kind {
        AttentionKind::Softmax => {
            let scale = 1.0 / (b.q.nrows() as f64).sqrt();
            let mut logits = b.q.transpose() * &b.k * scale;
            for mut row in logits.row_iter_mut() {
                let max = row.max();
                row.apply(|x| *x = (*x - max).exp());
                let total = row.sum();
                row /= total;
            }
            Ok(logits)
        }
        AttentionKind::Rbf => {
            let qs = (0..nq).map(|i| l2_normalized(b.q.column(i))).collect::<Result<Vec<_>>>()?;
            let ks = (0..nk).map(|j| l2_normalized(b.k.column(j))).collect::<Result<Vec<_>>>()?;
            let denom = 2.0 * b.sigma * b.sigma;
            Ok(DMatrix::from_fn(nq, nk, |i, j| (-(&qs[i] - &ks[j]).norm_squared() / denom).exp()))
        }
    }
}

/// Single-head attention over all channels: `alpha(gamma(Q, K)) V^T`.
pub fn attention(b: &AttentionBundle, kind: AttentionKind) -> Result<DMatrix<f64>> {
    Ok(similarity_matrix(b, kind)? * b.v.transpose())
}

/// Split the channels into `heads` contiguous groups, attend per group and
/// concatenate the outputs along channels.
pub fn multi_head(b: &AttentionBundle, kind: AttentionKind) -> Result<DMatrix<f64>> {
    let outputs = b
        .split()
        .iter()
        .map(|h| attention(h, kind))
        .collect::<Result<Vec<_>>>()?;
    Ok(concat_columns(&outputs))
}

/// Row blocks of width `m.nrows() / heads`. Panics if `heads` does not
/// divide the row count.
pub fn split_heads(m: &DMatrix<f64>, heads: usize) -> Vec<DMatrix<f64>> {
    assert!(heads > 0 && m.nrows().is_multiple_of(heads), "heads must divide the channel count");
    let width = m.nrows() / heads;
    (0..heads).map(|h| m.rows(h * width, width).into_owned()).collect()
}

/// Stack row blocks back together.
pub fn concat_heads(parts: &[DMatrix<f64>]) -> DMatrix<f64> {
    let cols = parts.first().map_or(0, |p| p.ncols());
    let rows: usize = parts.iter().map(|p| p.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for p in parts {
        out.rows_mut(r, p.nrows()).copy_from(p);
        r += p.nrows();
    }
    out
}

fn concat_columns(parts: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = parts.first().map_or(0, |p| p.nrows());
    let cols: usize = parts.iter().map(|p| p.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for p in parts {
        out.columns_mut(c, p.ncols()).copy_from(p);
        c += p.ncols();
    }
    out
}

/// `LayerNorm(x + sub_output)` per token (row), unit gain and zero bias.
pub fn layer_norm_residual(x: &DMatrix<f64>, sub_output: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.shape() != sub_output.shape() {
        return invalid(format!("shape mismatch: {:?} vs {:?}", x.shape(), sub_output.shape()));
    }
    if x.ncols() == 0 {
        return invalid("layer norm needs at least one channel");
    }
    let mut out = x + sub_output;
    let width = out.ncols() as f64;
    for mut row in out.row_iter_mut() {
        let mean = row.sum() / width;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / width;
        // Only near-constant rows get the stabilizer, so ordinary rows come
        // out with exactly unit variance.
        let scale = if var > LAYER_NORM_EPS {
            1.0 / var.sqrt()
        } else {
            1.0 / (var + LAYER_NORM_EPS).sqrt()
        };
        row.apply(|v| *v = (*v - mean) * scale);
    }
    Ok(out)
}

//! Dense cubic tensors.
//!
//! A [`DenseTensor`] of order `r` over dimension `d` stores `d^r` coefficients
//! in row-major order (last index fastest), so the multi-index
//! `(i_1, ..., i_r)` lives at `sum_j i_j * d^(r - j)`. Grouping the first `a`
//! modes as rows and the remaining `r - a` as columns is then a plain
//! reinterpretation of the buffer, which is how [`contract`] reduces mode
//! contractions to matrix products.

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};

/// Highest supported tensor order.
pub const MAX_ORDER: usize = 4;

/// Largest dimension accepted for a given order.
pub fn max_dim(order: usize) -> usize {
    match order {
        1 => 1 << 16,
        2 => 128,
        3 => 24,
        4 => 16,
        _ => 0,
    }
}

/// Reject orders outside `1..=4` and dimensions above the desk-scale bound.
pub fn check_capacity(order: usize, dim: usize) -> Result<()> {
    if order == 0 || dim == 0 {
        return invalid(format!("order and dim must be positive (order={order}, dim={dim})"));
    }
    let max = max_dim(order);
    if order > MAX_ORDER || dim > max {
        return Err(Error::Capacity { order, dim, max_dim: max });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    order: usize,
    dim: usize,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(order: usize, dim: usize) -> Result<Self> {
        check_capacity(order, dim)?;
        Ok(Self::from_raw(order, dim, vec![0.0; dim.pow(order as u32)]))
    }

    /// Wrap a row-major coefficient buffer. The buffer must hold exactly
    /// `dim^order` finite values.
    pub fn from_vec(order: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        check_capacity(order, dim)?;
        let expected = dim.pow(order as u32);
        if data.len() != expected {
            return invalid(format!(
                "order {order} dim {dim} tensor needs {expected} coefficients, got {}",
                data.len()
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return invalid(format!("non-finite coefficient at flat index {pos}"));
        }
        Ok(Self::from_raw(order, dim, data))
    }

    /// Square matrix as an order-2 tensor.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return invalid(format!("matrix must be square, got {}x{}", m.nrows(), m.ncols()));
        }
        let d = m.nrows();
        let mut data = Vec::with_capacity(d * d);
        for i in 0..d {
            data.extend(m.row(i).iter());
        }
        Self::from_vec(2, d, data)
    }

    // Intermediate contraction results may exceed the public capacity bound
    // (order 3, d = 24 squares to an order-4 intermediate).
    pub(crate) fn from_raw(order: usize, dim: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dim.pow(order as u32));
        Self { order, dim, data }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.order, "index arity must equal tensor order");
        index.iter().fold(0, |acc, &i| {
            assert!(i < self.dim, "index {i} out of range for dim {}", self.dim);
            acc * self.dim + i
        })
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    /// Multi-index of a flat position.
    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.order];
        for slot in idx.iter_mut().rev() {
            *slot = flat % self.dim;
            flat /= self.dim;
        }
        idx
    }

    /// Order-2 tensor as a matrix.
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.order != 2 {
            return invalid(format!("to_matrix needs an order-2 tensor, got order {}", self.order));
        }
        Ok(DMatrix::from_row_slice(self.dim, self.dim, &self.data))
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.order != other.order || self.dim != other.dim {
            return invalid(format!(
                "shape mismatch: order {} dim {} vs order {} dim {}",
                self.order, self.dim, other.order, other.dim
            ));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self::from_raw(self.order, self.dim, data))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self::from_raw(self.order, self.dim, data))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_raw(self.order, self.dim, self.data.iter().map(|v| v * factor).collect())
    }

    /// Full inner product `sum_i a_i b_i` over all coefficients.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
    }

    /// `||self - other||_F / max(||other||_F, tiny)`.
    pub fn relative_error(&self, reference: &Self) -> Result<f64> {
        let diff = self.sub(reference)?.frobenius_norm();
        Ok(diff / reference.frobenius_norm().max(f64::MIN_POSITIVE))
    }

    /// Largest `|T[i] - T[pi(i)]|` over all index permutations `pi`.
    pub fn max_asymmetry(&self) -> f64 {
        let perms = permutations(self.order);
        let mut worst = 0.0_f64;
        let mut permuted = vec![0; self.order];
        for flat in 0..self.data.len() {
            let idx = self.multi_index(flat);
            for perm in &perms {
                for (slot, &p) in permuted.iter_mut().zip(perm) {
                    *slot = idx[p];
                }
                let other = self.offset(&permuted);
                worst = worst.max((self.data[flat] - self.data[other]).abs());
            }
        }
        worst
    }

    /// Average over all `r!` index permutations.
    pub fn symmetrized(&self) -> Self {
        let perms = permutations(self.order);
        let mut permuted = vec![0; self.order];
        let data = (0..self.data.len())
            .map(|flat| {
                let idx = self.multi_index(flat);
                let total: f64 = perms
                    .iter()
                    .map(|perm| {
                        for (slot, &p) in permuted.iter_mut().zip(perm) {
                            *slot = idx[p];
                        }
                        self.data[self.offset(&permuted)]
                    })
                    .sum();
                total / perms.len() as f64
            })
            .collect();
        Self::from_raw(self.order, self.dim, data)
    }
}

/// All permutations of `0..n`, identity first.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn extend(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                extend(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    extend(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

/// Entries `T[i, i, ..., i]` of a cubic tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperDiagonal {
    values: Vec<f64>,
}

impl SuperDiagonal {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Matrix view of a tensor: the first `a` modes index rows, the remaining
/// `r - a` modes index columns. Borrowed, since row-major storage already
/// has this layout.
#[derive(Clone, Copy, Debug)]
pub struct Unfolding<'a> {
    rows: usize,
    cols: usize,
    data: &'a [f64],
}

impl<'a> Unfolding<'a> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &'a [f64] {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, self.data)
    }
}

/// `x ⊗ x ⊗ ... ⊗ x` (r factors).
pub fn outer_power(x: &[f64], order: usize) -> Result<DenseTensor> {
    if order == 0 || x.is_empty() {
        return invalid("outer_power needs order >= 1 and a non-empty vector");
    }
    let dim = x.len();
    check_capacity(order, dim)?;
    // Multiplying the factors in sorted index order makes every permutation
    // of an index produce the bit-identical value.
    let mut index = vec![0usize; order];
    let data = (0..dim.pow(order as u32))
        .map(|mut flat| {
            for slot in index.iter_mut().rev() {
                *slot = flat % dim;
                flat /= dim;
            }
            index.sort_unstable();
            index.iter().map(|&i| x[i]).product()
        })
        .collect();
    DenseTensor::from_vec(order, dim, data)
}

/// Ones on the super-diagonal, zeros elsewhere.
pub fn identity_tensor(dim: usize, order: usize) -> Result<DenseTensor> {
    if order < 2 {
        return invalid(format!("identity tensor needs order >= 2, got {order}"));
    }
    let mut t = DenseTensor::zeros(order, dim)?;
    let step = diagonal_stride(order, dim);
    for i in 0..dim {
        t.data[i * step] = 1.0;
    }
    Ok(t)
}

// Flat distance between (i,...,i) and (i+1,...,i+1): 1 + d + ... + d^(r-1).
fn diagonal_stride(order: usize, dim: usize) -> usize {
    (0..order).map(|j| dim.pow(j as u32)).sum()
}

pub fn super_diagonal(t: &DenseTensor) -> SuperDiagonal {
    let step = diagonal_stride(t.order, t.dim);
    SuperDiagonal {
        values: (0..t.dim).map(|i| t.data[i * step]).collect(),
    }
}

/// Contract the last `k` modes of `a` with the first `k` modes of `b`.
///
/// The result has order `a.order + b.order - 2k`. For matrices and `k = 1`
/// this is the ordinary matrix product; for even-order tensors and
/// `k = r/2` it is the product of the balanced unfoldings.
pub fn contract(a: &DenseTensor, b: &DenseTensor, k: usize) -> Result<DenseTensor> {
    if a.dim != b.dim {
        return invalid(format!("contraction dim mismatch: {} vs {}", a.dim, b.dim));
    }
    if k > a.order || k > b.order {
        return invalid(format!(
            "cannot contract {k} modes of tensors with orders {} and {}",
            a.order, b.order
        ));
    }
    let out_order = a.order + b.order - 2 * k;
    if out_order == 0 {
        return invalid("full contraction yields a scalar; use DenseTensor::inner");
    }
    if out_order > MAX_ORDER {
        return Err(Error::Capacity { order: out_order, dim: a.dim, max_dim: 0 });
    }
    let d = a.dim;
    let rows = d.pow((a.order - k) as u32);
    let inner = d.pow(k as u32);
    let cols = d.pow((b.order - k) as u32);
    let mut out = vec![0.0; rows * cols];
    for (i, out_row) in out.chunks_exact_mut(cols).enumerate() {
        let a_row = &a.data[i * inner..(i + 1) * inner];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b.data[p * cols..(p + 1) * cols];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("contraction overflowed to a non-finite value".into()));
    }
    Ok(DenseTensor::from_raw(out_order, d, out))
}

/// Same contraction as [`contract`], evaluated by explicit multi-index
/// summation instead of a blocked matrix product. Slow; used as a second
/// route for the odd-order chain.
pub fn contract_by_index(a: &DenseTensor, b: &DenseTensor, k: usize) -> Result<DenseTensor> {
    if a.dim != b.dim || k > a.order || k > b.order {
        return invalid("contract_by_index: incompatible operands");
    }
    let out_order = a.order + b.order - 2 * k;
    if out_order == 0 || out_order > MAX_ORDER {
        return invalid(format!("contract_by_index: unsupported result order {out_order}"));
    }
    let d = a.dim;
    let free_a = a.order - k;
    let n_out = d.pow(out_order as u32);
    let n_sum = d.pow(k as u32);
    let mut out = vec![0.0; n_out];
    let mut out_idx = vec![0usize; out_order];
    let mut sum_idx = vec![0usize; k];
    let mut a_idx = vec![0usize; a.order];
    let mut b_idx = vec![0usize; b.order];
    for (flat, slot) in out.iter_mut().enumerate() {
        decode(flat, d, &mut out_idx);
        let mut acc = 0.0;
        for s in 0..n_sum {
            decode(s, d, &mut sum_idx);
            a_idx[..free_a].copy_from_slice(&out_idx[..free_a]);
            a_idx[free_a..].copy_from_slice(&sum_idx);
            b_idx[..k].copy_from_slice(&sum_idx);
            b_idx[k..].copy_from_slice(&out_idx[free_a..]);
            acc += a.get(&a_idx) * b.get(&b_idx);
        }
        *slot = acc;
    }
    Ok(DenseTensor::from_raw(out_order, d, out))
}

fn decode(mut flat: usize, d: usize, idx: &mut [usize]) {
    for slot in idx.iter_mut().rev() {
        *slot = flat % d;
        flat /= d;
    }
}

/// Matricize `t` with its first `leading` modes as rows.
pub fn unfold(t: &DenseTensor, leading: usize) -> Result<Unfolding<'_>> {
    if leading == 0 || leading >= t.order {
        return invalid(format!(
            "unfold needs 1 <= leading < order ({}), got {leading}",
            t.order
        ));
    }
    Ok(Unfolding {
        rows: t.dim.pow(leading as u32),
        cols: t.dim.pow((t.order - leading) as u32),
        data: &t.data,
    })
}

/// Inverse of [`unfold`]: reshape a `d^a x d^b` matrix into an order `a + b`
/// tensor.
pub fn refold(m: &DMatrix<f64>, order: usize, dim: usize) -> Result<DenseTensor> {
    let total = dim.checked_pow(order as u32).unwrap_or(usize::MAX);
    if m.nrows() * m.ncols() != total {
        return invalid(format!(
            "{}x{} matrix cannot refold into order {order} dim {dim}",
            m.nrows(),
            m.ncols()
        ));
    }
    let mut data = Vec::with_capacity(total);
    for i in 0..m.nrows() {
        data.extend(m.row(i).iter());
    }
    DenseTensor::from_vec(order, dim, data)
}

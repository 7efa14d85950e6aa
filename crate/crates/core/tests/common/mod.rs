//! Independent reference computations for the integration and acceptance
//! tests. Nothing here calls the library's numerical kernels.

#![allow(dead_code)]

use hopool_core::DenseTensor;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Random PSD matrix scaled to unit trace.
pub fn unit_trace_psd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = normal_matrix(rng, d, d);
    let m = &a * a.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let tr = m.trace();
    m / tr
}

/// Row-major digits of `flat` in base `dim`.
pub fn digits(mut flat: usize, dim: usize, order: usize) -> Vec<usize> {
    let mut idx = vec![0; order];
    for slot in idx.iter_mut().rev() {
        *slot = flat % dim;
        flat /= dim;
    }
    idx
}

/// `(1/N) sum_n prod_k w_n (phi_n - mu)[i_k]`, entry by entry.
pub fn descriptor(features: &DMatrix<f64>, weights: &[f64], mean: &[f64], order: usize) -> Vec<f64> {
    let (d, n) = features.shape();
    (0..d.pow(order as u32))
        .map(|flat| {
            let idx = digits(flat, d, order);
            let total: f64 = (0..n)
                .map(|c| idx.iter().map(|&i| weights[c] * (features[(i, c)] - mean[i])).product::<f64>())
                .sum();
            total / n as f64
        })
        .collect()
}

/// `(1/(NM)) sum sum <w (phi - mu), w' (phi' - mu')>^r` and the matching sum
/// of absolute terms (a scale for relative errors).
pub fn kernel(
    f: &DMatrix<f64>,
    fw: &[f64],
    fm: &[f64],
    g: &DMatrix<f64>,
    gw: &[f64],
    gm: &[f64],
    order: usize,
) -> (f64, f64) {
    let (mut total, mut scale) = (0.0, 0.0);
    for a in 0..f.ncols() {
        for b in 0..g.ncols() {
            let dot: f64 = (0..f.nrows()).map(|i| fw[a] * (f[(i, a)] - fm[i]) * gw[b] * (g[(i, b)] - gm[i])).sum();
            total += dot.powi(order as i32);
            scale += dot.abs().powi(order as i32);
        }
    }
    let nm = (f.ncols() * g.ncols()) as f64;
    (total / nm, scale / nm)
}

/// Balanced unfolding built from multi-indices.
pub fn unfold_balanced(t: &DenseTensor) -> DMatrix<f64> {
    let (r, d) = (t.order(), t.dim());
    let side = d.pow((r / 2) as u32);
    DMatrix::from_fn(side, side, |row, col| {
        let mut idx = digits(row, d, r / 2);
        idx.extend(digits(col, d, r / 2));
        t.get(&idx)
    })
}

/// `I - (I - U)^eta` on the balanced unfolding, by repeated multiplication.
pub fn even_tso(t: &DenseTensor, eta: u32) -> DMatrix<f64> {
    let (r, d) = (t.order(), t.dim());
    let u = unfold_balanced(t);
    let side = u.nrows();
    let id = DMatrix::from_fn(side, side, |row, col| {
        let mut idx = digits(row, d, r / 2);
        idx.extend(digits(col, d, r / 2));
        if idx.iter().all(|&i| i == idx[0]) { 1.0 } else { 0.0 }
    });
    let g = &id - &u;
    let mut p = g.clone();
    for _ in 1..eta {
        p = &p * &g;
    }
    id - p
}

fn at3(x: &[f64], d: usize, i: usize, j: usize, k: usize) -> f64 {
    x[(i * d + j) * d + k]
}

/// `Z[i,j,n] = sum_{k,l,m} X[i,j,k] X[k,l,m] X[l,m,n]`.
pub fn odd_cube(x: &[f64], d: usize) -> Vec<f64> {
    let mut z = vec![0.0; d * d * d];
    for i in 0..d {
        for j in 0..d {
            for n in 0..d {
                let mut s = 0.0;
                for k in 0..d {
                    for l in 0..d {
                        for m in 0..d {
                            s += at3(x, d, i, j, k) * at3(x, d, k, l, m) * at3(x, d, l, m, n);
                        }
                    }
                }
                z[(i * d + j) * d + n] = s;
            }
        }
    }
    z
}

/// `I - (I - X)^eta` for order 3, `eta` a power of 3.
pub fn odd_tso(t: &DenseTensor, eta: u32) -> Vec<f64> {
    let d = t.dim();
    let id: Vec<f64> = (0..d * d * d).map(|f| {
        let idx = digits(f, d, 3);
        if idx[0] == idx[1] && idx[1] == idx[2] { 1.0 } else { 0.0 }
    }).collect();
    let mut g: Vec<f64> = id.iter().zip(t.data()).map(|(a, b)| a - b).collect();
    let mut n = eta;
    while n > 1 {
        g = odd_cube(&g, d);
        n /= 3;
    }
    id.iter().zip(&g).map(|(a, b)| a - b).collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

pub fn rbf(q: &[f64], k: &[f64], sigma: f64) -> f64 {
    let nq = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nk = k.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dist: f64 = q.iter().zip(k).map(|(a, b)| (a / nq - b / nk).powi(2)).sum();
    (-dist / (2.0 * sigma * sigma)).exp()
}

pub fn permute_columns(m: &DMatrix<f64>, order: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), order.len(), |i, j| m[(i, order[j])])
}

/// KL(lambda° || lambda°') + delta/(alpha-1) (1 - sum lambda°'^alpha), from
/// the definitions.
pub fn shrinkage_objective(lambda: &[f64], lambda_prime: &[f64], eta: u32) -> f64 {
    let d = lambda.len() as f64;
    let e = eta as f64;
    let s = d - 1.0;
    let t: f64 = lambda.iter().map(|l| (1.0 - l).powi(eta as i32)).sum();
    let alpha = 1.0 / e;
    let delta = e * t.powf(1.0 / e) * (1.0 - 1.0 / e) / s;
    let mut kl = 0.0;
    let mut power = 0.0;
    for (l, lp) in lambda.iter().zip(lambda_prime) {
        let p = (1.0 - l) / s;
        let q = (1.0 - lp) / t;
        kl += p * (p / q).ln();
        power += q.powf(alpha);
    }
    kl + delta / (alpha - 1.0) * (1.0 - power)
}

/// `d/dx sigme(x; eta')`.
pub fn sigme_slope(p: f64, eta_prime: f64) -> f64 {
    let e = (-eta_prime * p).exp();
    2.0 * eta_prime * e / (1.0 + e).powi(2)
}

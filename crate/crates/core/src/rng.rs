use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub(crate) fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub(crate) fn normal_vector<R: Rng>(rng: &mut R, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

pub(crate) fn uniform_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
}

/// Random full-rank PSD matrix with unit trace (up to the epsilon regularizer).
pub(crate) fn trace_normalized_psd<R: Rng>(rng: &mut R, d: usize, ridge: f64) -> DMatrix<f64> {
    let a = normal_matrix(rng, d, d);
    let m = &a * a.transpose() + DMatrix::identity(d, d) * ridge;
    let m = (&m + m.transpose()) * 0.5;
    let tr = m.trace();
    m / (crate::EPSILON + tr)
}

//! High-order tensor descriptors (HoTD).
//!
//! For features `phi_1..phi_N` with weights `w` and mean `mu`,
//!
//! ```text
//! M^(r) = (1/N) sum_n w_n^r (phi_n - mu)^{⊗r}
//! ```
//!
//! and the tensor inner product of two such descriptors equals the averaged
//! degree-r polynomial kernel between their feature sets. The descriptor
//! ignores the order of columns, which is what makes the pooled
//! representation spatially orderless.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::tensor::{check_capacity, DenseTensor};
use crate::EPSILON;

/// `d x N` local features with per-column weights and a centering vector.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    features: DMatrix<f64>,
    weights: DVector<f64>,
    mean: DVector<f64>,
}

impl FeatureMatrix {
    /// Unit weights and zero mean.
    pub fn new(features: DMatrix<f64>) -> Result<Self> {
        if features.ncols() == 0 || features.nrows() == 0 {
            return invalid("feature matrix needs at least one column and one row");
        }
        if features.iter().any(|v| !v.is_finite()) {
            return invalid("feature matrix contains non-finite values");
        }
        let (d, n) = features.shape();
        Ok(Self {
            features,
            weights: DVector::from_element(n, 1.0),
            mean: DVector::zeros(d),
        })
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = columns.first() else {
            return invalid("feature matrix needs at least one column");
        };
        let d = first.len();
        if columns.iter().any(|c| c.len() != d) {
            return invalid("all feature columns must have the same length");
        }
        Self::new(DMatrix::from_fn(d, columns.len(), |i, j| columns[j][i]))
    }

    pub fn with_weights(mut self, weights: DVector<f64>) -> Result<Self> {
        if weights.len() != self.count() {
            return invalid(format!("expected {} weights, got {}", self.count(), weights.len()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return invalid("weights must be finite and non-negative");
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn with_mean(mut self, mean: DVector<f64>) -> Result<Self> {
        if mean.len() != self.dim() {
            return invalid(format!("expected mean of length {}, got {}", self.dim(), mean.len()));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return invalid("mean must be finite");
        }
        self.mean = mean;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.features.nrows()
    }

    pub fn count(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// `w_n (phi_n - mu)`; since `w_n >= 0`, its r-th outer power carries the
    /// `w_n^r` factor.
    fn weighted_centered(&self, n: usize) -> Vec<f64> {
        let w = self.weights[n];
        self.features
            .column(n)
            .iter()
            .zip(self.mean.iter())
            .map(|(p, m)| w * (p - m))
            .collect()
    }
}

/// `(1/N) sum_n w_n^r (phi_n - mu)^{⊗r}`.
pub fn hotd(f: &FeatureMatrix, order: usize) -> Result<DenseTensor> {
    if order < 2 {
        return invalid(format!("descriptor order must be >= 2, got {order}"));
    }
    let d = f.dim();
    check_capacity(order, d)?;
    let mut acc = vec![0.0; d.pow(order as u32)];
    let mut buf = Vec::with_capacity(acc.len());
    for n in 0..f.count() {
        let v = f.weighted_centered(n);
        // Kronecker powers of v, built in place.
        buf.clear();
        buf.extend_from_slice(&v);
        for _ in 1..order {
            let prev = std::mem::take(&mut buf);
            buf.reserve(prev.len() * d);
            for &a in &prev {
                buf.extend(v.iter().map(|&b| a * b));
            }
        }
        for (slot, x) in acc.iter_mut().zip(&buf) {
            *slot += x;
        }
    }
    let inv_n = 1.0 / f.count() as f64;
    acc.iter_mut().for_each(|v| *v *= inv_n);
    DenseTensor::from_vec(order, d, acc)
}

/// `(1/(NM)) sum_n sum_m w_n^r w'_m^r <phi_n - mu, phi'_m - mu'>^r`.
pub fn poly_kernel_sum(f: &FeatureMatrix, g: &FeatureMatrix, order: usize) -> Result<f64> {
    if f.dim() != g.dim() {
        return invalid(format!("feature dims differ: {} vs {}", f.dim(), g.dim()));
    }
    let left: Vec<Vec<f64>> = (0..f.count()).map(|n| f.weighted_centered(n)).collect();
    let right: Vec<Vec<f64>> = (0..g.count()).map(|m| g.weighted_centered(m)).collect();
    let mut total = 0.0;
    for a in &left {
        for b in &right {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            total += dot.powi(order as i32);
        }
    }
    Ok(total / (f.count() * g.count()) as f64)
}

/// `eps + (1/N) sum_n w_n^r ||phi_n - mu||^r`. For even `r` this is the trace
/// of the balanced unfolding of `hotd(f, r)` plus `eps`.
pub fn normalization_denominator(f: &FeatureMatrix, order: usize) -> f64 {
    let total: f64 = (0..f.count())
        .map(|n| {
            let v = f.weighted_centered(n);
            v.iter().map(|x| x * x).sum::<f64>().sqrt().powi(order as i32)
        })
        .sum();
    EPSILON + total / f.count() as f64
}

/// Trace-normalize a descriptor built from `f`.
pub fn normalize_descriptor(t: &DenseTensor, f: &FeatureMatrix, order: usize) -> Result<DenseTensor> {
    if t.order() != order || t.dim() != f.dim() {
        return invalid(format!(
            "descriptor has order {} dim {}, expected order {order} dim {}",
            t.order(),
            t.dim(),
            f.dim()
        ));
    }
    Ok(t.scaled(1.0 / normalization_denominator(f, order)))
}

/// [`hotd`] followed by [`normalize_descriptor`].
pub fn normalized_hotd(f: &FeatureMatrix, order: usize) -> Result<DenseTensor> {
    let t = hotd(f, order)?;
    normalize_descriptor(&t, f, order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{identity_tensor, outer_power, unfold};

    #[test]
    fn single_column_is_outer_power() {
        let f = FeatureMatrix::from_columns(&[vec![1.0, 0.0]]).unwrap();
        assert_eq!(hotd(&f, 3).unwrap(), outer_power(&[1.0, 0.0], 3).unwrap());
    }

    #[test]
    fn orthonormal_pair_averages_to_half_identity() {
        let f = FeatureMatrix::from_columns(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let expected = identity_tensor(2, 2).unwrap().scaled(0.5);
        assert_eq!(hotd(&f, 2).unwrap(), expected);
    }

    #[test]
    fn kernel_examples() {
        let e0 = FeatureMatrix::from_columns(&[vec![1.0, 0.0]]).unwrap();
        let e1 = FeatureMatrix::from_columns(&[vec![0.0, 1.0]]).unwrap();
        for r in 2..=4 {
            assert_eq!(poly_kernel_sum(&e0, &e0, r).unwrap(), 1.0);
        }
        assert_eq!(poly_kernel_sum(&e0, &e1, 2).unwrap(), 0.0);
        let e3 = FeatureMatrix::from_columns(&[vec![0.0, 1.0, 0.0]]).unwrap();
        assert!(poly_kernel_sum(&e0, &e3, 2).is_err());
    }

    #[test]
    fn weights_and_mean_enter_as_specified() {
        let f = FeatureMatrix::from_columns(&[vec![2.0, 1.0]])
            .unwrap()
            .with_weights(DVector::from_vec(vec![0.5]))
            .unwrap()
            .with_mean(DVector::from_vec(vec![1.0, 1.0]))
            .unwrap();
        // w (phi - mu) = [0.5, 0]; r = 2 -> only (0,0) = 0.25.
        let t = hotd(&f, 2).unwrap();
        assert_eq!(t.data(), &[0.25, 0.0, 0.0, 0.0]);
        assert!(FeatureMatrix::from_columns(&[vec![1.0]])
            .unwrap()
            .with_weights(DVector::from_vec(vec![-1.0]))
            .is_err());
    }

    #[test]
    fn normalization_examples() {
        // r = 2 descriptor with trace 5.
        let f = FeatureMatrix::from_columns(&[vec![1.0, 2.0]]).unwrap();
        let t = hotd(&f, 2).unwrap();
        let n = normalize_descriptor(&t, &f, 2).unwrap();
        let tr = n.to_matrix().unwrap().trace();
        assert!((tr - 5.0 / (5.0 + 1e-6)).abs() < 1e-15);

        let unit = FeatureMatrix::from_columns(&[vec![0.6, 0.8]]).unwrap();
        let t = hotd(&unit, 4).unwrap();
        let n = normalize_descriptor(&t, &unit, 4).unwrap();
        let expected = t.scaled(1.0 / (1.0 + 1e-6));
        assert!(n.max_abs_diff(&expected).unwrap() < 1e-16);
        let u = unfold(&n, 2).unwrap().to_matrix();
        assert!(u.trace() <= 1.0 && u.trace() > 1.0 - 1e-5);
    }

    #[test]
    fn capacity_is_enforced() {
        let f = FeatureMatrix::new(DMatrix::from_element(17, 2, 0.1)).unwrap();
        assert!(matches!(hotd(&f, 4), Err(crate::Error::Capacity { .. })));
        assert!(hotd(&f, 3).is_ok());
    }
}

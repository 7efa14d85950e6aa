use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};

pub const DEFAULT_STEP: f64 = 1e-6;

/// Central-difference Jacobian of `op` at `x`, `len(op(x)) x len(x)`.
pub fn numerical_jacobian<F>(op: F, x: &[f64], step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(step > 0.0 && step.is_finite()) {
        return invalid(format!("step must be positive, got {step}"));
    }
    let base = op(x)?;
    let mut jac = DMatrix::zeros(base.len(), x.len());
    let mut probe = x.to_vec();
    for j in 0..x.len() {
        probe[j] = x[j] + step;
        let plus = op(&probe)?;
        probe[j] = x[j] - step;
        let minus = op(&probe)?;
        probe[j] = x[j];
        if plus.len() != base.len() || minus.len() != base.len() {
            return invalid("operation changed its output length between probes");
        }
        for i in 0..base.len() {
            let v = (plus[i] - minus[i]) / (2.0 * step);
            if !v.is_finite() {
                return Err(Error::Domain(format!("non-finite derivative at output {i}, input {j}")));
            }
            jac[(i, j)] = v;
        }
    }
    Ok(jac)
}

/// `max |J(h1) - J(h2)| / max(1, max |J(h2)|)`.
pub fn richardson_gap<F>(op: F, x: &[f64], h1: f64, h2: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let a = numerical_jacobian(&op, x, h1)?;
    let b = numerical_jacobian(&op, x, h2)?;
    Ok((a - &b).amax() / b.amax().max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tso::{maxexp_scalar, sigme};

    #[test]
    fn sigme_slope_at_zero() {
        let j = numerical_jacobian(|x| Ok(vec![sigme(x[0], 200.0)]), &[0.0], DEFAULT_STEP).unwrap();
        assert!((j[(0, 0)] - 100.0).abs() < 1e-3);
    }

    #[test]
    fn maxexp_slope() {
        let j = numerical_jacobian(|x| Ok(vec![maxexp_scalar(x[0], 2)?]), &[0.5], DEFAULT_STEP).unwrap();
        assert!((j[(0, 0)] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn bad_step_and_non_finite() {
        assert!(numerical_jacobian(|x| Ok(x.to_vec()), &[1.0], 0.0).is_err());
        let r = numerical_jacobian(|x| Ok(vec![if x[0] > 0.0 { f64::INFINITY } else { 0.0 }]), &[0.0], 1e-3);
        assert!(matches!(r, Err(Error::Domain(_))));
    }
}

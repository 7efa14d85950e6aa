//! Power normalization: MaxExp, MaxExp(F), the tensor shrinkage operator and
//! SigmE.
//!
//! The tensor shrinkage operator (TSO) maps a trace-normalized descriptor `M`
//! of order `r` to `I_r - (I_r - M)^eta`, where the power is a chain of mode
//! contractions. For `r = 2` this is MaxExp(F), whose eigenvalue map is
//! `1 - (1 - lambda)^eta`; as `eta` grows the output is pulled toward the
//! identity, i.e. the signal is pushed back onto the super-diagonal.
//!
//! Even orders contract `r/2` modes per product and use exponentiation by
//! squaring. Odd orders alternate `floor(r/2)` and `ceil(r/2)` mode
//! contractions, cubing per step, so the fast odd path reaches only
//! `eta = 3^k`.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::{check_capacity, contract, contract_by_index, identity_tensor, super_diagonal, DenseTensor};
use crate::EPSILON;

/// Below this, asymmetry is treated as exact symmetry.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Above this, asymmetry is an error rather than drift to be averaged out.
pub const SYMMETRY_REPAIR_LIMIT: f64 = 1e-6;
/// Most negative eigenvalue tolerated in a "PSD" input.
pub const PSD_TOL: f64 = 1e-8;

/// An l1-normalized, non-negative spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumVector {
    values: Vec<f64>,
    normalized: bool,
}

impl SpectrumVector {
    /// `lambda_i / (eps + sum lambda)`. Tiny negative round-off (>= -1e-12) is
    /// clamped to zero.
    pub fn l1_normalized(raw: &[f64]) -> Result<Self> {
        if raw.is_empty() {
            return invalid("spectrum must be non-empty");
        }
        if let Some(v) = raw.iter().find(|v| !v.is_finite() || **v < -1e-12) {
            return Err(Error::Domain(format!("spectrum entry {v} is negative or non-finite")));
        }
        let clamped: Vec<f64> = raw.iter().map(|v| v.max(0.0)).collect();
        let total: f64 = clamped.iter().sum();
        Ok(Self {
            values: clamped.iter().map(|v| v / (EPSILON + total)).collect(),
            normalized: true,
        })
    }

    /// Accept values that are already normalized.
    pub fn from_normalized(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return invalid("spectrum must be non-empty");
        }
        let total: f64 = values.iter().sum();
        if values.iter().any(|v| !v.is_finite() || *v < -1e-12) || total > 1.0 + 1e-9 {
            return Err(Error::Domain(format!(
                "not an l1-normalized spectrum (sum {total})"
            )));
        }
        Ok(Self { values, normalized: true })
    }

    /// Raw values, no normalization claim.
    pub fn unnormalized(values: Vec<f64>) -> Self {
        Self { values, normalized: false }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// The eta actually used for one order, and what was asked for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EtaChoice {
    pub order: usize,
    pub requested: u32,
    pub used: u32,
}

impl EtaChoice {
    pub fn substituted(&self) -> bool {
        self.requested != self.used
    }
}

/// TSO and SigmE parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsoParams {
    pub eta2: u32,
    pub eta3: u32,
    pub eta4: u32,
    /// SigmE slope, shared by all orders.
    pub eta_prime: f64,
    /// Map a non-power-of-3 odd-order eta to the nearest power of 3 instead
    /// of failing.
    pub round_odd_eta: bool,
}

impl Default for TsoParams {
    fn default() -> Self {
        Self {
            eta2: 7,
            eta3: 9,
            eta4: 7,
            eta_prime: 200.0,
            round_odd_eta: false,
        }
    }
}

impl TsoParams {
    /// Same eta for every order.
    pub fn uniform(eta: u32, eta_prime: f64) -> Self {
        Self {
            eta2: eta,
            eta3: eta,
            eta4: eta,
            eta_prime,
            round_odd_eta: false,
        }
    }

    pub fn with_odd_rounding(mut self, on: bool) -> Self {
        self.round_odd_eta = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta_prime.is_finite() && self.eta_prime >= 1.0) {
            return invalid(format!("eta_prime must be >= 1, got {}", self.eta_prime));
        }
        for order in 2..=4 {
            self.eta_for(order)?;
        }
        Ok(())
    }

    pub fn requested_eta(&self, order: usize) -> Result<u32> {
        match order {
            2 => Ok(self.eta2),
            3 => Ok(self.eta3),
            4 => Ok(self.eta4),
            _ => invalid(format!("no eta configured for order {order}")),
        }
    }

    /// Resolve the eta for `order`, applying odd-order rounding when enabled.
    pub fn eta_for(&self, order: usize) -> Result<EtaChoice> {
        let requested = self.requested_eta(order)?;
        if requested == 0 {
            return invalid(format!("eta for order {order} must be >= 1"));
        }
        let used = if order % 2 == 1 && !is_power_of_three(requested) {
            let nearest = nearest_power_of_three(requested);
            if !self.round_odd_eta {
                return Err(Error::InvalidOddEta { requested, nearest });
            }
            nearest
        } else {
            requested
        };
        Ok(EtaChoice { order, requested, used })
    }

    /// Flat `key=value` lines.
    pub fn to_config_string(&self) -> String {
        format!(
            "eta2={}\neta3={}\neta4={}\neta_prime={}\nround_odd_eta={}\n",
            self.eta2, self.eta3, self.eta4, self.eta_prime, self.round_odd_eta
        )
    }
}

impl fmt::Display for TsoParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_config_string())
    }
}

impl FromStr for TsoParams {
    type Err = Error;

    /// Parse `key=value` lines; unspecified keys keep their defaults. Blank
    /// lines and `#` comments are skipped.
    fn from_str(text: &str) -> Result<Self> {
        let mut p = Self::default();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let start = offset;
            offset += line.len();
            let body = line.trim();
            if body.is_empty() || body.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse { offset: start, message };
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected key=value, got {body:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let int = |v: &str| v.parse::<u32>().map_err(|e| parse_err(format!("{key}: {e}")));
            match key {
                "eta" => {
                    let eta = int(value)?;
                    p.eta2 = eta;
                    p.eta3 = eta;
                    p.eta4 = eta;
                }
                "eta2" => p.eta2 = int(value)?,
                "eta3" => p.eta3 = int(value)?,
                "eta4" => p.eta4 = int(value)?,
                "eta_prime" => {
                    p.eta_prime = value.parse().map_err(|e| parse_err(format!("eta_prime: {e}")))?
                }
                "round_odd_eta" => {
                    p.round_odd_eta =
                        value.parse().map_err(|e| parse_err(format!("round_odd_eta: {e}")))?
                }
                other => return Err(parse_err(format!("unknown key {other:?}"))),
            }
        }
        Ok(p)
    }
}

pub fn is_power_of_three(mut n: u32) -> bool {
    if n == 0 {
        return false;
    }
    while n.is_multiple_of(3) {
        n /= 3;
    }
    n == 1
}

/// Closest `3^k` to `n`; ties go up.
pub fn nearest_power_of_three(n: u32) -> u32 {
    let mut lo: u32 = 1;
    while let Some(next) = lo.checked_mul(3) {
        if next > n {
            let hi = next;
            return if n - lo < hi - n { lo } else { hi };
        }
        lo = next;
    }
    lo
}

/// `1 - (1 - lambda)^eta`.
pub fn maxexp_scalar(lambda: f64, eta: u32) -> Result<f64> {
    if !(-1e-12..=1.0 + 1e-12).contains(&lambda) {
        return Err(Error::Domain(format!("lambda {lambda} outside [0, 1]")));
    }
    if eta == 0 {
        return invalid("eta must be >= 1");
    }
    let lambda = lambda.clamp(0.0, 1.0);
    Ok(1.0 - (1.0 - lambda).powi(eta as i32))
}

/// `2 / (1 + exp(-eta' p)) - 1`, an odd saturating map onto (-1, 1).
pub fn sigme(p: f64, eta_prime: f64) -> f64 {
    2.0 / (1.0 + (-eta_prime * p).exp()) - 1.0
}

fn matrix_asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).abs().max()
}

fn symmetric_eigen_checked(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return invalid(format!("expected a non-empty square matrix, got {}x{}", m.nrows(), m.ncols()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return invalid("matrix contains non-finite values");
    }
    let asym = matrix_asymmetry(m);
    if asym > SYMMETRY_TOL {
        return Err(Error::Domain(format!("matrix is not symmetric (max asymmetry {asym:e})")));
    }
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.min();
    if min < -PSD_TOL {
        return Err(Error::Domain(format!("matrix is not PSD (eigenvalue {min:e})")));
    }
    Ok(eig)
}

/// `I - (I - m)^eta` for a symmetric PSD, trace-normalized matrix.
pub fn maxexp_f(m: &DMatrix<f64>, eta: u32) -> Result<DMatrix<f64>> {
    symmetric_eigen_checked(m)?;
    let trace = m.trace();
    if trace > 1.0 + 1e-9 {
        return Err(Error::Domain(format!("matrix trace {trace} exceeds 1; trace-normalize first")));
    }
    let t = DenseTensor::from_matrix(m)?;
    tso_fast_even(&t, eta)?.to_matrix()
}

/// Symmetric PSD square root via eigendecomposition.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = symmetric_eigen_checked(m)?;
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let u = &eig.eigenvectors;
    Ok(u * DMatrix::from_diagonal(&roots) * u.transpose())
}

/// `diag(sqrtm(m))`, the classical approximation of `diag(I - (I - m)^eta)`.
pub fn sqrtm_diag_approx(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let eig = symmetric_eigen_checked(m)?;
    let u = &eig.eigenvectors;
    let roots: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).collect();
    Ok((0..m.nrows())
        .map(|i| (0..m.ncols()).map(|k| u[(i, k)] * u[(i, k)] * roots[k]).sum())
        .collect())
}

/// Normalized eigenvalue spectrum of a PSD matrix.
pub fn spectrum(m: &DMatrix<f64>) -> Result<SpectrumVector> {
    let eig = symmetric_eigen_checked(m)?;
    let raw: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0)).collect();
    SpectrumVector::l1_normalized(&raw)
}

/// `base^eta` under the balanced `r/2`-mode contraction, by binary
/// exponentiation. Returns the power and the number of contractions, which is
/// `floor(log2 eta) + popcount(eta) - 1`.
pub fn even_power_by_squaring(base: &DenseTensor, eta: u32) -> Result<(DenseTensor, usize)> {
    if !base.order().is_multiple_of(2) {
        return invalid(format!("even power needs an even order, got {}", base.order()));
    }
    if eta == 0 {
        return invalid("eta must be >= 1");
    }
    let k = base.order() / 2;
    let mut n = eta;
    let mut square = base.clone();
    let mut acc: Option<DenseTensor> = None;
    let mut contractions = 0;
    while n != 0 {
        if n & 1 == 1 {
            acc = Some(match acc {
                Some(g) => {
                    contractions += 1;
                    contract(&g, &square, k)?
                }
                None => square.clone(),
            });
            n -= 1;
        }
        n /= 2;
        if n > 0 {
            square = contract(&square, &square, k)?;
            contractions += 1;
        }
    }
    Ok((acc.expect("eta >= 1 sets at least one bit"), contractions))
}

/// `base^eta` by `eta - 1` successive contractions.
pub fn even_power_naive(base: &DenseTensor, eta: u32) -> Result<(DenseTensor, usize)> {
    if !base.order().is_multiple_of(2) {
        return invalid(format!("even power needs an even order, got {}", base.order()));
    }
    if eta == 0 {
        return invalid("eta must be >= 1");
    }
    let k = base.order() / 2;
    let mut acc = base.clone();
    for _ in 1..eta {
        acc = contract(&acc, base, k)?;
    }
    Ok((acc, (eta - 1) as usize))
}

type Contraction = fn(&DenseTensor, &DenseTensor, usize) -> Result<DenseTensor>;

/// One odd-order step: `X x_{floor(r/2)} X x_{ceil(r/2)} X`.
fn odd_step(x: &DenseTensor, contraction: Contraction) -> Result<DenseTensor> {
    let lo = x.order() / 2;
    let hi = x.order() - lo;
    let y = contraction(x, x, lo)?;
    contraction(&y, x, hi)
}

fn odd_power(base: &DenseTensor, eta: u32, contraction: Contraction) -> Result<(DenseTensor, usize)> {
    if base.order() % 2 != 1 {
        return invalid(format!("odd power needs an odd order, got {}", base.order()));
    }
    if !is_power_of_three(eta) {
        return Err(Error::InvalidOddEta {
            requested: eta,
            nearest: nearest_power_of_three(eta.max(1)),
        });
    }
    let mut n = eta;
    let mut m = base.clone();
    let mut contractions = 0;
    while n != 0 {
        n /= 3;
        if n > 0 {
            m = odd_step(&m, contraction)?;
            contractions += 2;
        }
    }
    Ok((m, contractions))
}

/// Odd-order chain power via blocked contractions.
pub fn odd_power_fast(base: &DenseTensor, eta: u32) -> Result<(DenseTensor, usize)> {
    odd_power(base, eta, contract)
}

/// Odd-order chain power, each step evaluated by explicit index summation.
pub fn odd_power_naive(base: &DenseTensor, eta: u32) -> Result<(DenseTensor, usize)> {
    odd_power(base, eta, contract_by_index)
}

fn shrink_with(
    t: &DenseTensor,
    eta: u32,
    power: impl FnOnce(&DenseTensor, u32) -> Result<(DenseTensor, usize)>,
) -> Result<(DenseTensor, usize)> {
    let identity = identity_tensor(t.dim(), t.order())?;
    let complement = identity.sub(t)?;
    let (g, count) = power(&complement, eta)?;
    Ok((identity.sub(&g)?, count))
}

/// Even-order TSO with exponentiation by squaring.
pub fn tso_fast_even(t: &DenseTensor, eta: u32) -> Result<DenseTensor> {
    tso_fast_even_counted(t, eta).map(|(out, _)| out)
}

pub fn tso_fast_even_counted(t: &DenseTensor, eta: u32) -> Result<(DenseTensor, usize)> {
    if !t.order().is_multiple_of(2) || t.order() < 2 {
        return invalid(format!("fast even TSO needs an even order >= 2, got {}", t.order()));
    }
    shrink_with(t, eta, even_power_by_squaring)
}

/// Odd-order TSO; `eta` must be a power of 3.
pub fn tso_fast_odd(t: &DenseTensor, eta: u32) -> Result<DenseTensor> {
    tso_fast_odd_counted(t, eta).map(|(out, _)| out)
}

pub fn tso_fast_odd_counted(t: &DenseTensor, eta: u32) -> Result<(DenseTensor, usize)> {
    if t.order() % 2 != 1 || t.order() < 3 {
        return invalid(format!("fast odd TSO needs an odd order >= 3, got {}", t.order()));
    }
    shrink_with(t, eta, odd_power_fast)
}

/// Reference TSO: `eta - 1` successive contractions for even orders, the
/// index-summation chain for odd orders.
pub fn tso_naive(t: &DenseTensor, eta: u32) -> Result<DenseTensor> {
    tso_naive_counted(t, eta).map(|(out, _)| out)
}

pub fn tso_naive_counted(t: &DenseTensor, eta: u32) -> Result<(DenseTensor, usize)> {
    if t.order() < 2 {
        return invalid("TSO needs order >= 2");
    }
    if t.order().is_multiple_of(2) {
        shrink_with(t, eta, even_power_naive)
    } else {
        shrink_with(t, eta, odd_power_naive)
    }
}

/// Accept exact symmetry, average out small drift, reject the rest.
pub fn prepare_symmetric(t: &DenseTensor) -> Result<Cow<'_, DenseTensor>> {
    let asym = t.max_asymmetry();
    if asym <= SYMMETRY_TOL {
        Ok(Cow::Borrowed(t))
    } else if asym < SYMMETRY_REPAIR_LIMIT {
        Ok(Cow::Owned(t.symmetrized()))
    } else {
        Err(Error::Domain(format!(
            "tensor is not super-symmetric (max asymmetry {asym:e})"
        )))
    }
}

/// `I_r - (I_r - t)^eta` for a super-symmetric, normalized descriptor.
pub fn tso(t: &DenseTensor, eta: u32) -> Result<DenseTensor> {
    if t.order() < 2 {
        return invalid(format!("TSO needs order >= 2, got {}", t.order()));
    }
    check_capacity(t.order(), t.dim())?;
    let t = prepare_symmetric(t)?;
    if t.order() % 2 == 0 {
        tso_fast_even(&t, eta)
    } else {
        tso_fast_odd(&t, eta)
    }
}

/// `SigmE(diag(TSO(t; eta_r)); eta')`.
pub fn extract_representation(t: &DenseTensor, params: &TsoParams) -> Result<Vec<f64>> {
    let choice = params.eta_for(t.order())?;
    let shrunk = tso(t, choice.used)?;
    Ok(super_diagonal(&shrunk)
        .values()
        .iter()
        .map(|&p| sigme(p, params.eta_prime))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::outer_power;

    #[test]
    fn maxexp_scalar_examples() {
        assert!((maxexp_scalar(0.3, 1).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(maxexp_scalar(0.5, 2).unwrap(), 0.75);
        assert!((maxexp_scalar(0.2, 7).unwrap() - 0.7902848).abs() < 1e-15);
        assert!(matches!(maxexp_scalar(1.1, 2), Err(Error::Domain(_))));
        assert!(matches!(maxexp_scalar(-0.01, 2), Err(Error::Domain(_))));
        assert!(maxexp_scalar(1.0 + 1e-13, 2).is_ok());
    }

    #[test]
    fn maxexp_scalar_is_monotone() {
        let grid: Vec<f64> = (0..=50).map(|i| i as f64 / 50.0).collect();
        for eta in 1..12 {
            for w in grid.windows(2) {
                assert!(maxexp_scalar(w[0], eta).unwrap() <= maxexp_scalar(w[1], eta).unwrap());
            }
            for &l in &grid {
                assert!(maxexp_scalar(l, eta).unwrap() <= maxexp_scalar(l, eta + 1).unwrap());
            }
        }
    }

    #[test]
    fn maxexp_f_examples() {
        let m = DMatrix::identity(2, 2) * 0.5;
        let out = maxexp_f(&m, 2).unwrap();
        assert!((out - DMatrix::identity(2, 2) * 0.75).abs().max() < 1e-15);

        let m = DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, 0.5]);
        assert!((maxexp_f(&m, 1).unwrap() - &m).abs().max() < 1e-15);
    }

    #[test]
    fn maxexp_f_rejects_bad_input() {
        let not_psd = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, -0.1]);
        assert!(matches!(maxexp_f(&not_psd, 2), Err(Error::Domain(_))));
        let asym = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.2]);
        assert!(matches!(maxexp_f(&asym, 2), Err(Error::Domain(_))));
        let big = DMatrix::identity(2, 2);
        assert!(matches!(maxexp_f(&big, 2), Err(Error::Domain(_))));
    }

    #[test]
    fn tso_trivial_cases() {
        let f = crate::FeatureMatrix::from_columns(&[vec![0.2, 0.4, 0.1], vec![0.3, -0.1, 0.5]]).unwrap();
        for r in 2..=4 {
            let t = crate::descriptors::normalized_hotd(&f, r).unwrap();
            let out = tso(&t, 1).unwrap();
            assert!(out.max_abs_diff(&t).unwrap() <= 1e-14);
            let z = DenseTensor::zeros(r, 3).unwrap();
            let eta = if r % 2 == 1 { 9 } else { 8 };
            assert_eq!(tso(&z, eta).unwrap().max_abs(), 0.0);
        }
    }

    #[test]
    fn fast_even_contraction_counts() {
        let t = DenseTensor::from_matrix(&(DMatrix::identity(3, 3) * 0.2)).unwrap();
        let expected = |eta: u32| (31 - eta.leading_zeros()) as usize + eta.count_ones() as usize - 1;
        for eta in 1..=70 {
            let (_, count) = tso_fast_even_counted(&t, eta).unwrap();
            assert_eq!(count, expected(eta), "eta={eta}");
        }
        assert_eq!(tso_fast_even_counted(&t, 5).unwrap().1, 3);
        assert_eq!(tso_fast_even_counted(&t, 7).unwrap().1, 4);
        assert_eq!(tso_naive_counted(&t, 7).unwrap().1, 6);
    }

    #[test]
    fn odd_eta_rules() {
        let t = outer_power(&[0.6, 0.8], 3).unwrap().scaled(0.5);
        match tso_fast_odd(&t, 7) {
            Err(Error::InvalidOddEta { requested: 7, nearest: 9 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(tso_fast_odd(&t, 1).unwrap().max_abs_diff(&t).unwrap() <= 1e-15);
        assert!(tso_fast_even(&t, 2).is_err());
        assert_eq!(tso_fast_odd_counted(&t, 27).unwrap().1, 6);
    }

    #[test]
    fn power_of_three_helpers() {
        assert!(is_power_of_three(1) && is_power_of_three(27) && !is_power_of_three(7));
        assert!(!is_power_of_three(0));
        assert_eq!(nearest_power_of_three(7), 9);
        assert_eq!(nearest_power_of_three(5), 3);
        assert_eq!(nearest_power_of_three(6), 9);
        assert_eq!(nearest_power_of_three(2), 3);
        assert_eq!(nearest_power_of_three(20), 27);
    }

    #[test]
    fn params_resolve_and_round() {
        let strict = TsoParams::uniform(7, 200.0);
        assert!(matches!(strict.eta_for(3), Err(Error::InvalidOddEta { nearest: 9, .. })));
        let rounding = strict.clone().with_odd_rounding(true);
        let c = rounding.eta_for(3).unwrap();
        assert_eq!((c.requested, c.used), (7, 9));
        assert!(c.substituted());
        assert!(!rounding.eta_for(2).unwrap().substituted());
        assert!(TsoParams::default().validate().is_ok());
    }

    #[test]
    fn params_config_text() {
        let p: TsoParams = "eta2=7\neta3=9\neta_prime=200\n".parse().unwrap();
        assert_eq!((p.eta2, p.eta3, p.eta_prime), (7, 9, 200.0));
        let back: TsoParams = p.to_config_string().parse().unwrap();
        assert_eq!(back, p);
        match "eta2=7\nbogus\n".parse::<TsoParams>() {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 7),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sigme_examples() {
        assert_eq!(sigme(0.0, 200.0), 0.0);
        assert!(sigme(1.0, 200.0) > 1.0 - 1e-12);
        assert!((sigme(0.005, 200.0) - 0.5f64.tanh()).abs() < 1e-15);
        assert!((sigme(0.005, 200.0) - 0.462117).abs() < 1e-6);
        assert!((sigme(0.01, 200.0) - (2.0 / (1.0 + (-2.0f64).exp()) - 1.0)).abs() < 1e-15);
        for p in [-2.0, -0.1, 0.03, 0.7] {
            assert!((sigme(p, 5.0) + sigme(-p, 5.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn extract_representation_examples() {
        let p = TsoParams::default();
        let z = DenseTensor::zeros(2, 4).unwrap();
        assert_eq!(extract_representation(&z, &p).unwrap(), vec![0.0; 4]);

        let m = DenseTensor::from_vec(2, 2, vec![0.6, 0.0, 0.0, 0.4]).unwrap();
        let p = TsoParams { eta2: 2, eta_prime: 1.0, ..TsoParams::default() };
        let psi = extract_representation(&m, &p).unwrap();
        assert!((psi[0] - sigme(0.84, 1.0)).abs() < 1e-15);
        assert!((psi[1] - sigme(0.64, 1.0)).abs() < 1e-15);
    }

    #[test]
    fn sqrtm_examples() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(sqrtm_diag_approx(&id).unwrap(), vec![1.0; 3]);
        let m = DMatrix::from_row_slice(2, 2, &[0.25, 0.0, 0.0, 1.0]);
        let d = sqrtm_diag_approx(&m).unwrap();
        assert!((d[0] - 0.5).abs() < 1e-15 && (d[1] - 1.0).abs() < 1e-15);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-6]);
        assert!(sqrtm_diag_approx(&bad).is_err());
    }

    #[test]
    fn symmetry_repair_and_rejection() {
        let base = outer_power(&[0.3, 0.5], 2).unwrap();
        let mut data = base.data().to_vec();
        data[1] += 1e-8;
        let drift = DenseTensor::from_vec(2, 2, data.clone()).unwrap();
        assert!(matches!(prepare_symmetric(&drift).unwrap(), Cow::Owned(_)));
        data[1] += 1e-3;
        let skewed = DenseTensor::from_vec(2, 2, data).unwrap();
        assert!(matches!(tso(&skewed, 2), Err(Error::Domain(_))));
        assert!(matches!(prepare_symmetric(&base).unwrap(), Cow::Borrowed(_)));
    }

    #[test]
    fn spectrum_normalization() {
        let s = SpectrumVector::l1_normalized(&[2.0, 1.0, 1.0]).unwrap();
        assert!(s.is_normalized());
        assert!((s.values()[0] - 2.0 / (4.0 + 1e-6)).abs() < 1e-15);
        assert!(SpectrumVector::l1_normalized(&[1.0, -0.1]).is_err());
        assert!(SpectrumVector::from_normalized(vec![0.7, 0.7]).is_err());
    }
}

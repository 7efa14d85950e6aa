//! MaxExp as a shrinkage estimator.
//!
//! For an l1-normalized spectrum `lambda` (length `d`) and integer `eta >= 2`
//! define the complements
//!
//! ```text
//! lambda°  = (1 - lambda)  / s,   s = d - 1
//! lambda°' = (1 - lambda') / t,   t = d - sum_i g(lambda_i; eta)
//! ```
//!
//! and the objective
//!
//! ```text
//! f(lambda') = KL(lambda° || lambda°') + delta / (alpha - 1) * (1 - sum_i (lambda°'_i)^alpha)
//! ```
//!
//! with `alpha = 1/eta` and `delta = eta t^(1/eta) / s * (1 - 1/eta)`. Setting
//! the gradient to zero gives
//! `lambda'_i = 1 - t (eta/(delta s))^eta (1 - 1/eta)^eta (1 - lambda_i)^eta`,
//! which for this `delta` collapses to `1 - (1 - lambda_i)^eta`. This module
//! evaluates `f`, its gradient, the closed form, and checks numerically that
//! the closed form is the minimizer and that the shrinkage target is the
//! identity.
//!
//! Candidates close to 1 are handled through their complements `1 - lambda'`
//! so that values such as `1 - 1e-40` stay representable.

use std::fmt;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::tso::{maxexp_f, maxexp_scalar, SpectrumVector};

/// Spectrum entries are clamped to at most this before taking complements.
pub const DEGENERATE_CLAMP: f64 = 1.0 - 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct ShrinkageProblem {
    lambda: Vec<f64>,
    eta: u32,
    s: f64,
    t_prime: f64,
    t: f64,
    alpha: f64,
    delta: f64,
}

impl ShrinkageProblem {
    pub fn new(spectrum: &SpectrumVector, eta: u32) -> Result<Self> {
        let d = spectrum.len();
        if d < 2 {
            return invalid(format!("shrinkage problem needs d >= 2, got {d}"));
        }
        if eta < 2 {
            return invalid(format!("shrinkage problem needs eta >= 2, got {eta}"));
        }
        if !spectrum.is_normalized() {
            return invalid("spectrum must be l1-normalized");
        }
        let lambda: Vec<f64> = spectrum
            .values()
            .iter()
            .map(|&l| l.clamp(0.0, DEGENERATE_CLAMP))
            .collect();
        let t_prime = lambda
            .iter()
            .map(|&l| maxexp_scalar(l, eta))
            .sum::<Result<f64>>()?;
        // t = sum (1 - lambda_i)^eta, computed directly rather than as d - t'.
        let t: f64 = lambda.iter().map(|&l| (1.0 - l).powi(eta as i32)).sum();
        let s = (d - 1) as f64;
        let eta_f = eta as f64;
        let delta = eta_f * t.powf(1.0 / eta_f) / s * (1.0 - 1.0 / eta_f);
        if !(t > 0.0 && delta > 0.0) {
            return Err(Error::Domain(format!("degenerate problem: t={t}, delta={delta}")));
        }
        Ok(Self {
            lambda,
            eta,
            s,
            t_prime,
            t,
            alpha: 1.0 / eta_f,
            delta,
        })
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn eta(&self) -> u32 {
        self.eta
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn t_prime(&self) -> f64 {
        self.t_prime
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `(1 - lambda) / s`.
    pub fn complement(&self) -> Vec<f64> {
        self.lambda.iter().map(|l| (1.0 - l) / self.s).collect()
    }

    /// Objective in terms of `c = 1 - lambda'`.
    pub fn objective_from_complement(&self, c: &[f64]) -> Result<f64> {
        self.check_len(c.len())?;
        if let Some(v) = c.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return Err(Error::Domain(format!(
                "lambda' complement {v} outside (0, 1]; lambda' must lie in [0, 1)"
            )));
        }
        let mut kl = 0.0;
        let mut power_sum = 0.0;
        for (&p, &ci) in self.complement().iter().zip(c) {
            let u = ci / self.t;
            if p > 0.0 {
                kl += p * (p.ln() - u.ln());
            }
            power_sum += u.powf(self.alpha);
        }
        Ok(kl + self.delta / (self.alpha - 1.0) * (1.0 - power_sum))
    }

    /// Each term of the gradient w.r.t. `lambda'`, as
    /// `(kl_part, tsallis_part)`; the gradient is their sum.
    fn gradient_terms(&self, c: &[f64]) -> Vec<(f64, f64)> {
        self.complement()
            .iter()
            .zip(c)
            .map(|(&p, &ci)| {
                let u = ci / self.t;
                let kl = p / (self.t * u);
                let ts = self.delta * self.alpha / (self.alpha - 1.0) * u.powf(self.alpha - 1.0) / self.t;
                (kl, ts)
            })
            .collect()
    }

    /// Gradient w.r.t. `lambda'`, evaluated at `c = 1 - lambda'`.
    pub fn gradient_from_complement(&self, c: &[f64]) -> Result<Vec<f64>> {
        self.objective_from_complement(c)?;
        Ok(self.gradient_terms(c).into_iter().map(|(a, b)| a + b).collect())
    }

    /// `max_i |df/dlambda'_i| / max(1, |kl_i| + |tsallis_i|)`: the gradient
    /// measured against the size of the two terms that cancel in it.
    pub fn relative_stationarity(&self, c: &[f64]) -> Result<f64> {
        self.objective_from_complement(c)?;
        Ok(self
            .gradient_terms(c)
            .into_iter()
            .map(|(a, b)| (a + b).abs() / (a.abs() + b.abs()).max(1.0))
            .fold(0.0, f64::max))
    }

    /// Gradient w.r.t. the logits `z` of `lambda' = sigmoid(z)`.
    fn logit_gradient(&self, z: &[f64]) -> Vec<f64> {
        self.complement()
            .iter()
            .zip(z)
            .map(|(&p, &zi)| {
                let lp = sigmoid(zi);
                let u = sigmoid(-zi) / self.t;
                lp * (p - self.delta / (1.0 / self.alpha - 1.0) * u.powf(self.alpha))
            })
            .collect()
    }

    fn logit_objective(&self, z: &[f64]) -> f64 {
        let c: Vec<f64> = z.iter().map(|&zi| sigmoid(-zi)).collect();
        self.objective_from_complement(&c).unwrap_or(f64::INFINITY)
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return invalid(format!("expected {} entries, got {n}", self.dim()));
        }
        Ok(())
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn complement_of(lambda_prime: &[f64]) -> Result<Vec<f64>> {
    if let Some(v) = lambda_prime.iter().find(|v| !(**v >= 0.0 && **v < 1.0)) {
        return Err(Error::Domain(format!("lambda' entry {v} outside [0, 1)")));
    }
    Ok(lambda_prime.iter().map(|l| 1.0 - l).collect())
}

/// KL divergence between the complements plus the delta-weighted Tsallis
/// entropy of the candidate's complement.
pub fn objective(prob: &ShrinkageProblem, lambda_prime: &[f64]) -> Result<f64> {
    prob.objective_from_complement(&complement_of(lambda_prime)?)
}

pub fn objective_gradient(prob: &ShrinkageProblem, lambda_prime: &[f64]) -> Result<Vec<f64>> {
    prob.gradient_from_complement(&complement_of(lambda_prime)?)
}

/// `1 - lambda'_i` at the stationary point, from the general formula (before
/// substituting the theorem's delta).
pub fn closed_form_complement(prob: &ShrinkageProblem) -> Vec<f64> {
    let eta = prob.eta as f64;
    let scale = prob.t * (eta / (prob.delta * prob.s)).powf(eta) * (1.0 - 1.0 / eta).powf(eta);
    prob.lambda
        .iter()
        .map(|&l| scale * (1.0 - l).powi(prob.eta as i32))
        .collect()
}

/// `lambda'_i = 1 - t (eta/(delta s))^eta (1 - 1/eta)^eta (1 - lambda_i)^eta`.
pub fn closed_form_minimizer(prob: &ShrinkageProblem) -> Vec<f64> {
    closed_form_complement(prob).iter().map(|c| 1.0 - c).collect()
}

#[derive(Clone, Debug)]
pub struct Theorem1Options {
    /// Random interior starting points (at least 8).
    pub starts: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop when the logit-space gradient falls below this.
    pub grad_tol: f64,
}

impl Default for Theorem1Options {
    fn default() -> Self {
        Self {
            starts: 8,
            seed: 0x5eed,
            max_iter: 2000,
            grad_tol: 1e-12,
        }
    }
}

pub const THEOREM1_DISTANCE_TOL: f64 = 1e-4;
pub const THEOREM1_STATIONARITY_TOL: f64 = 1e-6;
pub const THEOREM1_OPTIMALITY_SLACK: f64 = 1e-8;

#[derive(Clone, Debug, Serialize)]
pub struct Theorem1Report {
    pub d: usize,
    pub eta: u32,
    pub closed_form: Vec<f64>,
    pub numerical: Vec<f64>,
    /// `||numerical - closed_form||_inf`.
    pub residual: f64,
    /// Relative stationarity at the closed form.
    pub stationarity: f64,
    /// Plain `max_i |df/dlambda'_i|` at the closed form.
    pub gradient_inf: f64,
    pub objective_closed: f64,
    pub objective_numerical: f64,
    pub converged_starts: usize,
    pub starts: usize,
    pub wall_time_ms: f64,
}

impl Theorem1Report {
    pub fn passed(&self) -> bool {
        self.converged_starts > 0
            && self.residual <= THEOREM1_DISTANCE_TOL
            && self.stationarity <= THEOREM1_STATIONARITY_TOL
            && self.objective_closed <= self.objective_numerical + THEOREM1_OPTIMALITY_SLACK
    }

    pub const CSV_HEADER: &'static str = "d,eta,residual,stationarity,wall_time_ms";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:e},{:e},{:.3}",
            self.d, self.eta, self.residual, self.stationarity, self.wall_time_ms
        )
    }
}

impl fmt::Display for Theorem1Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "theorem1 d={} eta={}", self.d, self.eta)?;
        writeln!(f, "  closed form      {:?}", self.closed_form)?;
        writeln!(f, "  numerical argmin {:?}", self.numerical)?;
        writeln!(f, "  residual (inf)   {:e}", self.residual)?;
        writeln!(f, "  stationarity     {:e} (|grad|_inf {:e})", self.stationarity, self.gradient_inf)?;
        writeln!(
            f,
            "  objective        closed {:.12} numerical {:.12}",
            self.objective_closed, self.objective_numerical
        )?;
        writeln!(f, "  converged starts {}/{}", self.converged_starts, self.starts)?;
        write!(f, "  status           {}", if self.passed() { "ok" } else { "FLAGGED" })
    }
}

struct BfgsOutcome {
    z: Vec<f64>,
    value: f64,
    converged: bool,
}

/// BFGS with Armijo backtracking on the logits of `lambda'`.
fn minimize_logits(prob: &ShrinkageProblem, start: Vec<f64>, opts: &Theorem1Options) -> BfgsOutcome {
    let n = start.len();
    let mut z = DVector::from_vec(start);
    let mut value = prob.logit_objective(z.as_slice());
    let mut grad = DVector::from_vec(prob.logit_gradient(z.as_slice()));
    let mut h = DMatrix::<f64>::identity(n, n);
    for _ in 0..opts.max_iter {
        if grad.amax() <= opts.grad_tol {
            return BfgsOutcome { z: z.as_slice().to_vec(), value, converged: true };
        }
        let mut dir = -(&h * &grad);
        let mut slope = grad.dot(&dir);
        if slope >= 0.0 {
            h = DMatrix::identity(n, n);
            dir = -grad.clone();
            slope = grad.dot(&dir);
        }
        let mut step = 1.0;
        let (next_z, next_value) = loop {
            let cand = &z + &dir * step;
            let v = prob.logit_objective(cand.as_slice());
            if v <= value + 1e-4 * step * slope {
                break (cand, v);
            }
            step *= 0.5;
            if step < 1e-20 {
                let converged = grad.amax() <= opts.grad_tol.sqrt();
                return BfgsOutcome { z: z.as_slice().to_vec(), value, converged };
            }
        };
        let next_grad = DVector::from_vec(prob.logit_gradient(next_z.as_slice()));
        let s = &next_z - &z;
        let y = &next_grad - &grad;
        let sy = s.dot(&y);
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(n, n);
            let left = &eye - &s * y.transpose() * rho;
            let right = &eye - &y * s.transpose() * rho;
            h = &left * &h * &right + &s * s.transpose() * rho;
        }
        z = next_z;
        value = next_value;
        grad = next_grad;
    }
    let converged = grad.amax() <= opts.grad_tol.sqrt();
    BfgsOutcome { z: z.as_slice().to_vec(), value, converged }
}

/// Numerically minimize the objective from random interior starts and
/// compare the best point with the closed form.
pub fn verify_theorem1(prob: &ShrinkageProblem, opts: &Theorem1Options) -> Result<Theorem1Report> {
    if !(2..=16).contains(&prob.dim()) || !(2..=32).contains(&prob.eta) {
        return invalid(format!(
            "theorem check supports d in [2,16], eta in [2,32]; got d={}, eta={}",
            prob.dim(),
            prob.eta
        ));
    }
    let started = Instant::now();
    let mut rng = rng::seeded(opts.seed);
    let mut best: Option<BfgsOutcome> = None;
    let mut converged_starts = 0;
    for _ in 0..opts.starts.max(8) {
        let start: Vec<f64> = (0..prob.dim())
            .map(|_| {
                let l: f64 = rng.random_range(0.05..0.95);
                (l / (1.0 - l)).ln()
            })
            .collect();
        let outcome = minimize_logits(prob, start, opts);
        if outcome.converged {
            converged_starts += 1;
        }
        if best.as_ref().is_none_or(|b| outcome.value < b.value) {
            best = Some(outcome);
        }
    }
    let best = best.expect("at least one start");
    let closed_c = closed_form_complement(prob);
    let closed_form: Vec<f64> = closed_c.iter().map(|c| 1.0 - c).collect();
    let numerical_c: Vec<f64> = best.z.iter().map(|&z| sigmoid(-z)).collect();
    let numerical: Vec<f64> = best.z.iter().map(|&z| sigmoid(z)).collect();
    // Compare complements: same distance, no cancellation near 1.
    let residual = closed_c
        .iter()
        .zip(&numerical_c)
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    let gradient_inf = prob
        .gradient_from_complement(&closed_c)?
        .iter()
        .fold(0.0_f64, |m, g| m.max(g.abs()));
    Ok(Theorem1Report {
        d: prob.dim(),
        eta: prob.eta,
        closed_form,
        numerical,
        residual,
        stationarity: prob.relative_stationarity(&closed_c)?,
        gradient_inf,
        objective_closed: prob.objective_from_complement(&closed_c)?,
        objective_numerical: prob.objective_from_complement(&numerical_c)?,
        converged_starts,
        starts: opts.starts.max(8),
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// Random l1-normalized spectrum of length `d` (normalized eigenvalues of a
/// random PSD matrix).
pub fn random_spectrum<R: Rng>(rng: &mut R, d: usize) -> Result<SpectrumVector> {
    let m = rng::trace_normalized_psd(rng, d, 0.0);
    crate::tso::spectrum(&m)
}

/// Problem over a random spectrum drawn from `seed`.
pub fn seeded_problem(d: usize, eta: u32, seed: u64) -> Result<ShrinkageProblem> {
    ShrinkageProblem::new(&random_spectrum(&mut rng::seeded(seed), d)?, eta)
}

pub const THEOREM2_LIMIT_TOL: f64 = 1e-6;
pub const ORTHOGONALITY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, Serialize)]
pub struct Theorem2Report {
    pub d: usize,
    pub trials: usize,
    pub etas: Vec<u32>,
    /// `max_trials ||maxexp_f(m, eta) - I||_inf` for each eta.
    pub max_deviation: Vec<f64>,
    /// Every trial's deviation sequence decreased across doublings.
    pub monotone: bool,
    pub orthogonality_residual: f64,
    pub wall_time_ms: f64,
}

impl Theorem2Report {
    pub fn final_deviation(&self) -> f64 {
        *self.max_deviation.last().unwrap_or(&f64::INFINITY)
    }

    pub fn passed(&self) -> bool {
        self.monotone
            && self.final_deviation() <= THEOREM2_LIMIT_TOL
            && self.orthogonality_residual <= ORTHOGONALITY_TOL
    }
}

impl fmt::Display for Theorem2Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "theorem2 d={} trials={}", self.d, self.trials)?;
        for (eta, dev) in self.etas.iter().zip(&self.max_deviation) {
            writeln!(f, "  eta={eta:<8} max |out - I| = {dev:e}")?;
        }
        writeln!(f, "  monotone        {}", self.monotone)?;
        writeln!(f, "  U U^T residual  {:e}", self.orthogonality_residual)?;
        write!(f, "  status          {}", if self.passed() { "ok" } else { "FLAGGED" })
    }
}

/// `eta = 2, 4, ..., 2^20`.
pub fn doubling_etas() -> Vec<u32> {
    (1..=20).map(|k| 1u32 << k).collect()
}

/// Non-increasing, and strictly decreasing while still positive (the
/// sequence may underflow to exactly zero).
pub fn strictly_decreasing_to_floor(seq: &[f64]) -> bool {
    seq.windows(2)
        .all(|w| w[1] <= w[0] && (w[0] == 0.0 || w[1] < w[0]))
}

/// Shrinkage target check: MaxExp(F) of random full-rank trace-normalized
/// matrices approaches the identity as eta doubles.
pub fn verify_theorem2(d: usize, trials: usize, seed: u64) -> Result<Theorem2Report> {
    if d < 2 {
        return invalid(format!("theorem 2 check needs d >= 2, got {d}"));
    }
    let started = Instant::now();
    let etas = doubling_etas();
    let mut rng = rng::seeded(seed);
    let mut max_deviation = vec![0.0_f64; etas.len()];
    let mut monotone = true;
    let mut orthogonality_residual = 0.0_f64;
    for _ in 0..trials {
        let m = rng::trace_normalized_psd(&mut rng, d, 1.0);
        let eig = SymmetricEigen::new(m.clone());
        let u = &eig.eigenvectors;
        let uut = u * u.transpose() - DMatrix::identity(d, d);
        orthogonality_residual = orthogonality_residual.max(uut.abs().max());
        let id = DMatrix::<f64>::identity(d, d);
        let devs = etas
            .iter()
            .map(|&eta| Ok((maxexp_f(&m, eta)? - &id).abs().max()))
            .collect::<Result<Vec<f64>>>()?;
        monotone &= strictly_decreasing_to_floor(&devs);
        for (slot, dev) in max_deviation.iter_mut().zip(&devs) {
            *slot = slot.max(*dev);
        }
    }
    Ok(Theorem2Report {
        d,
        trials,
        etas,
        max_deviation,
        monotone,
        orthogonality_residual,
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

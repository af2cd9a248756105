//! Gaussian orthant probabilities `Φ_d(Γ) = Pr{N_d(0, Γ) ∈ ℝ₊^d}`.
//!
//! Dimensions one to three use closed forms. Higher dimensions use Genz's
//! separation-of-variables transform integrated with a randomly shifted
//! Richtmyer lattice (tent-periodised, antithetic); the spread across
//! independent shifts gives the standard error.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{ChibarError, Result};
use crate::numkit::{cholesky, norm_cdf, norm_quantile, LowerTriangular, SymMatrix};
use crate::seed::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrthantMethod {
    Exact1,
    Exact2,
    Exact3,
    Qmc,
    Mc,
}

impl OrthantMethod {
    pub fn is_exact(self) -> bool {
        matches!(self, Self::Exact1 | Self::Exact2 | Self::Exact3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthantEstimate {
    pub value: f64,
    pub std_error: f64,
    pub method: OrthantMethod,
}

impl OrthantEstimate {
    fn exact(value: f64, method: OrthantMethod) -> Self {
        Self {
            value: value.clamp(0.0, 1.0),
            std_error: 0.0,
            method,
        }
    }
}

/// Lattice size cap, number of independent random shifts and the absolute
/// standard error at which integration stops early.
///
/// The lattice is extensible, so points are added in doublings from
/// [`QmcBudget::MIN_POINTS`] until the spread across shifts falls below
/// `abs_tol` or `points` is reached. `abs_tol = 0` always uses every point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QmcBudget {
    pub points: usize,
    pub randomizations: usize,
    pub abs_tol: f64,
}

impl Default for QmcBudget {
    fn default() -> Self {
        Self {
            points: 1 << 13,
            randomizations: 8,
            abs_tol: 1e-5,
        }
    }
}

impl QmcBudget {
    pub const MIN_POINTS: usize = 256;

    /// Fixed budget without early stopping.
    pub fn new(points: usize, randomizations: usize) -> Self {
        Self {
            points,
            randomizations,
            abs_tol: 0.0,
        }
    }

    pub fn with_tolerance(mut self, abs_tol: f64) -> Self {
        self.abs_tol = abs_tol;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.points == 0 || self.randomizations < 2 {
            return Err(ChibarError::InvalidInput(format!(
                "QMC budget needs at least one point and two randomizations, got {}x{}",
                self.points, self.randomizations
            )));
        }
        if self.abs_tol.is_nan() || self.abs_tol < 0.0 {
            return Err(ChibarError::InvalidInput(format!(
                "QMC tolerance must be nonnegative, got {}",
                self.abs_tol
            )));
        }
        Ok(())
    }
}

/// Orthant probability of `N(0, gamma)`; exact for `d ≤ 3`, randomised QMC
/// above. Deterministic in `(gamma, budget, seed)`.
pub fn orthant_prob(gamma: &SymMatrix, budget: QmcBudget, seed: u64) -> Result<OrthantEstimate> {
    let corr = correlation(gamma)?;
    match corr.dim() {
        1 => Ok(OrthantEstimate::exact(0.5, OrthantMethod::Exact1)),
        2 => Ok(OrthantEstimate::exact(
            0.25 + corr.get(0, 1).asin() / (2.0 * PI),
            OrthantMethod::Exact2,
        )),
        3 => {
            let s = corr.get(0, 1).asin() + corr.get(0, 2).asin() + corr.get(1, 2).asin();
            Ok(OrthantEstimate::exact(
                0.125 + s / (4.0 * PI),
                OrthantMethod::Exact3,
            ))
        }
        _ => qmc_on_correlation(&corr, budget, seed),
    }
}

/// Forces the QMC route in every dimension (the closed forms are bypassed).
pub fn orthant_prob_qmc(
    gamma: &SymMatrix,
    budget: QmcBudget,
    seed: u64,
) -> Result<OrthantEstimate> {
    let corr = correlation(gamma)?;
    qmc_on_correlation(&corr, budget, seed)
}

/// Plain Monte Carlo: fraction of `n` draws of `N(0, gamma)` that land in the
/// positive orthant.
pub fn orthant_prob_mc(gamma: &SymMatrix, n: usize, seed: u64) -> Result<OrthantEstimate> {
    if n < 1000 {
        return Err(ChibarError::InvalidInput(format!(
            "plain MC orthant estimate needs n >= 1000, got {n}"
        )));
    }
    let d = gamma.dim();
    if d == 0 {
        return Err(ChibarError::InvalidInput("empty covariance".into()));
    }
    let l = cholesky(gamma)?;
    let mut rng = substream(seed, 0);
    let mut g = vec![0.0; d];
    let mut hits = 0usize;
    for _ in 0..n {
        g.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
        let inside = (0..d).all(|i| (0..=i).map(|j| l.get(i, j) * g[j]).sum::<f64>() > 0.0);
        if inside {
            hits += 1;
        }
    }
    let p = hits as f64 / n as f64;
    Ok(OrthantEstimate {
        value: p,
        std_error: (p * (1.0 - p) / n as f64).sqrt(),
        method: OrthantMethod::Mc,
    })
}

fn correlation(gamma: &SymMatrix) -> Result<SymMatrix> {
    if gamma.dim() == 0 {
        return Err(ChibarError::InvalidInput("empty covariance".into()));
    }
    let corr = gamma.to_correlation()?;
    // PD check on the correlation matrix itself.
    cholesky(&corr)?;
    Ok(corr)
}

fn qmc_on_correlation(corr: &SymMatrix, budget: QmcBudget, seed: u64) -> Result<OrthantEstimate> {
    budget.validate()?;
    let d = corr.dim();
    if d == 1 {
        return Ok(OrthantEstimate {
            value: 0.5,
            std_error: 0.0,
            method: OrthantMethod::Qmc,
        });
    }
    let l = cholesky(corr)?;
    let generators = richtmyer_generators(d - 1);

    let shifts: Vec<Vec<f64>> = (0..budget.randomizations)
        .map(|r| {
            let mut rng = substream(seed, r as u64);
            (0..d - 1).map(|_| rng.random::<f64>()).collect()
        })
        .collect();
    let mut sums = vec![0.0; budget.randomizations];
    let mut w = vec![0.0; d - 1];
    let mut y = vec![0.0; d];
    let mut done = 0usize;
    let mut target = budget.points.min(QmcBudget::MIN_POINTS);
    loop {
        for (shift, acc) in shifts.iter().zip(sums.iter_mut()) {
            for k in (done + 1)..=target {
                let kf = k as f64;
                for i in 0..d - 1 {
                    let x = (kf * generators[i] + shift[i]).fract();
                    w[i] = (2.0 * x - 1.0).abs();
                }
                let f1 = genz_integrand(&l, &w, &mut y);
                w.iter_mut().for_each(|x| *x = 1.0 - *x);
                let f2 = genz_integrand(&l, &w, &mut y);
                *acc += 0.5 * (f1 + f2);
            }
        }
        done = target;
        let r = sums.len() as f64;
        let estimates = sums.iter().map(|s| s / done as f64);
        let mean = estimates.clone().sum::<f64>() / r;
        let var = estimates.map(|e| (e - mean).powi(2)).sum::<f64>() / (r - 1.0);
        let std_error = (var / r).sqrt();
        if std_error <= budget.abs_tol || done >= budget.points {
            return Ok(OrthantEstimate {
                value: mean.clamp(0.0, 1.0),
                std_error,
                method: OrthantMethod::Qmc,
            });
        }
        target = (2 * done).min(budget.points);
    }
}

/// Genz transform of `Pr{Y ≤ 0}`, `Y = L g`, which equals the positive
/// orthant probability by symmetry.
fn genz_integrand(l: &LowerTriangular, w: &[f64], y: &mut [f64]) -> f64 {
    let d = l.dim();
    let mut f = 1.0;
    for i in 0..d {
        let mut s = 0.0;
        for (j, yj) in y.iter().enumerate().take(i) {
            s += l.get(i, j) * yj;
        }
        let e = norm_cdf(-s / l.get(i, i));
        f *= e;
        if f == 0.0 {
            return 0.0;
        }
        if i + 1 < d {
            let u = (w[i] * e).clamp(1e-300, 1.0 - 1e-16);
            y[i] = norm_quantile(u);
        }
    }
    f
}

/// Fractional parts of square roots of the first `n` primes.
fn richtmyer_generators(n: usize) -> Vec<f64> {
    let mut primes = Vec::with_capacity(n);
    let mut candidate = 2u64;
    while primes.len() < n {
        if primes
            .iter()
            .take_while(|&&p| p * p <= candidate)
            .all(|&p| candidate % p != 0)
        {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes.iter().map(|&p| (p as f64).sqrt().fract()).collect()
}

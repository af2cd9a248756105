//! Covariance specifications and the random covariance generators used by
//! the validation suites.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ChibarError, Result};
use crate::numkit::{cholesky, min_eigenvalue, sym_eig, SymMatrix};
use crate::seed::substream;

/// Smallest eigenvalue allowed after repairing a random correlation matrix.
pub const EIGEN_FLOOR: f64 = 1e-3;
const MAX_ATTEMPTS: usize = 100;
const MAX_REPAIR_ROUNDS: usize = 200;

/// A positive-definite covariance `Σ = I(θ₀)⁻¹` of the limiting Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovSpec {
    pub sigma: SymMatrix,
    /// Set when `Σ` is an equicorrelation matrix.
    pub equicorr: Option<f64>,
    /// Number of random draws consumed by a generator, if any.
    pub attempts: Option<usize>,
}

impl CovSpec {
    pub fn new(sigma: SymMatrix) -> Result<Self> {
        if sigma.dim() == 0 {
            return Err(ChibarError::InvalidInput("empty covariance".into()));
        }
        cholesky(&sigma)?;
        Ok(Self {
            sigma,
            equicorr: None,
            attempts: None,
        })
    }

    pub fn identity(k: usize) -> Result<Self> {
        Self::new(SymMatrix::identity(k))
    }

    /// `Σ_ρ = (1 − ρ) I + ρ 11ᵀ`, requiring `−1/(K−1) < ρ < 1`.
    pub fn equicorrelation(k: usize, rho: f64) -> Result<Self> {
        let lower = if k > 1 {
            -1.0 / (k as f64 - 1.0)
        } else {
            f64::NEG_INFINITY
        };
        if !(rho > lower && rho < 1.0) {
            return Err(ChibarError::InvalidInput(format!(
                "equicorrelation ρ={rho} outside ({lower}, 1) for K={k}"
            )));
        }
        let mut spec = Self::new(SymMatrix::equicorrelation(k, rho))?;
        spec.equicorr = Some(rho);
        Ok(spec)
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.sigma.dim()
    }

    /// First strictly negative off-diagonal entry, if any.
    pub fn negative_entry(&self) -> Option<(usize, usize, f64)> {
        let k = self.k();
        (0..k)
            .flat_map(|i| ((i + 1)..k).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, self.sigma.get(i, j)))
            .find(|&(_, _, v)| v < 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovKind {
    Identity,
    Equicorr { rho: f64 },
    UniformRange { lo: f64, hi: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovGenSpec {
    pub kind: CovKind,
    pub k: usize,
}

impl CovGenSpec {
    pub fn identity(k: usize) -> Self {
        Self {
            kind: CovKind::Identity,
            k,
        }
    }

    pub fn equicorr(k: usize, rho: f64) -> Self {
        Self {
            kind: CovKind::Equicorr { rho },
            k,
        }
    }

    /// Correlations drawn from `[0, 0.5]`.
    pub fn mild(k: usize, seed: u64) -> Self {
        Self::uniform_range(k, 0.0, 0.5, seed)
    }

    /// Correlations drawn from `[0.5, 0.9]`.
    pub fn strong(k: usize, seed: u64) -> Self {
        Self::uniform_range(k, 0.5, 0.9, seed)
    }

    pub fn uniform_range(k: usize, lo: f64, hi: f64, seed: u64) -> Self {
        Self {
            kind: CovKind::UniformRange { lo, hi, seed },
            k,
        }
    }

    /// Short label in the command-line syntax (`identity`, `equicorr:0.5`,
    /// `mild:7`, `strong:7`, `uniform:LO:HI:SEED`).
    pub fn label(&self) -> String {
        match self.kind {
            CovKind::Identity => "identity".into(),
            CovKind::Equicorr { rho } => format!("equicorr:{rho}"),
            CovKind::UniformRange { lo, hi, seed } if lo == 0.0 && hi == 0.5 => {
                format!("mild:{seed}")
            }
            CovKind::UniformRange { lo, hi, seed } if lo == 0.5 && hi == 0.9 => {
                format!("strong:{seed}")
            }
            CovKind::UniformRange { lo, hi, seed } => format!("uniform:{lo}:{hi}:{seed}"),
        }
    }
}

/// Materialises a covariance from its generator description.
///
/// Uniform-range draws put independent `U[lo, hi]` correlations off the
/// diagonal. A draw that is not safely positive definite is repaired by
/// flooring eigenvalues at [`EIGEN_FLOOR`] and rescaling to unit diagonal,
/// repeated until both hold; a draw whose repaired correlations leave
/// `[0, hi]` is discarded and the next substream tried.
pub fn gen_covariance(spec: &CovGenSpec) -> Result<CovSpec> {
    let k = spec.k;
    if k == 0 {
        return Err(ChibarError::InvalidInput("K must be positive".into()));
    }
    match spec.kind {
        CovKind::Identity => CovSpec::identity(k),
        CovKind::Equicorr { rho } => {
            if rho < 0.0 {
                return Err(ChibarError::NegativeCorrelation {
                    row: 0,
                    col: 1,
                    value: rho,
                });
            }
            CovSpec::equicorrelation(k, rho)
        }
        CovKind::UniformRange { lo, hi, seed } => {
            if !(0.0 <= lo && lo <= hi && hi < 1.0) {
                return Err(ChibarError::InvalidInput(format!(
                    "uniform range requires 0 <= lo <= hi < 1, got [{lo}, {hi}]"
                )));
            }
            for attempt in 0..MAX_ATTEMPTS {
                let mut rng = substream(seed, attempt as u64);
                let mut m = SymMatrix::identity(k);
                for i in 0..k {
                    for j in (i + 1)..k {
                        let v = if hi > lo {
                            rng.random_range(lo..=hi)
                        } else {
                            lo
                        };
                        m.set(i, j, v);
                    }
                }
                let Some(repaired) = repair(m)? else {
                    continue;
                };
                let in_range =
                    (0..k).all(|i| ((i + 1)..k).all(|j| (0.0..=hi).contains(&repaired.get(i, j))));
                if !in_range {
                    continue;
                }
                let mut out = CovSpec::new(repaired)?;
                out.attempts = Some(attempt + 1);
                return Ok(out);
            }
            Err(ChibarError::GenerationFailed {
                attempts: MAX_ATTEMPTS,
            })
        }
    }
}

fn repair(mut m: SymMatrix) -> Result<Option<SymMatrix>> {
    let ok = |m: &SymMatrix| min_eigenvalue(m) >= EIGEN_FLOOR;
    if ok(&m) {
        return Ok(Some(m));
    }
    for _ in 0..MAX_REPAIR_ROUNDS {
        let eig = sym_eig(&m)?;
        m = eig
            .map_eigenvalues(|l| l.max(EIGEN_FLOOR))
            .to_correlation()?;
        if ok(&m) {
            return Ok(Some(m));
        }
    }
    Ok(None)
}

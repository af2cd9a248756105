//! Chi-bar-squared weight vectors and the formulas that produce them.
//!
//! * Orthogonal closed forms for the point null and for `m` demoted
//!   nuisance coordinates, plus the difference pattern between the two.
//! * The orthogonal-difference approximation for one demoted coordinate
//!   under correlation: exact point-null intrinsic volumes plus the
//!   orthogonal shift.
//! * Rank-based aggregation of face masses for several boundary nuisances.
//! * The mixture CDF and quantile.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cone::{Cone, FaceId, FaceMass};
use crate::cov::CovSpec;
use crate::error::{ChibarError, Result};
use crate::numkit::{
    chi2_cdf, inv_pd, numerical_rank, op_norm, schur_complement, sym_eig, SymMatrix,
};
use crate::orthant::QmcBudget;

/// Largest `K` accepted by the binomial closed forms.
pub const MAX_CLOSED_FORM_K: usize = 30;
/// Default collinearity threshold for the effective rank of a face.
pub const DEFAULT_RANK_TOL: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMethod {
    Orthogonal,
    ExactFace,
    Theorem1Approx,
    RankBased,
    McOracle,
}

impl WeightMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Orthogonal => "orthogonal",
            Self::ExactFace => "exact_face",
            Self::Theorem1Approx => "theorem1_approx",
            Self::RankBased => "rank_based",
            Self::McOracle => "mc_oracle",
        }
    }
}

impl fmt::Display for WeightMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Mixture weights `w_0..w_K` with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    /// Per-weight standard errors; zero for closed forms.
    pub std_errors: Vec<f64>,
    pub method: WeightMethod,
    /// Sum before normalisation.
    pub raw_sum: f64,
    /// Negative mass removed before normalisation.
    pub clipped_mass: f64,
}

impl WeightVector {
    /// Closed-form weights that already sum to one.
    pub fn exact(weights: Vec<f64>, method: WeightMethod) -> Self {
        let raw_sum = weights.iter().sum();
        let std_errors = vec![0.0; weights.len()];
        Self {
            weights,
            std_errors,
            method,
            raw_sum,
            clipped_mass: 0.0,
        }
    }

    /// Normalises `raw` to unit sum, scaling the standard errors alike.
    pub fn from_raw(raw: Vec<f64>, std_errors: Vec<f64>, method: WeightMethod) -> Self {
        let raw_sum: f64 = raw.iter().sum();
        let scale = if raw_sum > 0.0 { 1.0 / raw_sum } else { 1.0 };
        Self {
            weights: raw.iter().map(|w| w * scale).collect(),
            std_errors: std_errors.iter().map(|s| s * scale).collect(),
            method,
            raw_sum,
            clipped_mass: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Largest degrees of freedom carried by the vector.
    pub fn max_dof(&self) -> usize {
        self.weights.len().saturating_sub(1)
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Weight differences; entries sum to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaVector {
    pub deltas: Vec<f64>,
}

/// Split of `{0..K}` into parameters of interest and boundary nuisances.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSpec {
    poi: Vec<usize>,
    nuisance: Vec<usize>,
}

impl PartitionSpec {
    pub fn new(k: usize, mut poi: Vec<usize>, mut nuisance: Vec<usize>) -> Result<Self> {
        poi.sort_unstable();
        nuisance.sort_unstable();
        let mut seen = vec![false; k];
        for &i in poi.iter().chain(&nuisance) {
            if i >= k {
                return Err(ChibarError::InvalidPartition(format!(
                    "index {i} out of range for K={k}"
                )));
            }
            if seen[i] {
                return Err(ChibarError::InvalidPartition(format!(
                    "index {i} listed twice"
                )));
            }
            seen[i] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(ChibarError::InvalidPartition(format!(
                "index {missing} is neither of interest nor nuisance"
            )));
        }
        Ok(Self { poi, nuisance })
    }

    /// The last `m` coordinates are nuisances.
    pub fn last_m(k: usize, m: usize) -> Result<Self> {
        if m > k {
            return Err(ChibarError::InvalidPartition(format!(
                "m={m} exceeds K={k}"
            )));
        }
        Self::new(k, (0..k - m).collect(), (k - m..k).collect())
    }

    pub fn point_null(k: usize) -> Self {
        Self {
            poi: (0..k).collect(),
            nuisance: Vec::new(),
        }
    }

    pub fn poi(&self) -> &[usize] {
        &self.poi
    }

    pub fn nuisance(&self) -> &[usize] {
        &self.nuisance
    }

    pub fn p(&self) -> usize {
        self.poi.len()
    }

    pub fn m(&self) -> usize {
        self.nuisance.len()
    }

    pub fn k(&self) -> usize {
        self.poi.len() + self.nuisance.len()
    }

    pub fn poi_mask(&self) -> FaceId {
        FaceId::from_indices(&self.poi)
    }

    pub fn nuisance_mask(&self) -> FaceId {
        FaceId::from_indices(&self.nuisance)
    }
}

/// Chi-bar-squared distribution `Σ_j w_j χ²_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureDist {
    weights: WeightVector,
}

impl MixtureDist {
    pub fn new(weights: WeightVector) -> Result<Self> {
        if weights.is_empty() {
            return Err(ChibarError::InvalidInput("empty weight vector".into()));
        }
        if weights
            .weights
            .iter()
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(ChibarError::InvalidInput(
                "mixture weights must be finite and nonnegative".into(),
            ));
        }
        if (weights.sum() - 1.0).abs() > 1e-9 {
            return Err(ChibarError::InvalidInput(format!(
                "mixture weights sum to {}",
                weights.sum()
            )));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn max_dof(&self) -> usize {
        self.weights.max_dof()
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        self.weights
            .weights
            .iter()
            .enumerate()
            .map(|(dof, w)| w * chi2_cdf(t, dof))
            .sum::<f64>()
            .min(1.0)
    }

    /// Smallest `t` with `F(t) ≥ q`, to `|F(t) − q| ≤ 1e-10`.
    pub fn quantile(&self, q: f64) -> f64 {
        let w0 = self.weights.weights[0];
        if q <= w0 {
            return 0.0;
        }
        let mut lo = 0.0;
        let mut hi = 10.0 + 10.0 * self.max_dof() as f64;
        while self.cdf(hi) < q && hi < 1e6 {
            hi *= 2.0;
        }
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            let f = self.cdf(mid);
            if (f - q).abs() <= 1e-10 {
                return mid;
            }
            if f < q {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

pub fn mixture_cdf(dist: &MixtureDist, t: f64) -> f64 {
    dist.cdf(t)
}

pub fn mixture_quantile(dist: &MixtureDist, q: f64) -> f64 {
    dist.quantile(q)
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 || k > MAX_CLOSED_FORM_K {
        return Err(ChibarError::InvalidInput(format!(
            "closed forms need 1 <= K <= {MAX_CLOSED_FORM_K}, got {k}"
        )));
    }
    Ok(())
}

/// `w_j = 2^{-k} C(k, j)`.
pub fn weights_orthogonal_point(k: usize) -> Result<WeightVector> {
    check_k(k)?;
    let scale = 2f64.powi(-(k as i32));
    Ok(WeightVector::exact(
        (0..=k).map(|j| binomial(k, j) as f64 * scale).collect(),
        WeightMethod::Orthogonal,
    ))
}

/// Shift from the point-null weights to the weights with the last `m`
/// orthogonal coordinates demoted to boundary nuisances:
/// `2^{-k}[2^m C(k−m, j) − C(k, j)]` for `j ≤ k − m`, `−2^{-k} C(k, j)` above.
pub fn delta_orthogonal(k: usize, m: usize) -> Result<DeltaVector> {
    check_k(k)?;
    if m == 0 || m >= k {
        return Err(ChibarError::InvalidPartition(format!(
            "demotion needs 1 <= m <= K-1, got m={m}, K={k}"
        )));
    }
    let scale = 2f64.powi(-(k as i32));
    let deltas = (0..=k)
        .map(|j| {
            let full = binomial(k, j) as i128;
            let shifted = if j <= k - m {
                (binomial(k - m, j) as i128) << m
            } else {
                0
            };
            (shifted - full) as f64 * scale
        })
        .collect();
    Ok(DeltaVector { deltas })
}

/// `w_j = 2^{-(k−m)} C(k−m, j)` for `j ≤ k − m`, zero above.
pub fn weights_orthogonal_nuisance(k: usize, m: usize) -> Result<WeightVector> {
    check_k(k)?;
    if m >= k {
        return Err(ChibarError::InvalidPartition(format!(
            "need 0 <= m <= K-1, got m={m}, K={k}"
        )));
    }
    let p = k - m;
    let scale = 2f64.powi(-(p as i32));
    Ok(WeightVector::exact(
        (0..=k).map(|j| binomial(p, j) as f64 * scale).collect(),
        WeightMethod::Orthogonal,
    ))
}

/// `‖G(Σ) − I‖_op` for the unit-diagonal Gram `G(Σ)` of `Σ⁻¹`.
pub fn anisotropy_index(sigma: &CovSpec) -> Result<f64> {
    let g = inv_pd(&sigma.sigma)?.to_correlation()?;
    Ok(op_norm(&g.sub(&SymMatrix::identity(sigma.k()))))
}

/// Point-null intrinsic volumes of the whitened cone plus the orthogonal
/// one-nuisance shift. Negative entries are clipped and the remainder
/// renormalised; the clipped mass is recorded on the result.
pub fn weights_theorem1_approx(
    sigma: &CovSpec,
    budget: QmcBudget,
    seed: u64,
) -> Result<WeightVector> {
    let cone = Cone::build(sigma)?;
    let point = cone.intrinsic_volumes(budget, seed)?;
    theorem1_from_point_weights(&point)
}

/// The one-nuisance orthogonal-difference approximation applied to given
/// point-null weights.
pub fn theorem1_from_point_weights(point: &WeightVector) -> Result<WeightVector> {
    let k = point.max_dof();
    let delta = delta_orthogonal(k, 1)?;
    let shifted: Vec<f64> = point
        .weights
        .iter()
        .zip(&delta.deltas)
        .map(|(w, d)| w + d)
        .collect();
    let clipped_mass: f64 = shifted.iter().filter(|&&v| v < 0.0).map(|v| -v).sum();
    let raw: Vec<f64> = shifted.iter().map(|v| v.max(0.0)).collect();
    let mut out =
        WeightVector::from_raw(raw, point.std_errors.clone(), WeightMethod::Theorem1Approx);
    out.clipped_mass = clipped_mass;
    Ok(out)
}

/// Effective rank of face `s`: the number of eigenvalues above `tol` of the
/// collinearity matrix `I_PP^{-1/2} I_face I_PP^{-1/2}`, where `I_face` is
/// the Schur complement of the face's nuisance block in `I_SS`. Its
/// eigenvalues are the fractions of information on each interest direction
/// that survive partialling out the nuisances (one under orthogonality).
pub fn effective_rank(
    fisher: &SymMatrix,
    s: FaceId,
    part: &PartitionSpec,
    tol: f64,
) -> Result<usize> {
    let k = fisher.dim();
    let sp = s.intersect(part.poi_mask()).indices(k);
    if sp.is_empty() {
        return Ok(0);
    }
    let sn = s.intersect(part.nuisance_mask()).indices(k);
    if sn.is_empty() {
        return Ok(sp.len());
    }
    let i_face = schur_complement(fisher, &sp, &sn)?;
    let i_pp = fisher.principal(&sp);
    let inv_sqrt = sym_eig(&i_pp)?.map_eigenvalues(|l| 1.0 / l.sqrt());
    let m = SymMatrix::from_matrix(&inv_sqrt.matmul(&i_face).matmul(&inv_sqrt.as_matrix()))?;
    Ok(numerical_rank(&m, 1.0, tol))
}

/// Rank-based weights `w_u = Σ_{r(S) = u} α(F_S) β(F_S)`, `u = 0..p`.
pub fn rank_based_weights(
    sigma: &CovSpec,
    part: &PartitionSpec,
    tol: f64,
    budget: QmcBudget,
    seed: u64,
) -> Result<WeightVector> {
    let cone = Cone::build(sigma)?;
    check_rank_inputs(&cone, part, tol)?;
    let masses = cone.face_masses(budget, seed)?;
    rank_based_from_masses(&cone, &masses, part, tol)
}

fn check_rank_inputs(cone: &Cone, part: &PartitionSpec, tol: f64) -> Result<()> {
    if part.k() != cone.k() {
        return Err(ChibarError::InvalidPartition(format!(
            "partition covers {} coordinates, cone has {}",
            part.k(),
            cone.k()
        )));
    }
    if part.p() == 0 {
        return Err(ChibarError::InvalidPartition(
            "at least one parameter of interest is required".into(),
        ));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(ChibarError::InvalidInput(format!(
            "rank tolerance must lie in (0, 1), got {tol}"
        )));
    }
    Ok(())
}

/// Rank-based aggregation over precomputed face masses of `cone`.
pub fn rank_based_from_masses(
    cone: &Cone,
    masses: &[FaceMass],
    part: &PartitionSpec,
    tol: f64,
) -> Result<WeightVector> {
    check_rank_inputs(cone, part, tol)?;
    let p = part.p();
    let mut raw = vec![0.0; p + 1];
    let mut var = vec![0.0; p + 1];
    for fm in masses {
        let r = effective_rank(cone.fisher(), fm.face, part, tol)?;
        raw[r] += fm.mass;
        var[r] += fm.std_error * fm.std_error;
    }
    Ok(WeightVector::from_raw(
        raw,
        var.into_iter().map(f64::sqrt).collect(),
        WeightMethod::RankBased,
    ))
}

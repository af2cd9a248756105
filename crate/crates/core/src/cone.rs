//! The whitened alternative cone `C̃ = A ℝ₊^K`, its faces, Gaussian angles
//! and Euclidean projections.
//!
//! Whitening maps `Z ~ N(0, Σ)` to `Z̃ = A Z ~ N(0, I)` with
//! `A = D^{1/2} Pᵀ`, where `I(θ₀) = Σ⁻¹ = P D Pᵀ`. The generators of the cone
//! are the columns `a_i` of `A`, so face `S` is spanned by `{a_i : i ∈ S}` and
//! the coordinates of `S` index the original parameters.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cov::CovSpec;
use crate::error::{ChibarError, Result};
use crate::numkit::{cholesky, inv_pd, sym_eig, Matrix, SymMatrix};
use crate::orthant::{orthant_prob, OrthantEstimate, QmcBudget};
use crate::seed::{derive_seed, substream};
use crate::weights::{WeightMethod, WeightVector};

/// Largest cone dimension accepted by [`Cone::build`].
pub const MAX_CONE_DIM: usize = 20;
/// Largest dimension for which faces are enumerated exactly.
pub const MAX_FACE_ENUM_DIM: usize = 12;
/// Coefficients above this threshold mark a generator as active on the
/// projection's face.
pub const FACE_THRESHOLD: f64 = 1e-10;

const MC_STREAMS: usize = 16;

/// Which Gaussian blocks feed the internal and external angles.
///
/// * `Classical`: `α(F_S) = Φ((G_SS)⁻¹)`, `β(F_S) = Φ((H_TT)⁻¹)`. These are
///   the laws of the face coordinates of a standard Gaussian projected onto
///   `span(a_S)`, and of the normal-cone coordinates on its complement.
/// * `InverseBlock`: `α(F_S) = Φ(H_SS)`, `β(F_S) = Φ(Ĥ_TT)`.
///
/// Both agree on the orthant and on the apex and full faces; they differ on
/// intermediate faces of oblique cones. The projection oracle
/// ([`Cone::intrinsic_volumes_mc`]) agrees with `Classical`, which is the
/// default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleConvention {
    #[default]
    Classical,
    InverseBlock,
}

/// Face of the cone, identified by the bitmask of its generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FaceId(pub u32);

impl FaceId {
    pub const ORIGIN: FaceId = FaceId(0);

    pub fn full(k: usize) -> FaceId {
        FaceId(((1u64 << k) - 1) as u32)
    }

    pub fn from_indices(idx: &[usize]) -> FaceId {
        FaceId(idx.iter().fold(0u32, |acc, &i| acc | (1 << i)))
    }

    /// Face dimension `|S|`.
    #[inline]
    pub fn dim(self) -> usize {
        self.0.count_ones() as usize
    }

    #[inline]
    pub fn contains(self, i: usize) -> bool {
        self.0 >> i & 1 == 1
    }

    pub fn indices(self, k: usize) -> Vec<usize> {
        (0..k).filter(|&i| self.contains(i)).collect()
    }

    pub fn complement(self, k: usize) -> FaceId {
        FaceId(!self.0 & Self::full(k).0)
    }

    pub fn intersect(self, other: FaceId) -> FaceId {
        FaceId(self.0 & other.0)
    }
}

/// Intrinsic-volume mass `α(F) β(F)` of one face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceMass {
    pub face: FaceId,
    pub internal: f64,
    pub external: f64,
    pub mass: f64,
    /// First-order propagated standard error of `mass`.
    pub std_error: f64,
}

/// Euclidean projection onto a sub-cone spanned by some of the generators.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub point: Vec<f64>,
    pub face: FaceId,
    /// Generator coefficients, length `K`, zero outside the active set.
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cone {
    k: usize,
    convention: AngleConvention,
    fisher: SymMatrix,
    generators: Matrix,
    gram: SymMatrix,
    h: SymMatrix,
    polar_gram: SymMatrix,
    polar_h: SymMatrix,
}

impl Cone {
    pub fn build(sigma: &CovSpec) -> Result<Cone> {
        Self::build_with(sigma, AngleConvention::default())
    }

    pub fn build_with(sigma: &CovSpec, convention: AngleConvention) -> Result<Cone> {
        let k = sigma.k();
        if k > MAX_CONE_DIM {
            return Err(ChibarError::DimensionTooLarge {
                k,
                max: MAX_CONE_DIM,
                what: "cone construction",
            });
        }
        if let Some((row, col, value)) = sigma.negative_entry() {
            return Err(ChibarError::NegativeCorrelation { row, col, value });
        }
        let fisher = inv_pd(&sigma.sigma)?;
        let eig = sym_eig(&fisher)?;
        let mut generators = Matrix::zeros(k, k);
        for i in 0..k {
            let scale = eig.eigvalues[i].max(0.0).sqrt();
            for j in 0..k {
                generators.set(i, j, scale * eig.eigvectors.get(j, i));
            }
        }
        let gram = generators.gram();
        let h = inv_pd(&gram)?;
        let polar_gram = h.to_correlation()?;
        let polar_h = inv_pd(&polar_gram)?;
        Ok(Cone {
            k,
            convention,
            fisher,
            generators,
            gram,
            h,
            polar_gram,
            polar_h,
        })
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn convention(&self) -> AngleConvention {
        self.convention
    }

    /// Fisher information `I(θ₀) = Σ⁻¹`.
    pub fn fisher(&self) -> &SymMatrix {
        &self.fisher
    }

    /// Generator matrix `A`, generators in columns.
    pub fn generators(&self) -> &Matrix {
        &self.generators
    }

    pub fn gram(&self) -> &SymMatrix {
        &self.gram
    }

    pub fn h(&self) -> &SymMatrix {
        &self.h
    }

    pub fn polar_gram(&self) -> &SymMatrix {
        &self.polar_gram
    }

    pub fn polar_h(&self) -> &SymMatrix {
        &self.polar_h
    }

    /// `Z̃ = A z`.
    pub fn whiten(&self, z: &[f64]) -> Vec<f64> {
        self.generators.mul_vec(z)
    }

    fn check_face(&self, s: FaceId) -> Result<()> {
        if s.0 & !FaceId::full(self.k).0 != 0 {
            return Err(ChibarError::InvalidInput(format!(
                "face mask {:#b} has bits beyond K={}",
                s.0, self.k
            )));
        }
        Ok(())
    }

    fn internal_cov(&self, s: FaceId) -> Result<SymMatrix> {
        let idx = s.indices(self.k);
        match self.convention {
            AngleConvention::Classical => inv_pd(&self.gram.principal(&idx)),
            AngleConvention::InverseBlock => Ok(self.h.principal(&idx)),
        }
    }

    fn external_cov(&self, s: FaceId) -> Result<SymMatrix> {
        let idx = s.complement(self.k).indices(self.k);
        match self.convention {
            AngleConvention::Classical => inv_pd(&self.h.principal(&idx)),
            AngleConvention::InverseBlock => Ok(self.polar_h.principal(&idx)),
        }
    }

    /// Internal Gaussian angle of a nonempty face.
    pub fn internal_angle(
        &self,
        s: FaceId,
        budget: QmcBudget,
        seed: u64,
    ) -> Result<OrthantEstimate> {
        self.check_face(s)?;
        if s.dim() == 0 {
            return Err(ChibarError::InvalidInput(
                "internal angle needs a nonempty face".into(),
            ));
        }
        orthant_prob(&self.internal_cov(s)?, budget, seed)
    }

    /// External Gaussian angle of a proper face (`s` not the full mask).
    pub fn external_angle(
        &self,
        s: FaceId,
        budget: QmcBudget,
        seed: u64,
    ) -> Result<OrthantEstimate> {
        self.check_face(s)?;
        if s.dim() == self.k {
            return Err(ChibarError::InvalidInput(
                "external angle needs a proper face".into(),
            ));
        }
        orthant_prob(&self.external_cov(s)?, budget, seed)
    }

    /// `α(F_S) β(F_S)`, with the apex having internal angle one and the full
    /// face external angle one. Seeds derive from `(seed, mask)`.
    pub fn face_mass(&self, s: FaceId, budget: QmcBudget, seed: u64) -> Result<FaceMass> {
        let (alpha, alpha_se) = if s.dim() == 0 {
            (1.0, 0.0)
        } else {
            let e = self.internal_angle(s, budget, derive_seed(seed, &[s.0 as u64, 0]))?;
            (e.value, e.std_error)
        };
        let (beta, beta_se) = if s.dim() == self.k {
            (1.0, 0.0)
        } else {
            let e = self.external_angle(s, budget, derive_seed(seed, &[s.0 as u64, 1]))?;
            (e.value, e.std_error)
        };
        Ok(FaceMass {
            face: s,
            internal: alpha,
            external: beta,
            mass: alpha * beta,
            std_error: ((beta * alpha_se).powi(2) + (alpha * beta_se).powi(2)).sqrt(),
        })
    }

    /// Masses of all `2^K` faces, ordered by bitmask.
    pub fn face_masses(&self, budget: QmcBudget, seed: u64) -> Result<Vec<FaceMass>> {
        if self.k > MAX_FACE_ENUM_DIM {
            return Err(ChibarError::DimensionTooLarge {
                k: self.k,
                max: MAX_FACE_ENUM_DIM,
                what: "face enumeration",
            });
        }
        (0..1u32 << self.k)
            .into_par_iter()
            .map(|mask| self.face_mass(FaceId(mask), budget, seed))
            .collect()
    }

    /// Intrinsic volumes `v_j = Σ_{|S| = j} α(F_S) β(F_S)`.
    pub fn intrinsic_volumes(&self, budget: QmcBudget, seed: u64) -> Result<WeightVector> {
        let masses = self.face_masses(budget, seed)?;
        Ok(intrinsic_volumes_from_masses(self.k, &masses))
    }

    /// Projects `z` (whitened coordinates) onto `cone{a_i : i ∈ active}` by
    /// Lawson–Hanson NNLS. An empty active set projects to the origin.
    pub fn project(&self, z: &[f64], active: &[usize]) -> Result<Projection> {
        if z.len() != self.k {
            return Err(ChibarError::InvalidInput(format!(
                "point has dimension {}, cone has {}",
                z.len(),
                self.k
            )));
        }
        if let Some(&bad) = active.iter().find(|&&i| i >= self.k) {
            return Err(ChibarError::InvalidInput(format!(
                "active index {bad} out of range for K={}",
                self.k
            )));
        }
        let mut coefficients = vec![0.0; self.k];
        let mut point = vec![0.0; self.k];
        if active.is_empty() {
            return Ok(Projection {
                point,
                face: FaceId::ORIGIN,
                coefficients,
            });
        }
        let atz = self.generators.tr_mul_vec(z);
        let b: Vec<f64> = active.iter().map(|&i| atz[i]).collect();
        let g = self.gram.principal(active);
        let lambda = nnls_gram(&g, &b, 10 * self.k)?;

        let mut face = FaceId::ORIGIN;
        for (&i, &l) in active.iter().zip(&lambda) {
            if l > FACE_THRESHOLD {
                face.0 |= 1 << i;
            }
            if l > 0.0 {
                coefficients[i] = l;
                for (r, p) in point.iter_mut().enumerate() {
                    *p += l * self.generators.get(r, i);
                }
            }
        }
        Ok(Projection {
            point,
            face,
            coefficients,
        })
    }

    /// Projection oracle for the intrinsic volumes: frequencies of the face
    /// dimension hit by projecting standard Gaussian draws onto the cone.
    pub fn intrinsic_volumes_mc(&self, n: usize, seed: u64) -> Result<WeightVector> {
        if n < 10_000 {
            return Err(ChibarError::InvalidInput(format!(
                "projection oracle needs n >= 10000, got {n}"
            )));
        }
        let k = self.k;
        let all: Vec<usize> = (0..k).collect();
        let per_stream = n.div_ceil(MC_STREAMS);
        let counts = (0..MC_STREAMS)
            .into_par_iter()
            .map(|s| -> Result<Vec<u64>> {
                let mut rng = substream(seed, s as u64);
                let mut counts = vec![0u64; k + 1];
                let lo = s * per_stream;
                let hi = ((s + 1) * per_stream).min(n);
                let mut z = vec![0.0; k];
                for _ in lo..hi {
                    z.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
                    counts[self.project(&z, &all)?.face.dim()] += 1;
                }
                Ok(counts)
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(vec![0u64; k + 1], |mut acc, c| {
                acc.iter_mut().zip(c).for_each(|(a, c)| *a += c);
                acc
            });
        let nf = n as f64;
        let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / nf).collect();
        let std_errors = weights
            .iter()
            .map(|w| (w * (1.0 - w) / nf).sqrt())
            .collect();
        Ok(WeightVector {
            raw_sum: weights.iter().sum(),
            weights,
            std_errors,
            method: WeightMethod::McOracle,
            clipped_mass: 0.0,
        })
    }
}

/// Aggregates face masses by face dimension and normalises.
pub fn intrinsic_volumes_from_masses(k: usize, masses: &[FaceMass]) -> WeightVector {
    let mut raw = vec![0.0; k + 1];
    let mut var = vec![0.0; k + 1];
    for fm in masses {
        raw[fm.face.dim()] += fm.mass;
        var[fm.face.dim()] += fm.std_error * fm.std_error;
    }
    WeightVector::from_raw(
        raw,
        var.into_iter().map(f64::sqrt).collect(),
        WeightMethod::ExactFace,
    )
}

/// Lawson–Hanson NNLS in Gram form: minimises `½ λᵀ G λ − bᵀ λ` over
/// `λ ≥ 0`, i.e. `‖z − A λ‖²` with `G = AᵀA`, `b = Aᵀz`.
fn nnls_gram(g: &SymMatrix, b: &[f64], max_outer: usize) -> Result<Vec<f64>> {
    let n = b.len();
    let scale = 1.0 + b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let tol = 1e-13 * scale;
    let mut x = vec![0.0; n];
    let mut passive = vec![false; n];

    for _ in 0..max_outer.max(n + 1) {
        let gx = g.mul_vec(&x);
        let next = (0..n)
            .filter(|&j| !passive[j])
            .map(|j| (j, b[j] - gx[j]))
            .filter(|&(_, w)| w > tol)
            .max_by(|a, b| a.1.total_cmp(&b.1));
        let Some((t, _)) = next else {
            return Ok(x);
        };
        passive[t] = true;

        let mut first = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let l = cholesky(&g.principal(&idx))?;
            let s = l.solve(&idx.iter().map(|&j| b[j]).collect::<Vec<_>>());
            if first {
                first = false;
                let pos_t = idx.iter().position(|&j| j == t).expect("t is passive");
                if s[pos_t] <= 0.0 {
                    // Gradient was positive only through round-off.
                    passive[t] = false;
                    return Ok(x);
                }
            }
            if s.iter().all(|&v| v > 0.0) {
                for (&j, &v) in idx.iter().zip(&s) {
                    x[j] = v;
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            let mut blocking = idx[0];
            for (&j, &v) in idx.iter().zip(&s) {
                if v <= 0.0 {
                    let a = x[j] / (x[j] - v);
                    if a < alpha {
                        alpha = a;
                        blocking = j;
                    }
                }
            }
            let xmax = idx.iter().map(|&j| x[j]).fold(0.0, f64::max);
            for (&j, &v) in idx.iter().zip(&s) {
                x[j] += alpha * (v - x[j]);
                if j == blocking || x[j] <= 1e-15 * (1.0 + xmax) {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
    }
    Err(ChibarError::NoConvergence {
        routine: "lawson-hanson nnls",
        iterations: max_outer,
    })
}

pub fn build_cone(sigma: &CovSpec) -> Result<Cone> {
    Cone::build(sigma)
}

pub fn internal_angle(
    cone: &Cone,
    s: FaceId,
    budget: QmcBudget,
    seed: u64,
) -> Result<OrthantEstimate> {
    cone.internal_angle(s, budget, seed)
}

pub fn external_angle(
    cone: &Cone,
    s: FaceId,
    budget: QmcBudget,
    seed: u64,
) -> Result<OrthantEstimate> {
    cone.external_angle(s, budget, seed)
}

pub fn intrinsic_volumes(cone: &Cone, budget: QmcBudget, seed: u64) -> Result<WeightVector> {
    cone.intrinsic_volumes(budget, seed)
}

pub fn intrinsic_volumes_mc(cone: &Cone, n: usize, seed: u64) -> Result<WeightVector> {
    cone.intrinsic_volumes_mc(n, seed)
}

pub fn project_cone(cone: &Cone, z: &[f64], active: &[usize]) -> Result<(Vec<f64>, FaceId)> {
    cone.project(z, active).map(|p| (p.point, p.face))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::dot;

    fn orthant(k: usize) -> Cone {
        Cone::build(&CovSpec::identity(k).unwrap()).unwrap()
    }

    #[test]
    fn orthant_cone_is_identity() {
        let c = orthant(4);
        assert!(c.gram().max_abs_diff(&SymMatrix::identity(4)) < 1e-15);
        assert!(c.polar_h().max_abs_diff(&SymMatrix::identity(4)) < 1e-15);
    }

    #[test]
    fn equicorr_gram_normalised() {
        let c = Cone::build(&CovSpec::equicorrelation(3, 0.5).unwrap()).unwrap();
        let g = c.gram().to_correlation().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { -0.5 / 1.5 };
                assert!((g.get(i, j) - want).abs() < 1e-12);
            }
        }
        let ph = c.polar_gram();
        for i in 0..3 {
            assert_eq!(ph.get(i, i), 1.0);
        }
    }

    #[test]
    fn negative_correlation_rejected() {
        let sigma = SymMatrix::from_rows(&[vec![1.0, -0.1], vec![-0.1, 1.0]]).unwrap();
        let err = Cone::build(&CovSpec::new(sigma).unwrap()).unwrap_err();
        assert!(matches!(err, ChibarError::NegativeCorrelation { .. }));
    }

    #[test]
    fn orthant_angles_are_dyadic() {
        let c = orthant(4);
        let b = QmcBudget::default();
        for mask in 1u32..16 {
            let s = FaceId(mask);
            let a = c.internal_angle(s, b, 0).unwrap();
            assert!((a.value - 0.5f64.powi(s.dim() as i32)).abs() < 1e-12);
            if s.dim() < 4 {
                let e = c.external_angle(s, b, 0).unwrap();
                assert!((e.value - 0.5f64.powi(4 - s.dim() as i32)).abs() < 1e-12);
            }
        }
        assert!(c.internal_angle(FaceId::ORIGIN, b, 0).is_err());
        assert!(c.external_angle(FaceId::full(4), b, 0).is_err());
    }

    #[test]
    fn orthant_volumes_binomial() {
        let v = orthant(4)
            .intrinsic_volumes(QmcBudget::default(), 0)
            .unwrap();
        for (got, want) in v.weights.iter().zip([1.0, 4.0, 6.0, 4.0, 1.0]) {
            assert!((got - want / 16.0).abs() < 1e-12);
        }
    }

    #[test]
    fn one_dimensional_cone_is_half_half() {
        let c = Cone::build(&CovSpec::new(SymMatrix::from_diag(&[3.0])).unwrap()).unwrap();
        let v = c.intrinsic_volumes(QmcBudget::default(), 0).unwrap();
        assert_eq!(v.weights, vec![0.5, 0.5]);
    }

    #[test]
    fn projection_clips_orthant() {
        let c = orthant(2);
        let p = c.project(&[1.0, -1.0], &[0, 1]).unwrap();
        assert!((p.point[0] - 1.0).abs() < 1e-15 && p.point[1].abs() < 1e-15);
        assert_eq!(p.face, FaceId(0b01));
    }

    #[test]
    fn interior_point_is_fixed() {
        let c = Cone::build(&CovSpec::equicorrelation(3, 0.4).unwrap()).unwrap();
        let lambda = [0.3, 1.2, 0.7];
        let z = c.generators().mul_vec(&lambda);
        let p = c.project(&z, &[0, 1, 2]).unwrap();
        for (a, b) in p.point.iter().zip(&z) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(p.face, FaceId::full(3));
    }

    #[test]
    fn polar_point_projects_to_origin() {
        let cov = CovSpec::equicorrelation(2, 0.5).unwrap();
        let c = Cone::build(&cov).unwrap();
        let z = c.whiten(&[-1.0, -1.0]);
        for i in 0..2 {
            let a = c.generators().column(i);
            assert!(dot(&a, &z) <= 0.0);
        }
        let p = c.project(&z, &[0, 1]).unwrap();
        assert_eq!(p.face, FaceId::ORIGIN);
        assert!(p.point.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn empty_active_set_projects_to_origin() {
        let c = orthant(3);
        let p = c.project(&[1.0, 2.0, 3.0], &[]).unwrap();
        assert_eq!(p.point, vec![0.0; 3]);
        assert_eq!(p.face, FaceId::ORIGIN);
    }

    #[test]
    fn mc_oracle_on_orthant() {
        let v = orthant(2).intrinsic_volumes_mc(100_000, 5).unwrap();
        for (got, want) in v.weights.iter().zip([0.25, 0.5, 0.25]) {
            assert!((got - want).abs() < 0.005);
        }
        let v = orthant(1).intrinsic_volumes_mc(20_000, 5).unwrap();
        assert!((v.weights[0] - 0.5).abs() < 4.0 * v.std_errors[0]);
        assert!(orthant(1).intrinsic_volumes_mc(10, 0).is_err());
    }

    #[test]
    fn face_enumeration_capped() {
        let c = orthant(13);
        assert!(matches!(
            c.intrinsic_volumes(QmcBudget::default(), 0),
            Err(ChibarError::DimensionTooLarge { .. })
        ));
    }

    #[test]
    fn face_id_helpers() {
        let f = FaceId::from_indices(&[0, 2]);
        assert_eq!(f.dim(), 2);
        assert_eq!(f.indices(4), vec![0, 2]);
        assert_eq!(f.complement(4), FaceId(0b1010));
        assert_eq!(FaceId::full(3), FaceId(0b111));
    }
}

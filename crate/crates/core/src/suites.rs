//! Named validation suites: grids of (K, m, covariance, weight method) cells,
//! each simulated and compared against its mixture.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cone::{intrinsic_volumes_from_masses, Cone, FaceMass};
use crate::cov::{gen_covariance, CovGenSpec, CovSpec};
use crate::error::{ChibarError, Result};
use crate::orthant::QmcBudget;
use crate::seed::derive_seed;
use crate::sim::{
    diagnostics, simulate_lrs, DiagnosticsReport, ExperimentConfig, DEFAULT_DRAWS, DEFAULT_STREAMS,
};
use crate::weights::{
    anisotropy_index, rank_based_from_masses, theorem1_from_point_weights,
    weights_orthogonal_nuisance, MixtureDist, PartitionSpec, WeightVector, DEFAULT_RANK_TOL,
};

/// How the mixture weights of a cell are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum MethodSpec {
    Orthogonal,
    /// Face-formula intrinsic volumes; point null only.
    Exact,
    /// Requires exactly one nuisance parameter.
    Theorem1,
    Rank {
        tol: f64,
    },
    /// Projection oracle with `n` draws; point null only.
    Mc {
        n: usize,
    },
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Orthogonal => f.write_str("orthogonal"),
            Self::Exact => f.write_str("exact"),
            Self::Theorem1 => f.write_str("theorem1"),
            Self::Rank { tol } => write!(f, "rank:{tol}"),
            Self::Mc { n } => write!(f, "mc:{n}"),
        }
    }
}

impl FromStr for MethodSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        match (head, arg) {
            ("orthogonal", None) => Ok(Self::Orthogonal),
            ("exact", None) => Ok(Self::Exact),
            ("theorem1", None) => Ok(Self::Theorem1),
            ("rank", None) => Ok(Self::Rank {
                tol: DEFAULT_RANK_TOL,
            }),
            ("rank", Some(a)) => {
                let tol: f64 = a.parse().map_err(|_| format!("bad rank tolerance `{a}`"))?;
                if !(tol > 0.0 && tol < 1.0) {
                    return Err(format!("rank tolerance must lie in (0, 1), got {tol}"));
                }
                Ok(Self::Rank { tol })
            }
            ("mc", Some(a)) => {
                let n: usize = a.parse().map_err(|_| format!("bad draw count `{a}`"))?;
                Ok(Self::Mc { n })
            }
            _ => Err(format!(
                "unknown method `{s}` (expected orthogonal, exact, theorem1, rank:TOL or mc:N)"
            )),
        }
    }
}

/// A cone together with lazily computed face masses, so that several
/// partitions or methods on the same covariance share the orthant work.
pub struct WeightEngine {
    cone: Cone,
    budget: QmcBudget,
    seed: u64,
    masses: OnceLock<Vec<FaceMass>>,
}

impl WeightEngine {
    pub fn new(sigma: &CovSpec, budget: QmcBudget, seed: u64) -> Result<Self> {
        Ok(Self {
            cone: Cone::build(sigma)?,
            budget,
            seed,
            masses: OnceLock::new(),
        })
    }

    pub fn cone(&self) -> &Cone {
        &self.cone
    }

    pub fn face_masses(&self) -> Result<&[FaceMass]> {
        if let Some(m) = self.masses.get() {
            return Ok(m);
        }
        let computed = self.cone.face_masses(self.budget, self.seed)?;
        Ok(self.masses.get_or_init(|| computed))
    }

    pub fn weights(&self, part: &PartitionSpec, method: MethodSpec) -> Result<WeightVector> {
        let k = self.cone.k();
        if part.k() != k {
            return Err(ChibarError::InvalidPartition(format!(
                "partition covers {} coordinates, covariance has {k}",
                part.k()
            )));
        }
        let m = part.m();
        let need_m = |want: usize, name: &str| {
            if m == want {
                Ok(())
            } else {
                Err(ChibarError::InvalidPartition(format!(
                    "method `{name}` requires m = {want}, got m = {m}"
                )))
            }
        };
        match method {
            MethodSpec::Orthogonal => weights_orthogonal_nuisance(k, m),
            MethodSpec::Exact => {
                need_m(0, "exact")?;
                Ok(intrinsic_volumes_from_masses(k, self.face_masses()?))
            }
            MethodSpec::Theorem1 => {
                need_m(1, "theorem1")?;
                let point = intrinsic_volumes_from_masses(k, self.face_masses()?);
                theorem1_from_point_weights(&point)
            }
            MethodSpec::Rank { tol } => {
                rank_based_from_masses(&self.cone, self.face_masses()?, part, tol)
            }
            MethodSpec::Mc { n } => {
                need_m(0, "mc")?;
                self.cone.intrinsic_volumes_mc(n, self.seed)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Lemma1,
    Lemma2,
    Thm1Mild,
    Thm1Strong,
    Thm1EquicorrSweep,
    RankMild,
    RankStrong,
    RankEquicorrSweep,
    RankMSweep,
}

impl Suite {
    pub const ALL: [Suite; 9] = [
        Suite::Lemma1,
        Suite::Lemma2,
        Suite::Thm1Mild,
        Suite::Thm1Strong,
        Suite::Thm1EquicorrSweep,
        Suite::RankMild,
        Suite::RankStrong,
        Suite::RankEquicorrSweep,
        Suite::RankMSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Lemma1 => "lemma1",
            Suite::Lemma2 => "lemma2",
            Suite::Thm1Mild => "thm1-mild",
            Suite::Thm1Strong => "thm1-strong",
            Suite::Thm1EquicorrSweep => "thm1-equicorr-sweep",
            Suite::RankMild => "rank-mild",
            Suite::RankStrong => "rank-strong",
            Suite::RankEquicorrSweep => "rank-equicorr-sweep",
            Suite::RankMSweep => "rank-m-sweep",
        }
    }

    /// Whether the suite draws random covariances and so has replicates.
    pub fn is_random(self) -> bool {
        matches!(
            self,
            Suite::Thm1Mild | Suite::Thm1Strong | Suite::RankMild | Suite::RankStrong
        )
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Suite::ALL.iter().map(|x| x.name()).collect();
                format!("unknown suite `{s}` (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub seed: u64,
    pub n_draws: usize,
    pub streams: usize,
    /// Random covariances per K for the mild/strong suites; replicate `r`
    /// uses covariance seed `seed + r`.
    pub cov_seeds: usize,
    pub rank_tol: f64,
    pub budget: QmcBudget,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            n_draws: DEFAULT_DRAWS,
            streams: DEFAULT_STREAMS,
            cov_seeds: 5,
            rank_tol: DEFAULT_RANK_TOL,
            budget: QmcBudget::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub index: usize,
    pub k: usize,
    pub m: usize,
    pub cov: CovGenSpec,
    pub method: MethodSpec,
}

impl CellSpec {
    /// Simulation seed of the cell; fixed by its index so that cells can
    /// run in any order.
    pub fn sim_seed(&self, opts: &SuiteOptions) -> u64 {
        derive_seed(opts.seed, &[self.index as u64])
    }

    pub fn name(&self) -> String {
        format!("cell{:02}-k{}-m{}", self.index, self.k, self.m)
    }
}

const K_GRID: [usize; 3] = [4, 7, 10];
const SWEEP_RHO: f64 = 0.5;

pub fn suite_cells(suite: Suite, opts: &SuiteOptions) -> Vec<CellSpec> {
    let rank = MethodSpec::Rank { tol: opts.rank_tol };
    let reps = opts.cov_seeds.max(1) as u64;
    let mut grid: Vec<(usize, usize, CovGenSpec, MethodSpec)> = Vec::new();
    match suite {
        Suite::Lemma1 | Suite::Lemma2 => {
            let m = if suite == Suite::Lemma1 { 1 } else { 3 };
            for k in K_GRID {
                grid.push((k, m, CovGenSpec::identity(k), MethodSpec::Orthogonal));
            }
        }
        Suite::Thm1Mild | Suite::Thm1Strong | Suite::RankMild | Suite::RankStrong => {
            let (m, method) = match suite {
                Suite::Thm1Mild | Suite::Thm1Strong => (1, MethodSpec::Theorem1),
                _ => (3, rank),
            };
            let strong = matches!(suite, Suite::Thm1Strong | Suite::RankStrong);
            for k in K_GRID {
                for r in 0..reps {
                    let s = opts.seed.wrapping_add(r);
                    let cov = if strong {
                        CovGenSpec::strong(k, s)
                    } else {
                        CovGenSpec::mild(k, s)
                    };
                    grid.push((k, m, cov, method));
                }
            }
        }
        Suite::Thm1EquicorrSweep => {
            for k in 2..=10 {
                grid.push((
                    k,
                    1,
                    CovGenSpec::equicorr(k, SWEEP_RHO),
                    MethodSpec::Theorem1,
                ));
            }
        }
        Suite::RankEquicorrSweep => {
            for k in 4..=10 {
                grid.push((k, 3, CovGenSpec::equicorr(k, SWEEP_RHO), rank));
            }
        }
        Suite::RankMSweep => {
            for m in 1..=9 {
                grid.push((10, m, CovGenSpec::equicorr(10, SWEEP_RHO), rank));
            }
        }
    }
    grid.into_iter()
        .enumerate()
        .map(|(index, (k, m, cov, method))| CellSpec {
            index,
            k,
            m,
            cov,
            method,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: CellSpec,
    /// `δ(Σ)` of the cell's covariance.
    pub anisotropy: f64,
    pub weights: WeightVector,
    pub report: DiagnosticsReport,
}

/// Seed of the orthant integration; shared by every cell so that cells on the
/// same covariance reuse one set of face masses.
fn weights_seed(opts: &SuiteOptions) -> u64 {
    derive_seed(opts.seed, &[u64::MAX])
}

fn run_cell_with(
    cell: &CellSpec,
    sigma: &CovSpec,
    engine: &WeightEngine,
    opts: &SuiteOptions,
) -> Result<CellResult> {
    let part = PartitionSpec::last_m(cell.k, cell.m)?;
    let weights = engine.weights(&part, cell.method)?;
    let dist = MixtureDist::new(weights.clone())?;
    let seed = cell.sim_seed(opts);
    let cfg = ExperimentConfig::new(sigma.clone(), part)
        .with_draws(opts.n_draws)
        .with_seed(seed)
        .with_streams(opts.streams);
    let sorted = simulate_lrs(&cfg)?;
    Ok(CellResult {
        cell: *cell,
        anisotropy: anisotropy_index(sigma)?,
        weights,
        report: diagnostics(&sorted, &dist, seed)?,
    })
}

pub fn run_cell(cell: &CellSpec, opts: &SuiteOptions) -> Result<CellResult> {
    let sigma = gen_covariance(&cell.cov)?;
    let engine = WeightEngine::new(&sigma, opts.budget, weights_seed(opts))?;
    run_cell_with(cell, &sigma, &engine, opts)
}

/// Runs every cell of `suite`. Cells sharing a covariance share face masses.
/// With `parallel` the cells run concurrently; results are identical either
/// way and returned in cell order.
pub fn run_suite(suite: Suite, opts: &SuiteOptions, parallel: bool) -> Result<Vec<CellResult>> {
    let cells = suite_cells(suite, opts);
    let mut groups: Vec<(CovGenSpec, Vec<CellSpec>)> = Vec::new();
    for c in &cells {
        match groups.iter_mut().find(|(cov, _)| *cov == c.cov) {
            Some((_, v)) => v.push(*c),
            None => groups.push((c.cov, vec![*c])),
        }
    }
    let run_group = |(cov, group): &(CovGenSpec, Vec<CellSpec>)| -> Result<Vec<CellResult>> {
        let sigma = gen_covariance(cov)?;
        let engine = WeightEngine::new(&sigma, opts.budget, weights_seed(opts))?;
        group
            .iter()
            .map(|c| run_cell_with(c, &sigma, &engine, opts))
            .collect()
    };
    let nested: Vec<Vec<CellResult>> = if parallel {
        groups.par_iter().map(run_group).collect::<Result<_>>()?
    } else {
        groups.iter().map(run_group).collect::<Result<_>>()?
    };
    let mut out: Vec<CellResult> = nested.into_iter().flatten().collect();
    out.sort_by_key(|r| r.cell.index);
    Ok(out)
}

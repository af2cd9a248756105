//! Monte Carlo ground truth: draws from the Gaussian limit experiment, the
//! likelihood-ratio statistic as a difference of squared cone projections,
//! and empirical-vs-mixture diagnostics.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cone::Cone;
use crate::cov::CovSpec;
use crate::error::{ChibarError, Result};
use crate::numkit::{cholesky, norm_sq, LowerTriangular};
use crate::seed::substream;
use crate::weights::{MixtureDist, PartitionSpec};

pub const DEFAULT_DRAWS: usize = 100_000;
pub const DEFAULT_STREAMS: usize = 8;
/// Statistics below this are counted in the atom at zero.
pub const ZERO_ATOM: f64 = 1e-10;
/// Nominal level of the tail calibration diagnostic.
pub const TAIL_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub sigma: CovSpec,
    pub partition: PartitionSpec,
    pub n_draws: usize,
    pub seed: u64,
    /// Number of RNG substreams the draws are split across. Part of the
    /// reproducibility contract; independent of how many threads run them.
    pub streams: usize,
}

impl ExperimentConfig {
    pub fn new(sigma: CovSpec, partition: PartitionSpec) -> Self {
        Self {
            sigma,
            partition,
            n_draws: DEFAULT_DRAWS,
            seed: 0,
            streams: DEFAULT_STREAMS,
        }
    }

    pub fn with_draws(mut self, n: usize) -> Self {
        self.n_draws = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_streams(mut self, streams: usize) -> Self {
        self.streams = streams;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_draws == 0 || self.streams == 0 {
            return Err(ChibarError::InvalidInput(
                "n_draws and streams must be positive".into(),
            ));
        }
        if self.partition.k() != self.sigma.k() {
            return Err(ChibarError::InvalidPartition(format!(
                "partition covers {} coordinates, covariance has {}",
                self.partition.k(),
                self.sigma.k()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub d_inf: f64,
    pub tail_ratio: f64,
    pub q50_emp: f64,
    pub q50_mix: f64,
    pub q95_emp: f64,
    pub q95_mix: f64,
    pub n_draws: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcdfPoint {
    pub t: f64,
    pub f_emp: f64,
    pub f_mix: f64,
}

fn fill_mvn(l: &LowerTriangular, rng: &mut ChaCha8Rng, g: &mut [f64], z: &mut [f64]) {
    g.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
    for (i, zi) in z.iter_mut().enumerate() {
        *zi = (0..=i).map(|j| l.get(i, j) * g[j]).sum();
    }
}

/// `n` draws of `N(0, Σ)` as `L g` with `Σ = L Lᵀ`, on substream 0 of `seed`.
pub fn sample_mvn(sigma: &CovSpec, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let l = cholesky(&sigma.sigma)?;
    let k = sigma.k();
    let mut rng = substream(seed, 0);
    let mut g = vec![0.0; k];
    Ok((0..n)
        .map(|_| {
            let mut z = vec![0.0; k];
            fill_mvn(&l, &mut rng, &mut g, &mut z);
            z
        })
        .collect())
}

/// `‖P_C̃(z̃)‖² − ‖P_C̃₀(z̃)‖²`, where the null cone is spanned by the
/// nuisance generators (the origin when there are none).
pub fn lrt_statistic(cone: &Cone, part: &PartitionSpec, z_tilde: &[f64]) -> Result<f64> {
    let all: Vec<usize> = (0..cone.k()).collect();
    let alt = norm_sq(&cone.project(z_tilde, &all)?.point);
    let null = if part.m() == 0 {
        0.0
    } else {
        norm_sq(&cone.project(z_tilde, part.nuisance())?.point)
    };
    Ok((alt - null).max(0.0))
}

/// Simulates the statistic `cfg.n_draws` times and returns the values
/// sorted ascending, with the zero atom snapped to exactly zero.
pub fn simulate_lrs(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let cone = Cone::build(&cfg.sigma)?;
    let l = cholesky(&cfg.sigma.sigma)?;
    let k = cfg.sigma.k();
    let per_stream = cfg.n_draws.div_ceil(cfg.streams);

    let chunks = (0..cfg.streams)
        .into_par_iter()
        .map(|s| -> Result<Vec<f64>> {
            let lo = (s * per_stream).min(cfg.n_draws);
            let hi = ((s + 1) * per_stream).min(cfg.n_draws);
            let mut rng = substream(cfg.seed, s as u64);
            let mut g = vec![0.0; k];
            let mut z = vec![0.0; k];
            (lo..hi)
                .map(|_| {
                    fill_mvn(&l, &mut rng, &mut g, &mut z);
                    let zt = cone.whiten(&z);
                    lrt_statistic(&cone, &cfg.partition, &zt)
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut values: Vec<f64> = chunks
        .into_iter()
        .flatten()
        .map(|v| if v < ZERO_ATOM { 0.0 } else { v })
        .collect();
    values.sort_by(f64::total_cmp);
    Ok(values)
}

/// Empirical quantile `x_(⌈qn⌉)` of a sorted sample.
fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let idx = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

/// Sup distance between the empirical CDF of `sorted` and the mixture CDF,
/// evaluated on both sides of every jump, including the atom at zero.
pub fn sup_distance(sorted: &[f64], dist: &MixtureDist) -> f64 {
    let n = sorted.len();
    let nf = n as f64;
    let zeros = sorted.partition_point(|&v| v <= 0.0);
    let mut d = (zeros as f64 / nf - dist.cdf(0.0)).abs();
    let mut i = zeros;
    while i < n {
        let t = sorted[i];
        let j = i + sorted[i..].partition_point(|&v| v <= t);
        let fm = dist.cdf(t);
        d = d
            .max((i as f64 / nf - fm).abs())
            .max((j as f64 / nf - fm).abs());
        i = j;
    }
    d
}

/// Diagnostics of a sorted statistic sample against a mixture.
pub fn diagnostics(sorted: &[f64], dist: &MixtureDist, seed: u64) -> Result<DiagnosticsReport> {
    if sorted.is_empty() {
        return Err(ChibarError::InvalidInput("empty sample".into()));
    }
    let n = sorted.len();
    let q95_mix = dist.quantile(1.0 - TAIL_ALPHA);
    let exceed = n - sorted.partition_point(|&v| v <= q95_mix);
    Ok(DiagnosticsReport {
        d_inf: sup_distance(sorted, dist),
        tail_ratio: exceed as f64 / n as f64 / TAIL_ALPHA,
        q50_emp: empirical_quantile(sorted, 0.5),
        q50_mix: dist.quantile(0.5),
        q95_emp: empirical_quantile(sorted, 1.0 - TAIL_ALPHA),
        q95_mix,
        n_draws: n,
        seed,
    })
}

/// Empirical and mixture CDF on the jump grid of the sample (zero first).
pub fn ecdf_table(sorted: &[f64], dist: &MixtureDist) -> Vec<EcdfPoint> {
    let n = sorted.len();
    let nf = n as f64;
    let zeros = sorted.partition_point(|&v| v <= 0.0);
    let mut out = vec![EcdfPoint {
        t: 0.0,
        f_emp: zeros as f64 / nf,
        f_mix: dist.cdf(0.0),
    }];
    let mut i = zeros;
    while i < n {
        let t = sorted[i];
        let j = i + sorted[i..].partition_point(|&v| v <= t);
        out.push(EcdfPoint {
            t,
            f_emp: j as f64 / nf,
            f_mix: dist.cdf(t),
        });
        i = j;
    }
    out
}

/// Simulates the experiment and compares it with `dist`.
pub fn run_experiment(cfg: &ExperimentConfig, dist: &MixtureDist) -> Result<DiagnosticsReport> {
    let sample = simulate_lrs(cfg)?;
    diagnostics(&sample, dist, cfg.seed)
}

use std::fs;
use std::path::Path;

use chibar_core::seed::derive_seed;
use chibar_core::sim::{diagnostics, ecdf_table, simulate_lrs};
use chibar_core::suites::{run_suite, suite_cells};
use chibar_core::{
    gen_covariance, CovGenSpec, CovSpec, ExperimentConfig, MethodSpec, MixtureDist, PartitionSpec,
    QmcBudget, SuiteOptions, SymMatrix, WeightEngine, WeightVector,
};
use serde::Serialize;

use crate::args::{
    CovArg, ProblemArgs, QmcArgs, SimulateArgs, ValidateArgs, WeightsArgs, WeightsChoice,
};
use crate::error::CliError;
use crate::output::{self, Manifest};

/// Raw weight sums further than this from one are reported.
const RAW_SUM_WARNING: f64 = 0.01;

fn budget(q: &QmcArgs) -> Result<QmcBudget, CliError> {
    if q.qmc_points == 0 || q.qmc_shifts < 2 || q.qmc_tol.is_nan() || q.qmc_tol < 0.0 {
        return Err(CliError::Usage(
            "QMC budget needs points >= 1, shifts >= 2 and a nonnegative tolerance".into(),
        ));
    }
    Ok(QmcBudget::new(q.qmc_points, q.qmc_shifts).with_tolerance(q.qmc_tol))
}

fn read_cov_file(path: &Path, k: usize) -> Result<SymMatrix, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_whitespace()
                .map(|x| x.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if rows.len() != k || rows.iter().any(|r| r.len() != k) {
        return Err(CliError::Usage(format!(
            "{}: expected {k} lines of {k} numbers",
            path.display()
        )));
    }
    let max_asym = (0..k)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .map(|(i, j)| (rows[i][j] - rows[j][i]).abs())
        .fold(0.0, f64::max);
    if max_asym > 1e-12 {
        return Err(CliError::Usage(format!(
            "{}: matrix is not symmetric",
            path.display()
        )));
    }
    Ok(SymMatrix::from_rows(&rows)?)
}

#[derive(Serialize)]
struct CovRecord {
    source: String,
    sigma: Vec<Vec<f64>>,
    attempts: Option<usize>,
}

fn resolve_cov(arg: &CovArg, k: usize) -> Result<(CovSpec, CovRecord), CliError> {
    let (sigma, source) = match arg {
        CovArg::File(path) => {
            let sigma = CovSpec::new(read_cov_file(path, k)?)?;
            (sigma, format!("file:{}", path.display()))
        }
        other => {
            let spec = match *other {
                CovArg::Identity => CovGenSpec::identity(k),
                CovArg::Equicorr(rho) => CovGenSpec::equicorr(k, rho),
                CovArg::Mild(s) => CovGenSpec::mild(k, s),
                CovArg::Strong(s) => CovGenSpec::strong(k, s),
                CovArg::File(_) => unreachable!(),
            };
            (gen_covariance(&spec)?, spec.label())
        }
    };
    if let Some((row, col, value)) = sigma.negative_entry() {
        return Err(chibar_core::ChibarError::NegativeCorrelation { row, col, value }.into());
    }
    let record = CovRecord {
        source,
        sigma: sigma.sigma.rows(),
        attempts: sigma.attempts,
    };
    Ok((sigma, record))
}

fn resolve_partition(p: &ProblemArgs) -> Result<PartitionSpec, CliError> {
    let k = p.k;
    let part = match (&p.poi, &p.nuisance) {
        (None, None) => PartitionSpec::last_m(k, p.m.unwrap_or(0))?,
        (Some(poi), None) => {
            let rest = (0..k).filter(|i| !poi.contains(i)).collect();
            PartitionSpec::new(k, poi.clone(), rest)?
        }
        (None, Some(nuis)) => {
            let rest = (0..k).filter(|i| !nuis.contains(i)).collect();
            PartitionSpec::new(k, rest, nuis.clone())?
        }
        (Some(poi), Some(nuis)) => PartitionSpec::new(k, poi.clone(), nuis.clone())?,
    };
    if part.p() == 0 {
        return Err(CliError::Usage(
            "at least one parameter of interest is required".into(),
        ));
    }
    Ok(part)
}

fn warn_raw_sum(w: &WeightVector) {
    if (w.raw_sum - 1.0).abs() > RAW_SUM_WARNING {
        eprintln!(
            "warning: raw weights summed to {:.6} before normalisation; increase the QMC budget",
            w.raw_sum
        );
    }
}

#[derive(Serialize)]
struct WeightsConfig<'a> {
    k: usize,
    poi: &'a [usize],
    nuisance: &'a [usize],
    cov: CovRecord,
    method: String,
    qmc: QmcBudget,
    weights: &'a WeightVector,
}

pub fn weights(args: &WeightsArgs) -> Result<(), CliError> {
    let p = &args.problem;
    let part = resolve_partition(p)?;
    let (sigma, cov) = resolve_cov(&p.cov, p.k)?;
    let budget = budget(&p.qmc)?;
    let engine = WeightEngine::new(&sigma, budget, p.seed)?;
    let w = engine.weights(&part, args.method)?;
    warn_raw_sum(&w);

    output::ensure_dir(&p.out)?;
    output::write_weights(&p.out.join("weights.csv"), &w)?;
    let config = WeightsConfig {
        k: p.k,
        poi: part.poi(),
        nuisance: part.nuisance(),
        cov,
        method: args.method.to_string(),
        qmc: budget,
        weights: &w,
    };
    output::write_json(
        &p.out.join("manifest.json"),
        &Manifest::new("weights", &config, p.seed),
    )
}

fn auto_method(sigma: &CovSpec, part: &PartitionSpec) -> MethodSpec {
    if sigma.sigma.is_diagonal() {
        MethodSpec::Orthogonal
    } else {
        match part.m() {
            0 => MethodSpec::Exact,
            1 => MethodSpec::Theorem1,
            _ => MethodSpec::Rank {
                tol: chibar_core::weights::DEFAULT_RANK_TOL,
            },
        }
    }
}

#[derive(Serialize)]
struct SimulateConfig<'a> {
    k: usize,
    poi: &'a [usize],
    nuisance: &'a [usize],
    cov: CovRecord,
    weights_method: String,
    weights_seed: u64,
    qmc: QmcBudget,
    n_draws: usize,
    streams: usize,
    jobs: usize,
    weights: &'a WeightVector,
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let p = &args.problem;
    if args.n == 0 || args.streams == 0 {
        return Err(CliError::Usage("--n and --streams must be positive".into()));
    }
    let part = resolve_partition(p)?;
    let (sigma, cov) = resolve_cov(&p.cov, p.k)?;
    let budget = budget(&p.qmc)?;
    let method = match args.weights_method {
        WeightsChoice::Auto => auto_method(&sigma, &part),
        WeightsChoice::Method(m) => m,
    };
    let weights_seed = derive_seed(p.seed, &[u64::MAX]);
    let engine = WeightEngine::new(&sigma, budget, weights_seed)?;
    let w = engine.weights(&part, method)?;
    warn_raw_sum(&w);
    let dist = MixtureDist::new(w.clone())?;

    let cfg = ExperimentConfig::new(sigma, part.clone())
        .with_draws(args.n)
        .with_seed(p.seed)
        .with_streams(args.streams);
    let sorted = simulate_lrs(&cfg)?;
    let report = diagnostics(&sorted, &dist, p.seed)?;

    output::ensure_dir(&p.out)?;
    output::write_json(&p.out.join("report.json"), &report)?;
    output::write_ecdf(&p.out.join("ecdf.csv"), &ecdf_table(&sorted, &dist))?;
    let config = SimulateConfig {
        k: p.k,
        poi: part.poi(),
        nuisance: part.nuisance(),
        cov,
        weights_method: method.to_string(),
        weights_seed,
        qmc: budget,
        n_draws: args.n,
        streams: args.streams,
        jobs: args.jobs,
        weights: &w,
    };
    output::write_json(
        &p.out.join("manifest.json"),
        &Manifest::new("simulate", &config, p.seed),
    )
}

#[derive(Serialize)]
struct ValidateConfig<'a> {
    suite: &'a str,
    options: SuiteOptions,
    jobs: usize,
    cells: Vec<chibar_core::CellSpec>,
}

pub fn validate(args: &ValidateArgs) -> Result<(), CliError> {
    if args.n == 0 || args.streams == 0 || args.cov_seeds == 0 {
        return Err(CliError::Usage(
            "--n, --streams and --cov-seeds must be positive".into(),
        ));
    }
    if !(args.rank_tol > 0.0 && args.rank_tol < 1.0) {
        return Err(CliError::Usage(format!(
            "--rank-tol must lie in (0, 1), got {}",
            args.rank_tol
        )));
    }
    let opts = SuiteOptions {
        seed: args.seed,
        n_draws: args.n,
        streams: args.streams,
        cov_seeds: args.cov_seeds,
        rank_tol: args.rank_tol,
        budget: budget(&args.qmc)?,
    };
    let results = run_suite(args.suite, &opts, args.jobs > 1)?;
    for r in &results {
        warn_raw_sum(&r.weights);
    }

    let name = args.suite.name();
    output::ensure_dir(&args.out)?;
    output::write_sweep(&args.out.join("sweep.csv"), name, &results)?;
    for r in &results {
        let dir = args.out.join(r.cell.name());
        output::ensure_dir(&dir)?;
        output::write_json(&dir.join("report.json"), &r.report)?;
    }
    let config = ValidateConfig {
        suite: name,
        options: opts,
        jobs: args.jobs,
        cells: suite_cells(args.suite, &opts),
    };
    output::write_json(
        &args.out.join("manifest.json"),
        &Manifest::new("validate", &config, args.seed),
    )
}

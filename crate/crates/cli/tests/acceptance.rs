//! Acceptance criteria, one pass/fail line each. Runs as a plain binary so
//! the lines are always printed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use chibar_core::cone::Cone;
use chibar_core::numkit::SymMatrix;
use chibar_core::orthant::{orthant_prob, orthant_prob_mc, orthant_prob_qmc};
use chibar_core::seed::substream;
use chibar_core::suites::run_suite;
use chibar_core::weights::{
    delta_orthogonal, rank_based_from_masses, weights_orthogonal_nuisance, weights_orthogonal_point,
};
use chibar_core::{
    gen_covariance, CellResult, CovGenSpec, CovSpec, PartitionSpec, QmcBudget, Suite, SuiteOptions,
};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn suite(s: Suite) -> Vec<CellResult> {
    run_suite(s, &SuiteOptions::default(), false).expect("suite runs")
}

fn describe(r: &CellResult) -> String {
    format!(
        "K={} m={} cov={} d_inf={:.4} tail={:.3}",
        r.cell.k,
        r.cell.m,
        r.cell.cov.label(),
        r.report.d_inf,
        r.report.tail_ratio
    )
}

fn rational(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

fn binomial_over_pow2(n: usize, j: usize) -> BigRational {
    let c = if j > n {
        BigInt::zero()
    } else {
        (0..j).fold(BigInt::one(), |acc, i| {
            acc * BigInt::from(n - i) / BigInt::from(i + 1)
        })
    };
    BigRational::new(c, BigInt::one() << n)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut checked = 0;
    for k in 2..=20 {
        let point = weights_orthogonal_point(k).map_err(|e| e.to_string())?;
        for m in 1..k {
            let delta = delta_orthogonal(k, m).map_err(|e| e.to_string())?;
            let nuis = weights_orthogonal_nuisance(k, m).map_err(|e| e.to_string())?;
            let sum: BigRational = delta.deltas.iter().map(|&d| rational(d)).sum();
            check(sum.is_zero(), || {
                format!("delta sum nonzero at k={k}, m={m}")
            })?;
            for j in 0..=k {
                let lhs = rational(point.weights[j]) + rational(delta.deltas[j]);
                let want = binomial_over_pow2(k - m, j);
                check(lhs == want && rational(nuis.weights[j]) == want, || {
                    format!("identity fails at k={k}, m={m}, j={j}")
                })?;
                check(
                    rational(point.weights[j]) == binomial_over_pow2(k, j),
                    || format!("point weight wrong at k={k}, j={j}"),
                )?;
            }
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(1), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!("{checked} (k, m) pairs exact in {elapsed:.2?}"))
}

fn criterion_2() -> Outcome {
    let mut cells = suite(Suite::Lemma1);
    cells.extend(suite(Suite::Lemma2));
    check(cells.len() == 6, || format!("{} cells", cells.len()))?;
    for r in &cells {
        check(r.report.d_inf <= 0.01, || describe(r))?;
    }
    let worst = cells.iter().map(|r| r.report.d_inf).fold(0.0, f64::max);
    Ok(format!("6 cells, max D_inf {worst:.4}"))
}

fn random_pd(d: usize, rng: &mut impl Rng) -> SymMatrix {
    let b: Vec<f64> = (0..d * d).map(|_| rng.sample(StandardNormal)).collect();
    let mut m = SymMatrix::zeros(d);
    for i in 0..d {
        for j in 0..=i {
            let v: f64 = (0..d).map(|k| b[i * d + k] * b[j * d + k]).sum();
            m.set(i, j, v + if i == j { 0.1 * d as f64 } else { 0.0 });
        }
    }
    m
}

fn criterion_3() -> Outcome {
    let budget = QmcBudget::default();
    let mut rng = substream(3, 0);
    let mut worst2: f64 = 0.0;
    for i in 0..50 {
        let r: f64 = rng.random_range(-0.99..0.99);
        let g = SymMatrix::from_rows(&[vec![1.0, r], vec![r, 1.0]]).unwrap();
        let exact = orthant_prob(&g, budget, 0).unwrap().value;
        let q = orthant_prob_qmc(&g, budget, i).unwrap().value;
        worst2 = worst2.max((exact - q).abs());
        check((exact - q).abs() <= 1e-3, || {
            format!("d=2 r={r}: {exact} vs {q}")
        })?;
    }
    let mut worst_z: f64 = 0.0;
    for i in 0..50u64 {
        let d = 4 + (i % 5) as usize;
        let g = random_pd(d, &mut rng);
        let q = orthant_prob(&g, budget, 100 + i).unwrap();
        let mc = orthant_prob_mc(&g, 1_000_000, 200 + i).unwrap();
        let z = (q.value - mc.value).abs() / (q.std_error.powi(2) + mc.std_error.powi(2)).sqrt();
        worst_z = worst_z.max(z);
        check(z <= 3.0, || {
            format!("d={d} case {i}: qmc {q:?} vs mc {mc:?} ({z:.2}σ)")
        })?;
    }
    Ok(format!(
        "d=2 max gap {worst2:.2e}; d=4..8 max {worst_z:.2}σ"
    ))
}

fn criterion_4() -> Outcome {
    let budget = QmcBudget::default();
    let mut worst: f64 = 0.0;
    let mut worst_even: f64 = 0.0;
    for i in 0..20u64 {
        let k = 2 + (i % 5) as usize;
        let spec = if i % 2 == 0 {
            CovGenSpec::mild(k, 40 + i)
        } else {
            CovGenSpec::strong(k, 40 + i)
        };
        let sigma = gen_covariance(&spec).map_err(|e| e.to_string())?;
        let cone = Cone::build(&sigma).map_err(|e| e.to_string())?;
        let face = cone
            .intrinsic_volumes(budget, i)
            .map_err(|e| e.to_string())?;
        let oracle = cone
            .intrinsic_volumes_mc(200_000, 1000 + i)
            .map_err(|e| e.to_string())?;
        for j in 0..=k {
            let sd = (face.std_errors[j].powi(2) + oracle.std_errors[j].powi(2)).sqrt();
            let z = (face.weights[j] - oracle.weights[j]).abs() / sd.max(1e-300);
            worst = worst.max(z);
            check(z <= 3.0, || {
                format!(
                    "{} j={j}: face {:.5} oracle {:.5} ({z:.2}σ)",
                    spec.label(),
                    face.weights[j],
                    oracle.weights[j]
                )
            })?;
        }
        let even: f64 = face.weights.iter().step_by(2).sum();
        let sd = face.std_errors.iter().map(|s| s * s).sum::<f64>().sqrt();
        let z = (even - 0.5).abs() / sd.max(1e-12);
        worst_even = worst_even.max(z);
        check(z <= 3.0, || {
            format!("{} even mass {even} ({z:.2}σ)", spec.label())
        })?;
    }
    Ok(format!(
        "20 cones, max {worst:.2}σ; even/odd max {worst_even:.2}σ"
    ))
}

fn criterion_5() -> Outcome {
    let cells = suite(Suite::Thm1Mild);
    check(cells.len() == 15, || format!("{} cells", cells.len()))?;
    let med = median(cells.iter().map(|r| r.report.d_inf).collect());
    check(med <= 0.05, || format!("median D_inf {med:.4}"))?;
    for r in &cells {
        check((0.75..=1.25).contains(&r.report.tail_ratio), || describe(r))?;
    }
    let (lo, hi) = tail_range(&cells);
    Ok(format!("median D_inf {med:.4}, tail in [{lo:.3}, {hi:.3}]"))
}

fn tail_range(cells: &[CellResult]) -> (f64, f64) {
    cells
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r.report.tail_ratio), hi.max(r.report.tail_ratio))
        })
}

fn criterion_6() -> Outcome {
    let cells = suite(Suite::Thm1Strong);
    check(cells.len() == 15, || format!("{} cells", cells.len()))?;
    for r in &cells {
        check(r.report.d_inf < 0.1, || describe(r))?;
        check((0.6..=1.6).contains(&r.report.tail_ratio), || describe(r))?;
    }
    let worst = cells.iter().map(|r| r.report.d_inf).fold(0.0, f64::max);
    let (lo, hi) = tail_range(&cells);
    Ok(format!("max D_inf {worst:.4}, tail in [{lo:.3}, {hi:.3}]"))
}

fn criterion_7() -> Outcome {
    let cells = suite(Suite::Thm1EquicorrSweep);
    check(cells.len() == 9, || format!("{} cells", cells.len()))?;
    let rho = 0.5;
    for r in &cells {
        let k = r.cell.k as f64;
        let want = (k - 1.0) * rho / (1.0 + (k - 2.0) * rho);
        check((r.anisotropy - want).abs() <= 1e-12, || {
            format!("K={}: delta {} vs {want}", r.cell.k, r.anisotropy)
        })?;
        check(r.report.d_inf <= 0.05, || describe(r))?;
    }
    let d: Vec<f64> = cells.iter().map(|r| r.report.d_inf).collect();
    let med = median(d.clone());
    for r in &cells {
        check(r.report.d_inf <= 2.0 * med, || {
            format!("{} exceeds twice the median {med:.4}", describe(r))
        })?;
    }
    let row: Vec<String> = d.iter().map(|x| format!("{x:.4}")).collect();
    Ok(format!("D_inf by K=2..10: {}", row.join(" ")))
}

fn criterion_8() -> Outcome {
    let budget = QmcBudget::default();
    let mut partitions = 0;
    for k in 1..=10usize {
        let diag: Vec<f64> = (0..k).map(|i| 0.5 + i as f64).collect();
        let sigma = CovSpec::new(SymMatrix::from_diag(&diag)).map_err(|e| e.to_string())?;
        let cone = Cone::build(&sigma).map_err(|e| e.to_string())?;
        let masses = cone
            .face_masses(budget, k as u64)
            .map_err(|e| e.to_string())?;
        for mask in 0u32..(1 << k) {
            let poi: Vec<usize> = (0..k).filter(|i| mask >> i & 1 == 0).collect();
            let nuis: Vec<usize> = (0..k).filter(|i| mask >> i & 1 == 1).collect();
            if poi.is_empty() {
                continue;
            }
            let p = poi.len();
            let part = PartitionSpec::new(k, poi, nuis).map_err(|e| e.to_string())?;
            let want = weights_orthogonal_point(p)
                .map_err(|e| e.to_string())?
                .weights;
            for tol in [0.01, 0.1, 0.5] {
                let w = rank_based_from_masses(&cone, &masses, &part, tol)
                    .map_err(|e| e.to_string())?;
                check(w.weights == want, || {
                    format!("K={k} mask={mask:b} tol={tol}: {:?}", w.weights)
                })?;
            }
            partitions += 1;
        }
    }
    Ok(format!("{partitions} partitions x 3 tolerances exact"))
}

fn criterion_9() -> Outcome {
    let mild = suite(Suite::RankMild);
    let strong = suite(Suite::RankStrong);
    let eq = suite(Suite::RankEquicorrSweep);
    let sweep = suite(Suite::RankMSweep);
    for r in mild.iter().chain(&strong).chain(&eq).chain(&sweep) {
        let w = &r.weights.weights;
        check(
            w.iter().all(|&x| x >= 0.0) && (w.iter().sum::<f64>() - 1.0).abs() < 1e-12,
            || format!("invalid weights {w:?} in {}", describe(r)),
        )?;
    }
    check(sweep.len() == 9, || {
        format!("{} m-sweep cells", sweep.len())
    })?;
    for r in &sweep {
        check(r.report.d_inf <= 0.20, || describe(r))?;
    }
    let k4: Vec<&CellResult> = mild.iter().filter(|r| r.cell.k == 4).collect();
    check(!k4.is_empty(), || "no K=4 mild cells".into())?;
    for r in &k4 {
        check(r.report.d_inf <= 0.10, || describe(r))?;
    }
    let m9 = sweep.last().unwrap().report.d_inf;
    let k4_max = k4.iter().map(|r| r.report.d_inf).fold(0.0, f64::max);
    Ok(format!(
        "m-sweep D_inf at m=9 {m9:.4}; K=4 mild max {k4_max:.4}"
    ))
}

fn chibar(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_chibar"))
        .args(args)
        .env_remove("CHIBAR_DEFAULT_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), || {
        format!(
            "chibar {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Re-runs a command from the `args` recorded in its manifest, with the
/// output directory swapped.
fn rerun_from_manifest(dir: &Path, new_out: &Path) -> Result<(), String> {
    let manifest: serde_json::Value =
        serde_json::from_slice(&read(&dir.join("manifest.json"))).map_err(|e| e.to_string())?;
    let args: Vec<String> = manifest["args"]
        .as_array()
        .ok_or("manifest without args")?
        .iter()
        .skip(1)
        .map(|v| v.as_str().unwrap_or_default().to_string())
        .collect();
    let mut replaced = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        if a == "--out" {
            it.next();
            replaced.push(a);
            replaced.push(new_out.display().to_string());
        } else {
            replaced.push(a);
        }
    }
    let refs: Vec<&str> = replaced.iter().map(String::as_str).collect();
    chibar(&refs)
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| tmp.path().join(name);
    let sim = |out: &Path, jobs: &str| {
        chibar(&[
            "simulate",
            "--k",
            "5",
            "--m",
            "2",
            "--cov",
            "mild:3",
            "--n",
            "20000",
            "--seed",
            "17",
            "--jobs",
            jobs,
            "--out",
            out.to_str().unwrap(),
        ])
    };
    sim(&p("a"), "1")?;
    sim(&p("b"), "4")?;
    rerun_from_manifest(&p("a"), &p("c"))?;
    for other in ["b", "c"] {
        for file in ["report.json", "ecdf.csv"] {
            check(
                read(&p("a").join(file)) == read(&p(other).join(file)),
                || format!("simulate {file} differs between a and {other}"),
            )?;
        }
    }

    let val = |out: &Path, jobs: &str| {
        chibar(&[
            "validate",
            "rank-mild",
            "--cov-seeds",
            "2",
            "--n",
            "5000",
            "--seed",
            "5",
            "--qmc-points",
            "256",
            "--jobs",
            jobs,
            "--out",
            out.to_str().unwrap(),
        ])
    };
    val(&p("v1"), "1")?;
    val(&p("v2"), "3")?;
    rerun_from_manifest(&p("v1"), &p("v3"))?;
    let mut files = vec!["sweep.csv".to_string()];
    for entry in std::fs::read_dir(p("v1")).map_err(|e| e.to_string())? {
        let entry = entry.map_err(|e| e.to_string())?;
        if entry.path().is_dir() {
            files.push(format!(
                "{}/report.json",
                entry.file_name().to_string_lossy()
            ));
        }
    }
    for other in ["v2", "v3"] {
        for f in &files {
            check(read(&p("v1").join(f)) == read(&p(other).join(f)), || {
                format!("validate {f} differs between v1 and {other}")
            })?;
        }
    }
    Ok(format!(
        "simulate and validate ({} files) byte-identical across --jobs and manifest re-runs",
        files.len()
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        (
            1,
            "orthogonal identities in rational arithmetic",
            criterion_1,
        ),
        (2, "lemma validation cells", criterion_2),
        (
            3,
            "orthant probabilities vs closed form and plain MC",
            criterion_3,
        ),
        (4, "face formula vs projection oracle", criterion_4),
        (
            5,
            "one-nuisance approximation, mild correlations",
            criterion_5,
        ),
        (
            6,
            "one-nuisance approximation, strong correlations",
            criterion_6,
        ),
        (7, "equicorrelation sweep", criterion_7),
        (
            8,
            "rank-based weights exact under orthogonality",
            criterion_8,
        ),
        (9, "rank-based weights, correlated regime", criterion_9),
        (10, "determinism", criterion_10),
    ];
    let filter: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS ({secs:.1}s) {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL ({secs:.1}s) {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

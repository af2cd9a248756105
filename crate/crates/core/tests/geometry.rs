use chibar_core::cone::{AngleConvention, Cone};
use chibar_core::cov::{gen_covariance, CovGenSpec, CovSpec};
use chibar_core::numkit::{dot, SymMatrix};
use chibar_core::orthant::QmcBudget;
use chibar_core::sim::lrt_statistic;
use chibar_core::weights::PartitionSpec;
use proptest::prelude::*;

fn random_cov(k: usize, seed: u64, strong: bool) -> CovSpec {
    let spec = if strong {
        CovGenSpec::strong(k, seed)
    } else {
        CovGenSpec::mild(k, seed)
    };
    gen_covariance(&spec).unwrap()
}

fn cone_and_point() -> impl Strategy<Value = (Cone, Vec<f64>)> {
    (2usize..=7, any::<u64>(), any::<bool>()).prop_flat_map(|(k, seed, strong)| {
        let cone = Cone::build(&random_cov(k, seed, strong)).unwrap();
        (Just(cone), prop::collection::vec(-3.0f64..3.0, k))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn projection_is_optimal((cone, z) in cone_and_point()) {
        let k = cone.k();
        let all: Vec<usize> = (0..k).collect();
        let p = cone.project(&z, &all).unwrap();
        let r: Vec<f64> = z.iter().zip(&p.point).map(|(a, b)| a - b).collect();
        for i in 0..k {
            let a = cone.generators().column(i);
            let g = dot(&r, &a);
            prop_assert!(g <= 1e-8, "generator {i}: {g}");
            if p.coefficients[i] > 1e-10 {
                prop_assert!(g.abs() <= 1e-8, "active generator {i}: {g}");
            }
            prop_assert!(p.coefficients[i] >= 0.0);
        }
    }

    #[test]
    fn projection_is_idempotent((cone, z) in cone_and_point()) {
        let all: Vec<usize> = (0..cone.k()).collect();
        let once = cone.project(&z, &all).unwrap().point;
        let twice = cone.project(&once, &all).unwrap().point;
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn statistic_shrinks_as_null_grows((cone, z) in cone_and_point(), cut in 0usize..7) {
        let k = cone.k();
        let cut = cut.min(k - 1);
        // Nuisance sets {cut+1..k} ⊆ {cut..k}: larger null cone.
        let small = PartitionSpec::new(k, (0..=cut).collect(), ((cut + 1)..k).collect()).unwrap();
        let large = PartitionSpec::new(k, (0..cut).collect(), (cut..k).collect()).unwrap();
        let a = lrt_statistic(&cone, &small, &z).unwrap();
        let b = lrt_statistic(&cone, &large, &z).unwrap();
        prop_assert!(b >= 0.0);
        prop_assert!(a >= b - 1e-9, "{a} < {b}");
    }
}

#[test]
fn even_and_odd_volumes_balance() {
    for (k, seed) in [(2, 1), (3, 2), (4, 3), (5, 4), (6, 5)] {
        for strong in [false, true] {
            let cone = Cone::build(&random_cov(k, seed, strong)).unwrap();
            let w = cone.intrinsic_volumes(QmcBudget::default(), seed).unwrap();
            let even: f64 = w.weights.iter().step_by(2).sum();
            let se: f64 = w.std_errors.iter().map(|s| s * s).sum::<f64>().sqrt();
            assert!(
                (even - 0.5).abs() <= 3.0 * se + 1e-9,
                "K={k}: even mass {even}, se {se}"
            );
        }
    }
}

/// A K=3 cone with markedly unequal correlations, where the two internal
/// angle conventions disagree on the two-dimensional faces.
fn skewed_k3() -> CovSpec {
    CovSpec::new(
        SymMatrix::from_rows(&[
            vec![1.0, 0.8, 0.3],
            vec![0.8, 1.0, 0.6],
            vec![0.3, 0.6, 1.0],
        ])
        .unwrap(),
    )
    .unwrap()
}

#[test]
fn classical_convention_matches_projection_oracle() {
    let n = 400_000;
    for sigma in [
        skewed_k3(),
        random_cov(3, 11, true),
        random_cov(3, 12, false),
    ] {
        let classical = Cone::build_with(&sigma, AngleConvention::Classical).unwrap();
        let exact = classical
            .intrinsic_volumes(QmcBudget::default(), 0)
            .unwrap();
        let oracle = classical.intrinsic_volumes_mc(n, 7).unwrap();
        for j in 0..=3 {
            let diff = (exact.weights[j] - oracle.weights[j]).abs();
            assert!(
                diff <= 3.0 * oracle.std_errors[j] + 1e-12,
                "j={j}: {exact:?} vs {oracle:?}"
            );
        }
    }
}

#[test]
fn other_convention_is_rejected_by_the_oracle() {
    let sigma = skewed_k3();
    let cone = Cone::build_with(&sigma, AngleConvention::InverseBlock).unwrap();
    let w = cone.intrinsic_volumes(QmcBudget::default(), 0).unwrap();
    let oracle = cone.intrinsic_volumes_mc(400_000, 7).unwrap();
    let worst = (0..=3)
        .map(|j| (w.weights[j] - oracle.weights[j]).abs() / oracle.std_errors[j])
        .fold(0.0, f64::max);
    assert!(worst > 6.0, "conventions indistinguishable here: {worst}σ");
}

#[test]
fn conventions_agree_on_the_orthant() {
    let sigma = CovSpec::identity(4).unwrap();
    let a = Cone::build_with(&sigma, AngleConvention::Classical).unwrap();
    let b = Cone::build_with(&sigma, AngleConvention::InverseBlock).unwrap();
    let budget = QmcBudget::default();
    assert_eq!(
        a.intrinsic_volumes(budget, 0).unwrap().weights,
        b.intrinsic_volumes(budget, 0).unwrap().weights
    );
}

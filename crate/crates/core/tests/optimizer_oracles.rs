use cold_core::density::DensityModel;
use cold_core::math::LN_2PI;
use cold_core::optimizer::{maximize_constrained, OptConfig, Termination};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn standard_normal(d: usize) -> DensityModel {
    DensityModel::build(&[(vec![0.0; d], vec![1.0; d])]).unwrap()
}

/// Threshold whose feasible set is the Euclidean ball of radius r.
fn ball_eta(d: usize, r: f64) -> f64 {
    -0.5 * d as f64 * LN_2PI - 0.5 * r * r
}

fn random_target(rng: &mut ChaCha8Rng, d: usize, r: f64) -> Vec<f64> {
    let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
    let len = rng.random_range(1.1 * r..5.0 * r);
    dir.iter().map(|x| x * len / norm).collect()
}

fn neg_sq_dist(a: &[f64]) -> impl Fn(&[f64]) -> f64 + '_ {
    move |z: &[f64]| -z.iter().zip(a).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
}

#[test]
fn projection_onto_density_ball() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for d in [2, 5] {
        let model = standard_normal(d);
        for _ in 0..20 {
            let r = rng.random_range(0.5..2.0);
            let a = random_target(&mut rng, d, r);
            let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let res = maximize_constrained(
                neg_sq_dist(&a),
                |z: &[f64]| model.exact_log_density(z).unwrap(),
                ball_eta(d, r),
                &vec![0.0; d],
                &OptConfig::default(),
            )
            .unwrap();
            let err = res.point.iter().zip(&a).map(|(p, x)| (p - x * r / norm).powi(2)).sum::<f64>().sqrt();
            assert!(err < 1e-3, "d={d} r={r} err={err} {:?}", res.termination);
            assert!(res.constraint >= -1e-6);
        }
    }
}

#[test]
fn tighter_threshold_never_scores_higher() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for d in [2, 5] {
        let model = standard_normal(d);
        for _ in 0..20 {
            let a = random_target(&mut rng, d, 2.0);
            let mut prev = f64::INFINITY;
            for r in [2.0, 1.5, 1.0, 0.6, 0.3] {
                let res = maximize_constrained(
                    neg_sq_dist(&a),
                    |z: &[f64]| model.exact_log_density(z).unwrap(),
                    ball_eta(d, r),
                    &vec![0.0; d],
                    &OptConfig::default(),
                )
                .unwrap();
                assert!(res.objective <= prev + 1e-6, "r={r}: {} > {prev}", res.objective);
                prev = res.objective;
            }
        }
    }
}

#[test]
fn unconstrained_limit() {
    let a = [0.7, -1.3, 2.2];
    let res = maximize_constrained(neg_sq_dist(&a), |_: &[f64]| 0.0, f64::NEG_INFINITY, &[0.0; 3], &OptConfig::default()).unwrap();
    for (p, x) in res.point.iter().zip(a) {
        assert!((p - x).abs() < 1e-4);
    }
    assert_eq!(res.constraint, f64::INFINITY);
}

#[test]
fn rosenbrock_with_disc_constraint() {
    // known optimum of Rosenbrock on the unit disc: (0.7864, 0.6177)
    let res = maximize_constrained(
        |z: &[f64]| -(100.0 * (z[1] - z[0] * z[0]).powi(2) + (1.0 - z[0]).powi(2)),
        |z: &[f64]| 1.0 - z[0] * z[0] - z[1] * z[1],
        0.0,
        &[0.0, 0.0],
        &OptConfig { max_evals: Some(5000), ..OptConfig::default() },
    )
    .unwrap();
    assert!((res.point[0] - 0.7864).abs() < 2e-3 && (res.point[1] - 0.6177).abs() < 2e-3, "{:?}", res);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn feasible_monotone_deterministic(
        a in prop::collection::vec(-4.0..4.0f64, 3),
        start in prop::collection::vec(-0.5..0.5f64, 3),
        r in 0.9..2.5f64,
        budget in 5usize..200,
    ) {
        let model = standard_normal(3);
        let eta = ball_eta(3, r);
        let cfg = OptConfig { max_evals: Some(budget), ..OptConfig::default() };
        let density = |z: &[f64]| model.exact_log_density(z).unwrap();
        let run = || maximize_constrained(neg_sq_dist(&a), density, eta, &start, &cfg).unwrap();
        let res = run();
        prop_assert!(res.constraint >= -1e-6);
        prop_assert!(density(&res.point) >= eta - 1e-6);
        prop_assert!(res.evaluations <= budget);
        prop_assert!(res.objective >= neg_sq_dist(&a)(&start));
        if res.evaluations < budget {
            prop_assert!(res.termination != Termination::EvalBudget);
        }
        prop_assert_eq!(run(), res);
    }
}

use minstab_core::eigen::{dense_top, dense_top_value, lanczos_top, power_top};
use minstab_core::landscape::{jacobian, loss_hessian, spectrum_report, HessianOperator};
use minstab_core::relu_net::{differentiability_margin, init_params, DIFF_TOL};
use minstab_core::rng::SeededStream;
use minstab_core::{gen_hat_dataset, lambda_max, EigenMethod, InitScheme, NetParams, SymmetricOperator};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Symmetric Gaussian noise of unit spectral scale plus one or two spikes.
fn spiked_matrix(d: usize, s: &mut SeededStream) -> DMatrix<f64> {
    let scale = 1.0 / (2.0 * d as f64).sqrt();
    let mut a = DMatrix::from_fn(d, d, |_, _| s.standard_normal() * scale);
    a = (&a + a.transpose()) * 0.5;
    let spike = |a: &mut DMatrix<f64>, strength: f64, s: &mut SeededStream| {
        let u = DVector::from_fn(d, |_, _| s.standard_normal()).normalize();
        *a += &u * u.transpose() * strength;
    };
    spike(&mut a, s.uniform(2.0, 5.0), s);
    if s.unit() < 0.5 {
        spike(&mut a, -s.uniform(5.0, 10.0), s);
    }
    a
}

#[test]
fn dense_power_and_lanczos_agree_on_random_matrices() {
    let mut s = SeededStream::new(42);
    let mut dims: Vec<usize> = (0..199).map(|_| 2 + (s.unit() * 400.0) as usize).collect();
    dims.push(601);
    for (i, &d) in dims.iter().enumerate() {
        let a = spiked_matrix(d, &mut s);
        let dense = dense_top(&a).value;
        let power = power_top(&a, 1e-12, 100_000).unwrap().value;
        let lanczos = lanczos_top(&a, 1e-12, 100_000).unwrap().value;
        let exact = a.clone().symmetric_eigenvalues().max();
        assert!((dense - exact).abs() <= 1e-10 * exact.abs(), "matrix {i} (d={d})");
        assert!(
            (power - dense).abs() <= 1e-8 * dense.abs(),
            "matrix {i} (d={d}): {power} vs {dense}"
        );
        assert!(
            (lanczos - dense).abs() <= 1e-8 * dense.abs(),
            "matrix {i} (d={d}): {lanczos} vs {dense}"
        );
    }
}

#[test]
fn dense_top_handles_zero_rows() {
    let mut a = DMatrix::<f64>::zeros(6, 6);
    a[(1, 1)] = -2.0;
    a[(1, 4)] = 0.5;
    a[(4, 1)] = 0.5;
    a[(4, 4)] = -1.0;
    let exact = a.clone().symmetric_eigenvalues().max();
    assert!(exact.abs() < 1e-15);
    assert_eq!(dense_top_value(&a), 0.0);
    let top = dense_top(&a);
    assert_eq!(top.value, 0.0);
    let v = DVector::from_vec(top.vector);
    assert!((v.norm() - 1.0).abs() < 1e-12);
    assert!((&a * &v).norm() < 1e-12);

    a[(3, 3)] = 0.25;
    assert!((dense_top_value(&a) - 0.25).abs() < 1e-15);
}

#[test]
fn gauss_newton_is_positive_semidefinite() {
    let data = gen_hat_dataset(30, 0.5, 3, 0.5).unwrap();
    let mut s = SeededStream::new(9);
    for seed in 0..5 {
        let p = init_params(20, InitScheme::UniformFanin, seed).unwrap();
        let jac = jacobian(&p, &data);
        let gn = jac.tr_mul(&jac) / data.n() as f64;
        let mut min_rq = f64::INFINITY;
        for _ in 0..1000 {
            let v = DVector::from_fn(p.dim(), |_, _| s.standard_normal()).normalize();
            min_rq = min_rq.min(v.dot(&(&gn * &v)));
        }
        assert!(min_rq >= -1e-10, "seed {seed}: {min_rq}");
    }
}

#[test]
fn spectrum_methods_agree_on_trained_like_params() {
    let data = gen_hat_dataset(30, 0.5, 1001, 0.5).unwrap();
    for seed in 0..4 {
        let p = init_params(40, InitScheme::UniformFanin, seed).unwrap();
        if differentiability_margin(&p, &data.xs) <= DIFF_TOL {
            continue;
        }
        let dense = spectrum_report(&p, &data, EigenMethod::Dense, DIFF_TOL).unwrap();
        for m in [EigenMethod::Power, EigenMethod::Lanczos] {
            let r = spectrum_report(&p, &data, m, DIFF_TOL).unwrap();
            let tol = 1e-7 * dense.lambda_max_full.abs().max(1.0);
            assert!((r.lambda_max_full - dense.lambda_max_full).abs() <= tol, "{m:?}");
            assert!((r.lambda_max_gn - dense.lambda_max_gn).abs() <= tol, "{m:?}");
        }
        let op = HessianOperator::full(&p, &data, DIFF_TOL).unwrap();
        let full = loss_hessian(&p, &data, DIFF_TOL).unwrap().full;
        assert!((op.to_dense() - &full).amax() < 1e-12);
        let top = lambda_max(&op, EigenMethod::Auto, 1e-10, 10_000).unwrap();
        assert_eq!(top.method, EigenMethod::Dense);
        assert!((top.value - dense.lambda_max_full).abs() < 1e-9);
    }
}

fn random_problem(k: usize, n: usize, seed: u64) -> (NetParams, minstab_core::Dataset) {
    let data = gen_hat_dataset(n, 0.5, seed, 1.0).unwrap();
    let p = init_params(k, InitScheme::UniformFanin, seed ^ 0xabc).unwrap();
    (p, data)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sandwich_holds(k in 1usize..30, n in 2usize..40, seed in any::<u64>()) {
        let (p, data) = random_problem(k, n, seed);
        prop_assume!(differentiability_margin(&p, &data.xs) > DIFF_TOL);
        let r = spectrum_report(&p, &data, EigenMethod::Dense, DIFF_TOL).unwrap();
        prop_assert!(r.sandwich_slack() >= -1e-8, "slack {}", r.sandwich_slack());
        let v = DVector::from_column_slice(&r.top_eigvec);
        let gn = loss_hessian(&p, &data, DIFF_TOL).unwrap().gn;
        let rq = v.dot(&(&gn * &v));
        prop_assert!((rq - r.lambda_max_gn).abs() <= 1e-9 * (1.0 + r.lambda_max_gn));
    }

    #[test]
    fn operator_bound_dominates_spectrum(k in 1usize..30, n in 2usize..40, seed in any::<u64>()) {
        let (p, data) = random_problem(k, n, seed);
        prop_assume!(differentiability_margin(&p, &data.xs) > DIFF_TOL);
        let op = HessianOperator::full(&p, &data, DIFF_TOL).unwrap();
        let eig = op.to_dense().symmetric_eigenvalues();
        let spectral = eig.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        prop_assert!(spectral <= op.norm_bound() * (1.0 + 1e-12));
    }
}

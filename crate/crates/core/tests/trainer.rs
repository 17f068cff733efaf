use minstab_core::landscape::{loss, loss_hessian, residuals, spectrum_report};
use minstab_core::relu_net::{differentiability_margin, init_params, DIFF_TOL};
use minstab_core::rng::SeededStream;
use minstab_core::trainer::{gap_covering_layer, min_norm_interpolant, train, train_from, write_run_dir};
use minstab_core::{gen_counterexample, gen_hat_dataset, Dataset, EigenMethod, InitScheme, TrainConfig};
use nalgebra::{DMatrix, DVector};

fn short_config(seed: u64) -> TrainConfig {
    TrainConfig {
        k: 30,
        max_steps: 3000,
        log_every: 250,
        seed,
        ..Default::default()
    }
}

#[test]
fn identical_runs_write_identical_files() {
    let data = gen_hat_dataset(30, 0.5, 1001, 0.5).unwrap();
    let cfg = short_config(4);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        write_run_dir(d.path(), &train(&cfg, &data).unwrap()).unwrap();
    }
    for f in ["records.csv", "summary.json", "params.json"] {
        let a = std::fs::read(dirs[0].path().join(f)).unwrap();
        let b = std::fs::read(dirs[1].path().join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let header = std::fs::read_to_string(dirs[0].path().join("records.csv")).unwrap();
    assert!(header.starts_with(
        "step,loss,mse,grad_norm,lambda_max_full,lambda_max_gn,weighted_tv,tv_plain,knot_count,diff_margin\n"
    ));
}

#[test]
fn small_steps_descend() {
    let data = gen_hat_dataset(30, 0.5, 77, 0.5).unwrap();
    for seed in 0..10 {
        let init = init_params(50, InitScheme::UniformFanin, seed).unwrap();
        let lam = spectrum_report(&init, &data, EigenMethod::Dense, 0.0)
            .unwrap()
            .lambda_max_full;
        let cfg = TrainConfig {
            k: 50,
            eta: 1.0 / lam,
            max_steps: 100,
            log_every: 1,
            seed,
            ..Default::default()
        };
        let out = train_from(&cfg, &data, init).unwrap();
        for w in out.records.windows(2) {
            assert!(w[1].loss <= w[0].loss, "seed {seed} step {}", w[1].step);
        }
    }
}

#[test]
fn zero_step_run_returns_initialization() {
    let data = gen_hat_dataset(10, 0.5, 1, 0.5).unwrap();
    let cfg = TrainConfig {
        k: 5,
        max_steps: 0,
        ..Default::default()
    };
    let out = train(&cfg, &data).unwrap();
    assert_eq!(out.records.len(), 1);
    assert_eq!(out.params, init_params(5, cfg.init, cfg.seed).unwrap());
}

/// Minimum-norm solution by projecting any particular solution onto the
/// row space, computed from an explicit null-space basis.
fn null_space_oracle(phi: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let (n, p) = phi.shape();
    let square = phi.transpose() * phi;
    let eig = square.clone().symmetric_eigen();
    let smax = eig.eigenvalues.max();
    let null: Vec<DVector<f64>> = (0..p)
        .filter(|&i| eig.eigenvalues[i] <= smax * 1e-12 * n.max(p) as f64)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    let particular = phi.clone().pseudo_inverse(1e-12).unwrap() * y;
    let mut c = particular.clone();
    for z in &null {
        c -= z * z.dot(&particular);
    }
    c
}

#[test]
fn min_norm_interpolant_matches_null_space_oracle() {
    let mut s = SeededStream::new(5);
    for trial in 0..20 {
        let n = 4 + trial % 5;
        let data = gen_counterexample(n, 0.5, trial as u64, 1.0).unwrap();
        let k = n + 2 + trial % 3;
        let (w1, b1) = gap_covering_layer(&data, k, trial as u64).unwrap();
        let fit = min_norm_interpolant(&w1, &b1, &data, true).unwrap();
        let phi = DMatrix::from_fn(n, k + 1, |i, j| {
            if j == k {
                1.0
            } else {
                (w1[j] * data.xs[i] + b1[j]).max(0.0)
            }
        });
        let y = DVector::from_column_slice(&data.ys);
        let oracle = null_space_oracle(&phi, &y);
        let mut got = fit.params.w2.clone();
        got.push(fit.params.b2);
        let got = DVector::from_vec(got);
        assert!((&got - &oracle).norm() <= 1e-8 * (1.0 + oracle.norm()), "trial {trial}");
        for _ in 0..5 {
            let z = DVector::from_fn(k + 1, |_, _| s.standard_normal());
            let null_dir = &z - phi.clone().pseudo_inverse(1e-12).unwrap() * (&phi * &z);
            let other = &got + null_dir;
            assert!(other.norm() >= got.norm() - 1e-10);
        }
        assert!(fit.residual_rms <= 1e-8);
        assert!(loss(&fit.params, &data) <= 1e-16 * n as f64);
        if differentiability_margin(&fit.params, &data.xs) > DIFF_TOL {
            let h = loss_hessian(&fit.params, &data, DIFF_TOL).unwrap();
            assert!(h.residual.amax() <= 1e-7, "trial {trial}: {}", h.residual.amax());
        }
    }
}

#[test]
fn non_interpolating_layer_is_reported() {
    let data = Dataset::new(vec![-1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0], 1.0, None, None, None).unwrap();
    let r = min_norm_interpolant(&[1.0], &[2.0], &data, true);
    assert!(matches!(r, Err(minstab_core::Error::NotInterpolating { .. })));
    let loose = min_norm_interpolant(&[1.0], &[2.0], &data, false).unwrap();
    assert!(loose.residual_rms > 0.1);
    assert!(residuals(&loose.params, &data).iter().all(|r| r.is_finite()));
}

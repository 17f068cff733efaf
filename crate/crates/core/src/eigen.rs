//! Largest eigenvalue of symmetric operators.
//!
//! Three routes are provided. `Dense` materializes the matrix and runs a full
//! symmetric eigendecomposition. `Power` is shifted power iteration on
//! `A + μI`, where `μ` is an upper bound on `‖A‖₂`, so the dominant eigenvalue
//! of the shifted operator is the largest (not the largest-magnitude)
//! eigenvalue of `A`. `Lanczos` is a restarted Krylov iteration with full
//! reorthogonalization for large matrix-free operators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededStream;

/// Dense solves are used up to this dimension when the method is `Auto`.
pub const DENSE_MAX_DIM: usize = 2000;

pub trait SymmetricOperator {
    fn dim(&self) -> usize;

    /// `out = A v`.
    fn apply(&self, v: &[f64], out: &mut [f64]);

    /// Any upper bound on the spectral norm.
    fn norm_bound(&self) -> f64;

    fn to_dense(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        let mut e = vec![0.0; d];
        let mut col = vec![0.0; d];
        for j in 0..d {
            e[j] = 1.0;
            self.apply(&e, &mut col);
            m.column_mut(j).copy_from_slice(&col);
            e[j] = 0.0;
        }
        m
    }
}

impl SymmetricOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let n = self.nrows();
        for (i, o) in out.iter_mut().enumerate().take(n) {
            *o = 0.0;
            for j in 0..n {
                *o += self[(i, j)] * v[j];
            }
        }
    }

    /// Frobenius norm.
    fn norm_bound(&self) -> f64 {
        self.norm()
    }

    fn to_dense(&self) -> DMatrix<f64> {
        self.clone()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenMethod {
    Dense,
    Power,
    Lanczos,
    /// `Dense` up to [`DENSE_MAX_DIM`], `Lanczos` above.
    Auto,
}

impl EigenMethod {
    pub fn resolve(self, dim: usize) -> EigenMethod {
        match self {
            EigenMethod::Auto if dim <= DENSE_MAX_DIM => EigenMethod::Dense,
            EigenMethod::Auto => EigenMethod::Lanczos,
            m => m,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopEigen {
    pub value: f64,
    pub vector: Vec<f64>,
    pub method: EigenMethod,
    pub iterations: usize,
}

/// Largest eigenvalue and a unit eigenvector of a symmetric operator.
pub fn lambda_max(op: &dyn SymmetricOperator, method: EigenMethod, tol: f64, max_iters: usize) -> Result<TopEigen> {
    match method.resolve(op.dim()) {
        EigenMethod::Dense => Ok(dense_top(&op.to_dense())),
        EigenMethod::Power => power_top(op, tol, max_iters),
        EigenMethod::Lanczos => lanczos_top(op, tol, max_iters),
        EigenMethod::Auto => unreachable!(),
    }
}

/// Indices of rows that are not identically zero.
fn support(sym: &DMatrix<f64>) -> Vec<usize> {
    (0..sym.nrows())
        .filter(|&i| sym.row(i).iter().any(|v| *v != 0.0))
        .collect()
}

/// Top eigenpair of the symmetrized matrix `(A + Aᵀ) / 2`.
///
/// Identically zero rows and columns are removed before the decomposition;
/// each contributes an exact zero eigenvalue. The QR iteration behind
/// `SymmetricEigen` can break down on matrices dominated by such rows.
pub fn dense_top(a: &DMatrix<f64>) -> TopEigen {
    let sym = (a + a.transpose()) * 0.5;
    let d = sym.nrows();
    let keep = support(&sym);
    let mut best = (f64::NEG_INFINITY, vec![0.0; d]);
    if keep.len() < d {
        let zero = (0..d).find(|i| !keep.contains(i)).unwrap();
        best.0 = 0.0;
        best.1[zero] = 1.0;
    }
    if !keep.is_empty() {
        let sub = sym.select_rows(&keep).select_columns(&keep);
        let eig = SymmetricEigen::new(sub.clone());
        let top = eig
            .eigenvalues
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, v)| if v > b.1 { (i, v) } else { b });
        if !eig.eigenvalues.iter().all(|v| v.is_finite()) {
            return krylov_fallback(&sym);
        }
        if top.1 > best.0 {
            let mut v = vec![0.0; d];
            for (r, &i) in keep.iter().enumerate() {
                v[i] = eig.eigenvectors[(r, top.0)];
            }
            best = (top.1, v);
        }
    }
    normalize(&mut best.1);
    TopEigen {
        value: best.0,
        vector: best.1,
        method: EigenMethod::Dense,
        iterations: 0,
    }
}

/// Largest eigenvalue only; skips eigenvector accumulation.
pub fn dense_top_value(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    let keep = support(&sym);
    let zero = if keep.len() < sym.nrows() {
        0.0
    } else {
        f64::NEG_INFINITY
    };
    if keep.is_empty() {
        return zero;
    }
    let ev = sym.select_rows(&keep).select_columns(&keep).symmetric_eigenvalues();
    if !ev.iter().all(|v| v.is_finite()) {
        return krylov_fallback(&sym).value;
    }
    ev.iter().copied().fold(zero, f64::max)
}

fn krylov_fallback(sym: &DMatrix<f64>) -> TopEigen {
    let op = BoundedMatrix {
        matrix: sym,
        bound: sym.norm(),
    };
    let mut top = lanczos_top(&op, 1e-14, 100_000)
        .or_else(|e| match e {
            Error::NoConvergence { .. } => power_top(&op, 1e-14, 1_000_000),
            e => Err(e),
        })
        .expect("symmetric eigensolve failed on a finite matrix");
    top.method = EigenMethod::Dense;
    top
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn start_vector(dim: usize) -> Vec<f64> {
    let mut s = SeededStream::new(0x5eed_e16e);
    let mut v: Vec<f64> = (0..dim).map(|_| s.standard_normal()).collect();
    normalize(&mut v);
    v
}

fn residual_norm(op: &dyn SymmetricOperator, v: &[f64], rho: f64) -> f64 {
    let mut av = vec![0.0; v.len()];
    op.apply(v, &mut av);
    av.iter().zip(v).map(|(a, x)| (a - rho * x).powi(2)).sum::<f64>().sqrt()
}

/// Shifted power iteration.
///
/// The Rayleigh quotient `ρ_t` of the shifted operator increases
/// geometrically towards its limit; convergence is declared when the
/// extrapolated remaining gap `δ_t q / (1 - q)` (with `q = δ_t / δ_{t-1}`) drops
/// below `tol (1 + |ρ|)`.
pub fn power_top(op: &dyn SymmetricOperator, tol: f64, max_iters: usize) -> Result<TopEigen> {
    let d = op.dim();
    let shift = 1.0 + op.norm_bound();
    let mut v = start_vector(d);
    let mut w = vec![0.0; d];
    let mut rho = f64::NAN;
    let mut prev_delta = f64::NAN;
    for it in 1..=max_iters {
        op.apply(&v, &mut w);
        let raw = dot(&v, &w);
        w.iter_mut().zip(&v).for_each(|(wi, vi)| *wi += shift * vi);
        let new_rho = raw;
        let scale = 1.0 + new_rho.abs();
        if normalize(&mut w) == 0.0 {
            // v lies in the kernel of A + μI, impossible for μ > ‖A‖
            return Err(Error::NoConvergence {
                iters: it,
                rayleigh: new_rho,
                residual: f64::NAN,
            });
        }
        std::mem::swap(&mut v, &mut w);
        if it > 1 {
            let delta = (new_rho - rho).abs();
            let done = if delta <= 1e-15 * scale {
                true
            } else if prev_delta.is_finite() && prev_delta > 0.0 {
                let q = (delta / prev_delta).min(1.0 - 1e-12);
                delta * q / (1.0 - q) <= tol * scale
            } else {
                false
            };
            prev_delta = delta;
            if done {
                let mut av = vec![0.0; d];
                op.apply(&v, &mut av);
                let value = dot(&v, &av);
                return Ok(TopEigen {
                    value,
                    vector: v,
                    method: EigenMethod::Power,
                    iterations: it,
                });
            }
        }
        rho = new_rho;
    }
    let residual = residual_norm(op, &v, rho);
    Err(Error::NoConvergence {
        iters: max_iters,
        rayleigh: rho,
        residual,
    })
}

/// Restarted Lanczos with full reorthogonalization. Each cycle builds a Krylov
/// basis of up to `min(dim, 60)` vectors, solves the small tridiagonal
/// problem, and restarts from the Ritz vector until the residual
/// `‖A x - θ x‖ <= sqrt(tol) (1 + |θ|)`; the Ritz value error is then of order
/// `tol`.
pub fn lanczos_top(op: &dyn SymmetricOperator, tol: f64, max_iters: usize) -> Result<TopEigen> {
    let d = op.dim();
    let m = d.min(60);
    let mut x = start_vector(d);
    let mut total = 0;
    let mut theta = f64::NAN;
    let mut res = f64::INFINITY;
    while total < max_iters {
        let mut basis: Vec<Vec<f64>> = vec![x.clone()];
        let mut alpha = Vec::with_capacity(m);
        let mut beta: Vec<f64> = Vec::with_capacity(m);
        let mut w = vec![0.0; d];
        for j in 0..m {
            op.apply(&basis[j], &mut w);
            total += 1;
            let a = dot(&w, &basis[j]);
            alpha.push(a);
            for q in &basis {
                let c = dot(&w, q);
                w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
            }
            for q in &basis {
                let c = dot(&w, q);
                w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
            }
            let b = norm(&w);
            if j + 1 == m || b <= 1e-14 * (1.0 + a.abs()) {
                break;
            }
            beta.push(b);
            basis.push(w.iter().map(|wi| wi / b).collect());
        }
        let k = alpha.len();
        let mut t = DMatrix::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = alpha[i];
            if i + 1 < k {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let ritz = dense_top(&t);
        theta = ritz.value;
        let mut next = vec![0.0; d];
        for (c, q) in ritz.vector.iter().zip(&basis) {
            next.iter_mut().zip(q).for_each(|(ni, qi)| *ni += c * qi);
        }
        normalize(&mut next);
        x = next;
        res = residual_norm(op, &x, theta);
        if res <= tol.sqrt() * (1.0 + theta.abs()) || k == d {
            let mut ax = vec![0.0; d];
            op.apply(&x, &mut ax);
            return Ok(TopEigen {
                value: dot(&x, &ax),
                vector: x,
                method: EigenMethod::Lanczos,
                iterations: total,
            });
        }
    }
    Err(Error::NoConvergence {
        iters: total,
        rayleigh: theta,
        residual: res,
    })
}

/// Wraps a dense matrix with a custom norm bound.
pub struct BoundedMatrix<'a> {
    pub matrix: &'a DMatrix<f64>,
    pub bound: f64,
}

impl SymmetricOperator for BoundedMatrix<'_> {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let r = self.matrix * DVector::from_column_slice(v);
        out.copy_from_slice(r.as_slice());
    }
    fn norm_bound(&self) -> f64 {
        self.bound
    }
    fn to_dense(&self) -> DMatrix<f64> {
        self.matrix.clone()
    }
}

//! Training loss `L(θ) = 1/(2n) Σ (f_θ(x_i) - y_i)²`, its derivatives, and the
//! curvature quantities that decide linear stability.
//!
//! The loss Hessian splits into a Gauss-Newton part `(1/n) Σ ∇f ∇fᵀ` and a
//! residual part `(1/n) Σ r_i ∇²f(x_i)`. The residual part only couples
//! `w2_j` with `w1_j` and `b1_j`, so it is block diagonal with per-neuron
//! coefficients `a_j = (1/n) Σ r_i x_i 1_ij` and `c_j = (1/n) Σ r_i 1_ij`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::eigen::{self, EigenMethod, SymmetricOperator, TopEigen};
use crate::error::{Error, Result};
use crate::relu_net::{self, NetParams};

/// Eigensolver tolerance used by [`spectrum_report`].
pub const EIGEN_TOL: f64 = 1e-10;
pub const EIGEN_MAX_ITERS: usize = 200_000;

pub fn residuals(params: &NetParams, data: &Dataset) -> Vec<f64> {
    data.xs
        .iter()
        .zip(&data.ys)
        .map(|(&x, &y)| relu_net::forward(params, x) - y)
        .collect()
}

pub fn loss(params: &NetParams, data: &Dataset) -> f64 {
    let r = residuals(params, data);
    r.iter().map(|v| v * v).sum::<f64>() / (2.0 * data.n() as f64)
}

/// `(1/n) Σ r_i ∇_θ f(x_i)`.
pub fn loss_gradient(params: &NetParams, data: &Dataset) -> Vec<f64> {
    let mut grad = vec![0.0; params.dim()];
    loss_and_gradient_into(params, data, &mut grad);
    grad
}

/// Loss and gradient in one pass; the gradient is written into `grad`.
pub fn loss_and_gradient_into(params: &NetParams, data: &Dataset, grad: &mut [f64]) -> f64 {
    let k = params.k();
    let n = data.n();
    let inv_n = 1.0 / n as f64;
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut sq = 0.0;
    let (gw1, rest) = grad.split_at_mut(k);
    let (gb1, rest) = rest.split_at_mut(k);
    let (gw2, gb2) = rest.split_at_mut(k);
    for (&x, &y) in data.xs.iter().zip(&data.ys) {
        let mut f = params.b2;
        for j in 0..k {
            let u = params.w1[j] * x + params.b1[j];
            if u > 0.0 {
                f += params.w2[j] * u;
            }
        }
        let r = f - y;
        sq += r * r;
        let s = r * inv_n;
        gb2[0] += s;
        for j in 0..k {
            let u = params.w1[j] * x + params.b1[j];
            if u > 0.0 {
                let t = s * params.w2[j];
                gw1[j] += t * x;
                gb1[j] += t;
                gw2[j] += s * u;
            }
        }
    }
    sq * 0.5 * inv_n
}

/// First pre-activation within `diff_tol` of zero, as an error.
pub fn check_twice_differentiable(params: &NetParams, data: &Dataset, diff_tol: f64) -> Result<()> {
    for (i, &x) in data.xs.iter().enumerate() {
        if let Err(Error::NotTwiceDifferentiable {
            neuron, preactivation, ..
        }) = relu_net::check_twice_differentiable(params, x, diff_tol)
        {
            return Err(Error::NotTwiceDifferentiable {
                sample: Some(i),
                neuron,
                preactivation,
            });
        }
    }
    Ok(())
}

/// `n × (3k+1)` matrix whose rows are `∇_θ f(x_i)`.
pub fn jacobian(params: &NetParams, data: &Dataset) -> DMatrix<f64> {
    let d = params.dim();
    let mut j = DMatrix::zeros(data.n(), d);
    let mut row = vec![0.0; d];
    for (i, &x) in data.xs.iter().enumerate() {
        relu_net::param_gradient_into(params, x, &mut row);
        for (c, v) in row.iter().enumerate() {
            j[(i, c)] = *v;
        }
    }
    j
}

/// Per-neuron residual-Hessian coefficients `(a_j, c_j)`.
fn residual_coefficients(params: &NetParams, data: &Dataset, r: &[f64]) -> Vec<(f64, f64)> {
    let inv_n = 1.0 / data.n() as f64;
    (0..params.k())
        .map(|j| {
            let mut a = 0.0;
            let mut c = 0.0;
            for (&x, &ri) in data.xs.iter().zip(r) {
                if params.preactivation(j, x) > 0.0 {
                    a += ri * x;
                    c += ri;
                }
            }
            (a * inv_n, c * inv_n)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct LossHessian {
    pub full: DMatrix<f64>,
    pub gn: DMatrix<f64>,
    pub residual: DMatrix<f64>,
}

pub fn loss_hessian(params: &NetParams, data: &Dataset, diff_tol: f64) -> Result<LossHessian> {
    check_twice_differentiable(params, data, diff_tol)?;
    let jac = jacobian(params, data);
    let gn = jac.tr_mul(&jac) / data.n() as f64;
    let lay = params.layout();
    let r = residuals(params, data);
    let mut residual = DMatrix::zeros(lay.dim(), lay.dim());
    for (j, (a, c)) in residual_coefficients(params, data, &r).into_iter().enumerate() {
        residual[(lay.w1(j), lay.w2(j))] = a;
        residual[(lay.w2(j), lay.w1(j))] = a;
        residual[(lay.b1(j), lay.w2(j))] = c;
        residual[(lay.w2(j), lay.b1(j))] = c;
    }
    let full = &gn + &residual;
    Ok(LossHessian { full, gn, residual })
}

/// Matrix-free loss Hessian (or just its Gauss-Newton part).
pub struct HessianOperator<'a> {
    params: &'a NetParams,
    data: &'a Dataset,
    coeffs: Option<Vec<(f64, f64)>>,
    bound: f64,
}

impl<'a> HessianOperator<'a> {
    pub fn full(params: &'a NetParams, data: &'a Dataset, diff_tol: f64) -> Result<Self> {
        check_twice_differentiable(params, data, diff_tol)?;
        let r = residuals(params, data);
        let coeffs = residual_coefficients(params, data, &r);
        let block = coeffs.iter().fold(0.0_f64, |m, (a, c)| m.max((a * a + c * c).sqrt()));
        let bound = gn_trace(params, data) + block;
        Ok(Self {
            params,
            data,
            coeffs: Some(coeffs),
            bound,
        })
    }

    pub fn gauss_newton(params: &'a NetParams, data: &'a Dataset) -> Self {
        Self {
            params,
            data,
            coeffs: None,
            bound: gn_trace(params, data),
        }
    }
}

/// `trace((1/n) Σ ∇f ∇fᵀ) = (1/n) Σ ‖∇f(x_i)‖²`, an upper bound on the GN norm.
fn gn_trace(params: &NetParams, data: &Dataset) -> f64 {
    let mut g = vec![0.0; params.dim()];
    let mut t = 0.0;
    for &x in &data.xs {
        relu_net::param_gradient_into(params, x, &mut g);
        t += g.iter().map(|v| v * v).sum::<f64>();
    }
    t / data.n() as f64
}

impl SymmetricOperator for HessianOperator<'_> {
    fn dim(&self) -> usize {
        self.params.dim()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let p = self.params;
        let lay = p.layout();
        let inv_n = 1.0 / self.data.n() as f64;
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut g = vec![0.0; p.dim()];
        for &x in &self.data.xs {
            relu_net::param_gradient_into(p, x, &mut g);
            let s: f64 = g.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() * inv_n;
            out.iter_mut().zip(&g).for_each(|(o, gi)| *o += s * gi);
        }
        if let Some(coeffs) = &self.coeffs {
            for (j, &(a, c)) in coeffs.iter().enumerate() {
                let vw2 = v[lay.w2(j)];
                out[lay.w1(j)] += a * vw2;
                out[lay.b1(j)] += c * vw2;
                out[lay.w2(j)] += a * v[lay.w1(j)] + c * v[lay.b1(j)];
            }
        }
    }

    fn norm_bound(&self) -> f64 {
        self.bound
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub lambda_max_full: f64,
    pub lambda_max_gn: f64,
    /// `vᵀ R v` at the Gauss-Newton top eigenvector `v`.
    pub residual_quadform: f64,
    /// Gauss-Newton top eigenvector, the test vector of the decomposition.
    pub top_eigvec: Vec<f64>,
    pub method: EigenMethod,
}

impl SpectrumReport {
    /// Slack of `λ_full >= λ_gn + vᵀRv`; nonnegative up to solver error.
    pub fn sandwich_slack(&self) -> f64 {
        self.lambda_max_full - (self.lambda_max_gn + self.residual_quadform)
    }
}

/// Top GN eigenpair through the `n × n` Gram matrix `J Jᵀ / n`, which shares
/// the nonzero spectrum of `Jᵀ J / n`; the eigenvector is lifted by `Jᵀ`.
fn gn_top_via_gram(jac: &DMatrix<f64>, n: usize) -> TopEigen {
    let gram = jac * jac.transpose() / n as f64;
    let top = eigen::dense_top(&gram);
    let u = nalgebra::DVector::from_vec(top.vector);
    let mut v: Vec<f64> = jac.tr_mul(&u).iter().copied().collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    TopEigen {
        value: top.value,
        vector: v,
        method: EigenMethod::Dense,
        iterations: 0,
    }
}

pub fn spectrum_report(
    params: &NetParams,
    data: &Dataset,
    method: EigenMethod,
    diff_tol: f64,
) -> Result<SpectrumReport> {
    let method = method.resolve(params.dim());
    let full_op = HessianOperator::full(params, data, diff_tol)?;
    let (gn_top, lambda_full) = match method {
        EigenMethod::Dense => {
            let h = loss_hessian(params, data, diff_tol)?;
            let jac = jacobian(params, data);
            let gn_top = if data.n() < params.dim() {
                gn_top_via_gram(&jac, data.n())
            } else {
                eigen::dense_top(&h.gn)
            };
            (gn_top, eigen::dense_top_value(&h.full))
        }
        m => {
            let gn_op = HessianOperator::gauss_newton(params, data);
            let gn_top = eigen::lambda_max(&gn_op, m, EIGEN_TOL, EIGEN_MAX_ITERS)?;
            let full = eigen::lambda_max(&full_op, m, EIGEN_TOL, EIGEN_MAX_ITERS)?;
            (gn_top, full.value)
        }
    };
    let residual_quadform = residual_quadform(params, data, &gn_top.vector);
    Ok(SpectrumReport {
        lambda_max_full: lambda_full,
        lambda_max_gn: gn_top.value,
        residual_quadform,
        top_eigvec: gn_top.vector,
        method,
    })
}

/// `vᵀ R v = (1/n) Σ r_i vᵀ ∇²f(x_i) v`.
pub fn residual_quadform(params: &NetParams, data: &Dataset, v: &[f64]) -> f64 {
    let r = residuals(params, data);
    let lay = params.layout();
    residual_coefficients(params, data, &r)
        .iter()
        .enumerate()
        .map(|(j, &(a, c))| 2.0 * v[lay.w2(j)] * (a * v[lay.w1(j)] + c * v[lay.b1(j)]))
        .sum()
}

/// Linear stability: `λ_max <= 2/η` (boundary inclusive).
pub fn stable_at(lambda_max: f64, eta: f64) -> bool {
    lambda_max <= 2.0 / eta
}

pub fn is_stable(params: &NetParams, data: &Dataset, eta: f64, diff_tol: f64) -> Result<bool> {
    let rep = spectrum_report(params, data, EigenMethod::Auto, diff_tol)?;
    Ok(stable_at(rep.lambda_max_full, eta))
}

/// Smallest `t*` with `trace[t] <= 2 e^ε / η` for every `t >= t*`.
pub fn beos_first_index(trace: &[f64], eta: f64, eps: f64) -> Option<usize> {
    let threshold = 2.0 * eps.exp() / eta;
    let mut first = trace.len();
    for (t, &v) in trace.iter().enumerate().rev() {
        if v <= threshold {
            first = t;
        } else {
            break;
        }
    }
    (first < trace.len()).then_some(first)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearizedTrace {
    /// `‖θ_t - θ*‖` for `t = 0..=steps`.
    pub norms: Vec<f64>,
    /// `‖∇L(θ*)‖`, the constant drift term of the linearized update.
    pub gradient_norm: f64,
}

/// Iterates `θ_{t+1} = θ_t - η (g + H (θ_t - θ*))` from `θ* + δ_0`.
pub fn linearized_dynamics_op(
    hessian: &dyn SymmetricOperator,
    gradient: &[f64],
    eta: f64,
    delta0: &[f64],
    steps: usize,
) -> LinearizedTrace {
    let mut delta = delta0.to_vec();
    let mut hd = vec![0.0; delta.len()];
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut norms = Vec::with_capacity(steps + 1);
    norms.push(norm(&delta));
    for _ in 0..steps {
        hessian.apply(&delta, &mut hd);
        for ((d, h), g) in delta.iter_mut().zip(&hd).zip(gradient) {
            *d -= eta * (g + h);
        }
        norms.push(norm(&delta));
    }
    LinearizedTrace {
        norms,
        gradient_norm: norm(gradient),
    }
}

pub fn linearized_dynamics(
    params_star: &NetParams,
    data: &Dataset,
    eta: f64,
    delta0: &[f64],
    steps: usize,
    diff_tol: f64,
) -> Result<LinearizedTrace> {
    let op = HessianOperator::full(params_star, data, diff_tol)?;
    let grad = loss_gradient(params_star, data);
    Ok(linearized_dynamics_op(&op, &grad, eta, delta0, steps))
}

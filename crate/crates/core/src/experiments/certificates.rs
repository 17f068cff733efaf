use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::eigen::EigenMethod;
use crate::error::Result;
use crate::funcspace::{self, EmpiricalWeight, LowerBoundMode, Sharpness};
use crate::landscape;
use crate::relu_net::{self, NetParams, DIFF_TOL};
use crate::rng::SeededStream;
use crate::trainer::{self, TrainRecord, INTERP_TOL};

use super::metrics;

/// Numerical slack allowed before an inequality counts as failed.
pub const CERT_TOL: f64 = 1e-8;

/// Random unit directions per datum for the sampled curvature bound.
pub const D3_SAMPLES: usize = 256;

/// One inequality `lhs <= rhs`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`.
    pub slack: f64,
    pub pass: bool,
}

impl Check {
    pub fn le(lhs: f64, rhs: f64) -> Self {
        let slack = rhs - lhs;
        Check {
            lhs,
            rhs,
            slack,
            pass: slack >= -CERT_TOL,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub eta: f64,
    pub delta: f64,
    pub loss: f64,
    pub mse: Option<f64>,
    pub weighted_tv: f64,
    pub lambda_max_full: f64,
    pub lambda_max_gn: f64,
    /// `∫|f''| g <= λ/2 - 1/2 + X √(2L)`, `X = max{x_max, 1}`.
    pub tv_bound: Check,
    /// Same with `λ` replaced by `2/η`; holds only at stable iterates.
    pub tv_bound_eta: Check,
    /// `∫|f''| g <= λ/2 - 1/2 + noise term + 2X √MSE`.
    pub noisy_tv_bound: Option<Check>,
    /// `1 + 2 ∫|f''| g <= λ_max` of the Gauss-Newton matrix.
    pub gn_bound: Check,
    /// `max_i ‖∇²_θ f(x_i)‖₂ <= 2X`, exact spectral norms.
    pub hessian_norm: Check,
    /// Largest `|vᵀ ∇²_θ f(x_i) v|` over sampled unit `v`.
    pub hessian_norm_sampled: f64,
    /// `λ_max <= 2/η`.
    pub stability: Check,
    pub optimized_vs_ground_truth: Option<Check>,
    pub optimized_vs_sigma: Option<Check>,
    /// Data-only TV lower bound against the TV over its span, for
    /// interpolating parameters on an equispaced design.
    pub interpolant_lower_bound: Option<Check>,
}

impl CertificateReport {
    /// Names of failed inequalities that hold unconditionally.
    pub fn hard_failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.tv_bound.pass {
            out.push("tv_bound");
        }
        if !self.gn_bound.pass {
            out.push("gn_bound");
        }
        if !self.hessian_norm.pass {
            out.push("hessian_norm");
        }
        if self.interpolant_lower_bound.is_some_and(|c| !c.pass) {
            out.push("interpolant_lower_bound");
        }
        out
    }
}

/// Evaluate every inequality at `params`.
pub fn verify_bounds(params: &NetParams, data: &Dataset, eta: f64, delta: f64) -> Result<CertificateReport> {
    let spec = landscape::spectrum_report(params, data, EigenMethod::Auto, DIFF_TOL)?;
    let weight = EmpiricalWeight::from_data(data);
    let pwl = relu_net::extract_knots(params);
    let wtv = funcspace::weighted_tv(&pwl, &weight);
    let loss = landscape::loss(params, data);
    let x_big = data.x_max.max(1.0);
    let lam = spec.lambda_max_full;

    let mse = metrics::mse(params, data, None).ok();
    let noisy_tv_bound = match (mse, data.sigma) {
        (Some(m), Some(s)) => Some(Check::le(
            wtv,
            funcspace::noisy_tv_bound(Sharpness::Lambda(lam), m, s, data.x_max, params.k(), data.n(), delta)?,
        )),
        _ => None,
    };

    let (d3_exact, d3_sampled) = curvature_norms(params, data);
    let loss_check = |target: Result<f64>| target.ok().map(|t| Check::le(loss, t));
    let interpolant_lower_bound = if (2.0 * loss).sqrt() <= INTERP_TOL {
        funcspace::interpolant_tv_lower_bound(data, LowerBoundMode::PlainMiddle)
            .ok()
            .map(|b| Check::le(b.value, funcspace::tv_on_interval(&pwl, b.lo, b.hi)))
    } else {
        None
    };

    Ok(CertificateReport {
        eta,
        delta,
        loss,
        mse,
        weighted_tv: wtv,
        lambda_max_full: lam,
        lambda_max_gn: spec.lambda_max_gn,
        tv_bound: Check::le(
            wtv,
            funcspace::stability_tv_bound(Sharpness::Lambda(lam), loss, data.x_max),
        ),
        tv_bound_eta: Check::le(
            wtv,
            funcspace::stability_tv_bound(Sharpness::Eta(eta), loss, data.x_max),
        ),
        noisy_tv_bound,
        gn_bound: Check::le(1.0 + 2.0 * wtv, spec.lambda_max_gn),
        hessian_norm: Check::le(d3_exact, 2.0 * x_big),
        hessian_norm_sampled: d3_sampled,
        stability: Check::le(lam, 2.0 / eta),
        optimized_vs_ground_truth: loss_check(trainer::ground_truth_loss(data)),
        optimized_vs_sigma: loss_check(data.sigma().map(|s| s * s / 2.0)),
        interpolant_lower_bound,
    })
}

/// Exact and sampled operator norms of the per-sample network Hessians.
///
/// Each active neuron contributes the block `[[0, 0, x], [0, 0, 1], [x, 1, 0]]`
/// on `(w1_j, b1_j, w2_j)`, whose eigenvalues are `0, ±√(1 + x²)`.
fn curvature_norms(params: &NetParams, data: &Dataset) -> (f64, f64) {
    let k = params.k();
    let mut exact = 0.0_f64;
    for &x in &data.xs {
        if (0..k).any(|j| params.preactivation(j, x) > 0.0) {
            exact = exact.max((1.0 + x * x).sqrt());
        }
    }
    let mut s = SeededStream::new(0xD3);
    let mut sampled = 0.0_f64;
    let dim = params.dim();
    let mut v = vec![0.0; dim];
    for _ in 0..D3_SAMPLES {
        v.iter_mut().for_each(|e| *e = s.standard_normal());
        let norm = v.iter().map(|e| e * e).sum::<f64>().sqrt();
        v.iter_mut().for_each(|e| *e /= norm);
        for &x in &data.xs {
            let mut q = 0.0;
            for j in 0..k {
                if params.preactivation(j, x) > 0.0 {
                    q += 2.0 * v[2 * k + j] * (x * v[j] + v[k + j]);
                }
            }
            sampled = sampled.max(q.abs());
        }
    }
    (exact, sampled)
}

/// Stability TV bound and Gauss-Newton check replayed on a logged checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointCertificate {
    pub step: usize,
    pub tv_bound: Check,
    pub gn_bound: Check,
}

/// `None` for records without a spectrum.
pub fn checkpoint_certificate(record: &TrainRecord, x_max: f64) -> Option<CheckpointCertificate> {
    let lam = record.lambda_max_full?;
    let gn = record.lambda_max_gn?;
    Some(CheckpointCertificate {
        step: record.step,
        tv_bound: Check::le(
            record.weighted_tv,
            funcspace::stability_tv_bound(Sharpness::Lambda(lam), record.loss, x_max),
        ),
        gn_bound: Check::le(1.0 + 2.0 * record.weighted_tv, gn),
    })
}

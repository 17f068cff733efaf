//! Full-batch gradient descent with periodic diagnostics, plus the
//! second-layer least-squares baseline.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::eigen::EigenMethod;
use crate::error::{invalid, Error, Result};
use crate::experiments::{self, CertificateReport};
use crate::funcspace::{self, EmpiricalWeight};
use crate::landscape;
use crate::output::{self, fmt_float, fmt_opt};
use crate::relu_net::{self, InitScheme, NetParams};
use crate::rng::SeededStream;

/// RMS residual below which a least-squares fit counts as interpolating.
pub const INTERP_TOL: f64 = 1e-8;

/// Slope jumps at or below this size are not counted as knots.
pub const DSLOPE_TOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub k: usize,
    pub eta: f64,
    pub max_steps: usize,
    pub log_every: usize,
    pub seed: u64,
    pub init: InitScheme,
    pub stop_grad_norm: f64,
    pub steady_window: usize,
    pub steady_rel_tol: f64,
    pub diff_tol: f64,
    pub dslope_tol: f64,
    pub eigen_method: EigenMethod,
    /// `ε` of the below-edge-of-stability index in the summary.
    pub beos_eps: f64,
    pub delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 100,
            eta: 0.4,
            max_steps: 200_000,
            log_every: 100,
            seed: 1,
            init: InitScheme::default(),
            stop_grad_norm: 0.0,
            steady_window: 20,
            steady_rel_tol: 0.05,
            diff_tol: relu_net::DIFF_TOL,
            dslope_tol: DSLOPE_TOL,
            eigen_method: EigenMethod::Auto,
            beos_eps: 0.25,
            delta: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if self.k == 0 {
            return Err(invalid("k must be positive"));
        }
        if !pos(self.eta) {
            return Err(invalid("eta must be positive"));
        }
        if self.log_every == 0 || (self.max_steps > 0 && self.log_every > self.max_steps) {
            return Err(invalid("log_every must lie in 1..=max_steps"));
        }
        if !(self.stop_grad_norm >= 0.0) {
            return Err(invalid("stop_grad_norm must be nonnegative"));
        }
        if self.steady_window < 2 {
            return Err(invalid("steady_window must be at least 2"));
        }
        for (key, v) in [
            ("steady_rel_tol", self.steady_rel_tol),
            ("diff_tol", self.diff_tol),
            ("dslope_tol", self.dslope_tol),
        ] {
            if !pos(v) {
                return Err(invalid(format!("{key} must be positive")));
            }
        }
        if !(self.beos_eps >= 0.0) {
            return Err(invalid("beos_eps must be nonnegative"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub loss: f64,
    pub mse: Option<f64>,
    pub grad_norm: f64,
    /// Absent when the iterate is not twice differentiable at some datum.
    pub lambda_max_full: Option<f64>,
    pub lambda_max_gn: Option<f64>,
    pub weighted_tv: f64,
    pub tv_plain: f64,
    pub knot_count: usize,
    pub diff_margin: f64,
}

impl TrainRecord {
    pub const CSV_HEADER: &'static str =
        "step,loss,mse,grad_norm,lambda_max_full,lambda_max_gn,weighted_tv,tv_plain,knot_count,diff_margin";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.step,
            fmt_float(self.loss),
            fmt_opt(self.mse),
            fmt_float(self.grad_norm),
            fmt_opt(self.lambda_max_full),
            fmt_opt(self.lambda_max_gn),
            fmt_float(self.weighted_tv),
            fmt_float(self.tv_plain),
            self.knot_count,
            fmt_float(self.diff_margin),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: TrainConfig,
    pub final_params: NetParams,
    pub final_record: TrainRecord,
    pub steps_run: usize,
    pub stopped_early: bool,
    /// `ρ = ‖θ‖_∞`.
    pub param_inf_norm: f64,
    /// `λ_max ≤ 2/η` at the final iterate; absent without a spectrum.
    pub stable: Option<bool>,
    pub beos_index: Option<usize>,
    pub steady_state_step: Option<usize>,
    pub optimized_vs_ground_truth: Option<bool>,
    pub optimized_vs_sigma: Option<bool>,
    pub certificates: Option<CertificateReport>,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: NetParams,
    pub records: Vec<TrainRecord>,
    pub summary: RunSummary,
}

/// `θ - η ∇L(θ)`.
pub fn gd_step(params: &NetParams, data: &Dataset, eta: f64) -> Result<NetParams> {
    let grad = landscape::loss_gradient(params, data);
    let theta: Vec<f64> = params.flatten().iter().zip(&grad).map(|(t, g)| t - eta * g).collect();
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged {
            step: 1,
            last_finite: None,
        });
    }
    NetParams::unflatten(params.k(), &theta)
}

/// Diagnostics for one iterate.
pub fn make_record(
    params: &NetParams,
    data: &Dataset,
    weight: &EmpiricalWeight,
    config: &TrainConfig,
    step: usize,
    loss: f64,
    grad_norm: f64,
) -> TrainRecord {
    let pwl = relu_net::extract_knots(params);
    let (lo, hi) = (data.min_x(), data.max_x());
    let (lambda_max_full, lambda_max_gn) =
        match landscape::spectrum_report(params, data, config.eigen_method, config.diff_tol) {
            Ok(r) => (Some(r.lambda_max_full), Some(r.lambda_max_gn)),
            Err(_) => (None, None),
        };
    TrainRecord {
        step,
        loss,
        mse: experiments::mse(params, data, None).ok(),
        grad_norm,
        lambda_max_full,
        lambda_max_gn,
        weighted_tv: funcspace::weighted_tv(&pwl, weight),
        tv_plain: funcspace::tv_on_interval(&pwl, lo, hi),
        knot_count: experiments::in_range_knots(&pwl, lo, hi, config.dslope_tol),
        diff_margin: relu_net::differentiability_margin(params, &data.xs),
    }
}

/// Run gradient descent from the seeded initialization.
pub fn train(config: &TrainConfig, data: &Dataset) -> Result<TrainOutput> {
    config.validate()?;
    let init = relu_net::init_params(config.k, config.init, config.seed)?;
    train_from(config, data, init)
}

/// Run gradient descent from a given starting point.
pub fn train_from(config: &TrainConfig, data: &Dataset, init: NetParams) -> Result<TrainOutput> {
    config.validate()?;
    if init.k() != config.k {
        return Err(invalid("initial parameters have the wrong width"));
    }
    let weight = EmpiricalWeight::from_data(data);
    let k = config.k;
    let mut theta = init.flatten();
    let mut params = init;
    let mut grad = vec![0.0; theta.len()];
    let mut records: Vec<TrainRecord> = Vec::new();
    let mut step = 0;
    let stopped_early;
    loop {
        let loss = landscape::loss_and_gradient_into(&params, data, &mut grad);
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !(loss.is_finite() && grad_norm.is_finite()) {
            return Err(Error::Diverged {
                step,
                last_finite: records.pop().map(Box::new),
            });
        }
        let converged = grad_norm < config.stop_grad_norm;
        let last = step == config.max_steps || converged;
        if step % config.log_every == 0 || last {
            records.push(make_record(&params, data, &weight, config, step, loss, grad_norm));
        }
        if last {
            stopped_early = converged && step < config.max_steps;
            break;
        }
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= config.eta * g;
        }
        step += 1;
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                step,
                last_finite: records.pop().map(Box::new),
            });
        }
        params.w1.copy_from_slice(&theta[..k]);
        params.b1.copy_from_slice(&theta[k..2 * k]);
        params.w2.copy_from_slice(&theta[2 * k..3 * k]);
        params.b2 = theta[3 * k];
    }

    let final_record = records.last().cloned().expect("at least one record");
    let lambda_trace: Vec<f64> = records.iter().filter_map(|r| r.lambda_max_full).collect();
    let beos_index = landscape::beos_first_index(&lambda_trace, config.eta, config.beos_eps).map(|i| {
        records
            .iter()
            .filter(|r| r.lambda_max_full.is_some())
            .nth(i)
            .unwrap()
            .step
    });
    let certificates = experiments::verify_bounds(&params, data, config.eta, config.delta).ok();
    let summary = RunSummary {
        config: config.clone(),
        final_params: params.clone(),
        stable: final_record
            .lambda_max_full
            .map(|l| landscape::stable_at(l, config.eta)),
        steps_run: step,
        stopped_early,
        param_inf_norm: params.inf_norm(),
        beos_index,
        steady_state_step: detect_steady_state(&records, config.steady_window, config.steady_rel_tol),
        optimized_vs_ground_truth: check_optimized(&params, data, OptimizedMode::VsGroundTruth).ok(),
        optimized_vs_sigma: check_optimized(&params, data, OptimizedMode::VsSigma).ok(),
        certificates,
        final_record,
    };
    Ok(TrainOutput {
        params,
        records,
        summary,
    })
}

/// Smallest `s` such that every window `series[t..t + window]` with `t >= s`
/// has spread `max - min <= rel_tol * max_t |series[t]|`.
pub fn steady_index(series: &[f64], window: usize, rel_tol: f64) -> Option<usize> {
    let scale = series.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let settled = |s: usize| spread(series[s..s + window].iter().copied()) <= rel_tol * scale;
    settled_suffix(series.len(), window, settled)
}

fn spread(vals: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo > hi {
        0.0
    } else {
        hi - lo
    }
}

/// Smallest start from which every window start qualifies.
fn settled_suffix(len: usize, window: usize, settled: impl Fn(usize) -> bool) -> Option<usize> {
    if window < 2 || len < window {
        return None;
    }
    let mut first = None;
    for s in (0..=len - window).rev() {
        if settled(s) {
            first = Some(s);
        } else {
            break;
        }
    }
    first
}

/// Earliest logged step from which the loss and the Gauss-Newton sharpness
/// stay settled: every later window of `window` records has a spread of at
/// most `rel_tol` times the largest magnitude of that series in the run.
/// Records without a spectrum are skipped for the sharpness series.
pub fn detect_steady_state(records: &[TrainRecord], window: usize, rel_tol: f64) -> Option<usize> {
    let loss_scale = records.iter().fold(0.0_f64, |m, r| m.max(r.loss.abs()));
    let gn_scale = records
        .iter()
        .filter_map(|r| r.lambda_max_gn)
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    let settled = |s: usize| {
        let w = &records[s..s + window];
        spread(w.iter().map(|r| r.loss)) <= rel_tol * loss_scale
            && spread(w.iter().filter_map(|r| r.lambda_max_gn)) <= rel_tol * gn_scale
    };
    settled_suffix(records.len(), window, settled).map(|s| records[s].step)
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterpolantFit {
    pub params: NetParams,
    pub residual_rms: f64,
    pub rank: usize,
}

/// Minimum-norm least-squares `(w2, b2)` for a frozen first layer.
///
/// Columns of the design matrix are `φ(w1_j x + b1_j)` and a constant. The
/// solve goes through a singular value decomposition with singular values
/// below `max(n, k+1) ε σ_max` treated as zero. With `strict`, a residual RMS
/// above [`INTERP_TOL`] is an error.
/// Random first layer whose knots cover every gap between consecutive inputs.
///
/// Neuron `j < n - 1` gets a knot uniform in `(x_j, x_{j+1})`; the remaining
/// `k - n + 1` knots are uniform on `[-x_max, x_max]`. Input weights are
/// `U(-1, 1)`, so each neuron opens left or right at random.
pub fn gap_covering_layer(data: &Dataset, k: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = data.n();
    if k + 1 < n {
        return Err(invalid("gap-covering layer needs k >= n - 1"));
    }
    let mut s = SeededStream::new(seed);
    let mut w1 = Vec::with_capacity(k);
    let mut b1 = Vec::with_capacity(k);
    for j in 0..k {
        let t = if j + 1 < n {
            s.uniform(data.xs[j], data.xs[j + 1])
        } else {
            s.uniform(-data.x_max, data.x_max)
        };
        let mut w = 0.0;
        while w == 0.0 {
            w = s.uniform(-1.0, 1.0);
        }
        w1.push(w);
        b1.push(-w * t);
    }
    Ok((w1, b1))
}

pub fn min_norm_interpolant(w1: &[f64], b1: &[f64], data: &Dataset, strict: bool) -> Result<InterpolantFit> {
    let k = w1.len();
    if k == 0 || b1.len() != k {
        return Err(invalid("first layer must be nonempty with matching lengths"));
    }
    let n = data.n();
    let phi = DMatrix::from_fn(n, k + 1, |i, j| {
        if j == k {
            1.0
        } else {
            (w1[j] * data.xs[i] + b1[j]).max(0.0)
        }
    });
    let y = DVector::from_column_slice(&data.ys);
    let svd = phi.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = smax * (n.max(k + 1) as f64) * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    let coef = svd
        .solve(&y, cutoff)
        .map_err(|e| invalid(format!("least squares failed: {e}")))?;
    let resid = &phi * &coef - &y;
    let residual_rms = (resid.norm_squared() / n as f64).sqrt();
    if strict && !(residual_rms <= INTERP_TOL) {
        return Err(Error::NotInterpolating {
            rms: residual_rms,
            tol: INTERP_TOL,
        });
    }
    let params = NetParams::new(w1.to_vec(), b1.to_vec(), coef.as_slice()[..k].to_vec(), coef[k])?;
    Ok(InterpolantFit {
        params,
        residual_rms,
        rank,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizedMode {
    /// `L(θ) <= 1/(2n) Σ (f0(x_i) - y_i)²`.
    VsGroundTruth,
    /// `L(θ) <= σ²/2`.
    VsSigma,
}

pub fn check_optimized(params: &NetParams, data: &Dataset, mode: OptimizedMode) -> Result<bool> {
    let l = landscape::loss(params, data);
    match mode {
        OptimizedMode::VsGroundTruth => Ok(l <= ground_truth_loss(data)?),
        OptimizedMode::VsSigma => {
            let s = data.sigma()?;
            Ok(l <= s * s / 2.0)
        }
    }
}

/// `1/(2n) Σ (f0(x_i) - y_i)²`.
pub fn ground_truth_loss(data: &Dataset) -> Result<f64> {
    let f0 = data.truth()?;
    let s: f64 = data
        .xs
        .iter()
        .zip(&data.ys)
        .map(|(&x, &y)| (f0.eval(x) - y).powi(2))
        .sum();
    Ok(s / (2.0 * data.n() as f64))
}

pub fn records_csv(records: &[TrainRecord]) -> String {
    let mut s = String::new();
    writeln!(s, "{}", TrainRecord::CSV_HEADER).unwrap();
    for r in records {
        writeln!(s, "{}", r.csv_row()).unwrap();
    }
    s
}

/// Write `records.csv`, `summary.json` and `params.json` into `dir`.
pub fn write_run_dir(dir: &Path, output: &TrainOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("records.csv"), records_csv(&output.records))?;
    output::write_json(&dir.join("summary.json"), &output.summary)?;
    output::write_json(&dir.join("params.json"), &output.params)?;
    Ok(())
}

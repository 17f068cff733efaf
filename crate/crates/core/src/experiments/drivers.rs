use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcspace::{self, EmpiricalWeight, LowerBoundMode};
use crate::landscape;
use crate::output::{self, csv_text, fmt_float};
use crate::relu_net::{self, DIFF_TOL};
use crate::trainer::{self, TrainConfig, TrainOutput};

use super::certificates::{checkpoint_certificate, CertificateReport, CERT_TOL};
use super::config::{ExperimentConfig, IntervalSpec};
use super::metrics::{self, median};

/// Run `f` over `items` on a bounded pool; output order follows `items`.
pub fn run_pool<T: Sync, R: Send>(workers: Option<usize>, items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        b = b.num_threads(w);
    }
    match b.build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}

/// One `(η, replicate)` training job.
#[derive(Clone, Debug)]
pub struct SweepCell {
    pub eta: f64,
    pub rep: usize,
    pub seed: u64,
    pub data_seed: u64,
    pub config: TrainConfig,
    pub data: crate::data::Dataset,
    pub outcome: std::result::Result<TrainOutput, String>,
}

/// Train every `(η, replicate)` pair. Replicate `r` shares its dataset
/// across step sizes.
pub fn sweep_runs(cfg: &ExperimentConfig) -> Result<Vec<SweepCell>> {
    cfg.validate()?;
    let datasets: Vec<_> = (0..cfg.reps)
        .map(|r| cfg.dataset.build(cfg.dataset.n, r))
        .collect::<Result<_>>()?;
    let jobs: Vec<(f64, usize)> = cfg
        .eta_grid
        .iter()
        .flat_map(|&eta| (0..cfg.reps).map(move |r| (eta, r)))
        .collect();
    Ok(run_pool(cfg.workers, &jobs, |&(eta, rep)| {
        let config = cell_config(cfg, eta, rep);
        let data = datasets[rep].clone();
        let outcome = trainer::train(&config, &data).map_err(|e| e.to_string());
        SweepCell {
            eta,
            rep,
            seed: config.seed,
            data_seed: cfg.dataset.data_seed.wrapping_add(rep as u64),
            config,
            data,
            outcome,
        }
    }))
}

fn cell_config(cfg: &ExperimentConfig, eta: f64, rep: usize) -> TrainConfig {
    let steps = cfg.steps_for(eta);
    let log_every = if cfg.equal_time {
        ((cfg.train.log_every as f64 * cfg.train.eta / eta).round() as usize).clamp(1, steps.max(1))
    } else {
        cfg.train.log_every.min(steps.max(1))
    };
    TrainConfig {
        eta,
        max_steps: steps,
        log_every,
        seed: cfg.train.seed.wrapping_add(rep as u64),
        ..cfg.train.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eta: f64,
    pub rep: usize,
    pub seed: u64,
    pub data_seed: u64,
    /// `ok` or the error message.
    pub status: String,
    pub steps: usize,
    pub loss: f64,
    pub mse: f64,
    pub weighted_tv: f64,
    pub tv_plain: f64,
    pub knot_count: usize,
    pub lambda_max_full: f64,
    pub lambda_max_gn: f64,
    pub tv_bound_rhs: f64,
    pub tv_bound_slack: f64,
    pub noisy_tv_bound_slack: f64,
    pub gn_bound_slack: f64,
    pub stable: Option<bool>,
    pub beos_index: Option<usize>,
    pub optimized_vs_ground_truth: Option<bool>,
    pub optimized_vs_sigma: Option<bool>,
    /// Generalization gap on an explicit interval.
    pub gen_gap: Option<f64>,
    pub checkpoints: usize,
    pub checkpoint_tv_failures: usize,
    pub checkpoint_gn_failures: usize,
    pub min_checkpoint_tv_slack: f64,
    pub min_checkpoint_gn_slack: f64,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str =
        "eta,rep,seed,data_seed,status,steps,loss,mse,weighted_tv,tv_plain,knot_count,\
lambda_max_full,lambda_max_gn,tv_bound_rhs,tv_bound_slack,noisy_tv_bound_slack,gn_bound_slack,stable,beos_index,\
optimized_vs_ground_truth,optimized_vs_sigma,gen_gap,checkpoints,checkpoint_tv_failures,\
checkpoint_gn_failures,min_checkpoint_tv_slack,min_checkpoint_gn_slack";

    pub fn ok(&self) -> bool {
        self.status == "ok"
    }

    fn csv_row(&self) -> String {
        let ob = |v: Option<bool>| v.map(|b| b.to_string()).unwrap_or_default();
        let ou = |v: Option<usize>| v.map(|b| b.to_string()).unwrap_or_default();
        let f = cell;
        [
            f(self.eta),
            self.rep.to_string(),
            self.seed.to_string(),
            self.data_seed.to_string(),
            csv_text(&self.status),
            self.steps.to_string(),
            f(self.loss),
            f(self.mse),
            f(self.weighted_tv),
            f(self.tv_plain),
            self.knot_count.to_string(),
            f(self.lambda_max_full),
            f(self.lambda_max_gn),
            f(self.tv_bound_rhs),
            f(self.tv_bound_slack),
            f(self.noisy_tv_bound_slack),
            f(self.gn_bound_slack),
            ob(self.stable),
            ou(self.beos_index),
            ob(self.optimized_vs_ground_truth),
            ob(self.optimized_vs_sigma),
            self.gen_gap.map(fmt_float).unwrap_or_default(),
            self.checkpoints.to_string(),
            self.checkpoint_tv_failures.to_string(),
            self.checkpoint_gn_failures.to_string(),
            f(self.min_checkpoint_tv_slack),
            f(self.min_checkpoint_gn_slack),
        ]
        .join(",")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MedianRow {
    pub eta: f64,
    pub ok_runs: usize,
    pub loss: f64,
    pub mse: f64,
    pub weighted_tv: f64,
    pub tv_plain: f64,
    pub knot_count: f64,
    pub lambda_max_full: f64,
    pub lambda_max_gn: f64,
}

impl MedianRow {
    pub const CSV_HEADER: &'static str =
        "eta,ok_runs,loss,mse,weighted_tv,tv_plain,knot_count,lambda_max_full,lambda_max_gn";
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub medians: Vec<MedianRow>,
    pub certificates: Vec<CellCertificates>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellCertificates {
    pub eta: f64,
    pub rep: usize,
    pub report: Option<CertificateReport>,
}

pub fn sweep_row(cell: &SweepCell, cfg: &ExperimentConfig) -> SweepRow {
    let nan = f64::NAN;
    let mut row = SweepRow {
        eta: cell.eta,
        rep: cell.rep,
        seed: cell.seed,
        data_seed: cell.data_seed,
        status: "ok".into(),
        steps: 0,
        loss: nan,
        mse: nan,
        weighted_tv: nan,
        tv_plain: nan,
        knot_count: 0,
        lambda_max_full: nan,
        lambda_max_gn: nan,
        tv_bound_rhs: nan,
        tv_bound_slack: nan,
        noisy_tv_bound_slack: nan,
        gn_bound_slack: nan,
        stable: None,
        beos_index: None,
        optimized_vs_ground_truth: None,
        optimized_vs_sigma: None,
        gen_gap: None,
        checkpoints: 0,
        checkpoint_tv_failures: 0,
        checkpoint_gn_failures: 0,
        min_checkpoint_tv_slack: nan,
        min_checkpoint_gn_slack: nan,
    };
    let out = match &cell.outcome {
        Ok(o) => o,
        Err(e) => {
            row.status = e.clone();
            return row;
        }
    };
    let s = &out.summary;
    let r = &s.final_record;
    row.steps = s.steps_run;
    row.loss = r.loss;
    row.mse = r.mse.unwrap_or(nan);
    row.weighted_tv = r.weighted_tv;
    row.tv_plain = r.tv_plain;
    row.knot_count = r.knot_count;
    row.lambda_max_full = r.lambda_max_full.unwrap_or(nan);
    row.lambda_max_gn = r.lambda_max_gn.unwrap_or(nan);
    if let Some(c) = &s.certificates {
        row.tv_bound_rhs = c.tv_bound.rhs;
        row.tv_bound_slack = c.tv_bound.slack;
        row.noisy_tv_bound_slack = c.noisy_tv_bound.map_or(nan, |e| e.slack);
        row.gn_bound_slack = c.gn_bound.slack;
    }
    row.stable = s.stable;
    row.beos_index = s.beos_index;
    row.optimized_vs_ground_truth = s.optimized_vs_ground_truth;
    row.optimized_vs_sigma = s.optimized_vs_sigma;
    if let IntervalSpec::Explicit { lo, hi } = cfg.interval {
        row.gen_gap = metrics::generalization_gap(&out.params, &cell.data, lo, hi, cfg.test_seed, cfg.test_m).ok();
    }
    let certs: Vec<_> = out
        .records
        .iter()
        .filter_map(|rec| checkpoint_certificate(rec, cell.data.x_max))
        .collect();
    row.checkpoints = certs.len();
    row.checkpoint_tv_failures = certs.iter().filter(|c| !c.tv_bound.pass).count();
    row.checkpoint_gn_failures = certs.iter().filter(|c| !c.gn_bound.pass).count();
    row.min_checkpoint_tv_slack = certs.iter().map(|c| c.tv_bound.slack).fold(f64::INFINITY, f64::min);
    row.min_checkpoint_gn_slack = certs.iter().map(|c| c.gn_bound.slack).fold(f64::INFINITY, f64::min);
    row
}

/// Assemble per-cell rows and per-`η` medians.
pub fn sweep_table(cells: &[SweepCell], cfg: &ExperimentConfig) -> SweepTable {
    let rows: Vec<SweepRow> = cells.iter().map(|c| sweep_row(c, cfg)).collect();
    let mut medians = Vec::new();
    for &eta in &cfg.eta_grid {
        let ok: Vec<&SweepRow> = rows.iter().filter(|r| r.eta == eta && r.ok()).collect();
        let med =
            |f: &dyn Fn(&SweepRow) -> f64| median(&ok.iter().map(|r| f(r)).collect::<Vec<_>>()).unwrap_or(f64::NAN);
        medians.push(MedianRow {
            eta,
            ok_runs: ok.len(),
            loss: med(&|r| r.loss),
            mse: med(&|r| r.mse),
            weighted_tv: med(&|r| r.weighted_tv),
            tv_plain: med(&|r| r.tv_plain),
            knot_count: med(&|r| r.knot_count as f64),
            lambda_max_full: med(&|r| r.lambda_max_full),
            lambda_max_gn: med(&|r| r.lambda_max_gn),
        });
    }
    let certificates = cells
        .iter()
        .map(|c| CellCertificates {
            eta: c.eta,
            rep: c.rep,
            report: c.outcome.as_ref().ok().and_then(|o| o.summary.certificates.clone()),
        })
        .collect();
    SweepTable {
        rows,
        medians,
        certificates,
    }
}

/// Final metrics per `(η, replicate)` and medians per `η`.
pub fn eta_sweep(cfg: &ExperimentConfig) -> Result<SweepTable> {
    Ok(sweep_table(&sweep_runs(cfg)?, cfg))
}

impl SweepTable {
    /// Write `sweep.csv`, `medians.csv` and `certificates.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut s = String::new();
        writeln!(s, "{}", SweepRow::CSV_HEADER).unwrap();
        for r in &self.rows {
            writeln!(s, "{}", r.csv_row()).unwrap();
        }
        std::fs::write(dir.join("sweep.csv"), s)?;
        let mut m = String::new();
        writeln!(m, "{}", MedianRow::CSV_HEADER).unwrap();
        for r in &self.medians {
            let cells = [
                r.loss,
                r.mse,
                r.weighted_tv,
                r.tv_plain,
                r.knot_count,
                r.lambda_max_full,
                r.lambda_max_gn,
            ]
            .map(cell);
            writeln!(m, "{},{},{}", fmt_float(r.eta), r.ok_runs, cells.join(",")).unwrap();
        }
        std::fs::write(dir.join("medians.csv"), m)?;
        output::write_json(&dir.join("certificates.json"), &self.certificates)?;
        Ok(())
    }
}

/// Number of adjacent pairs, in order of increasing `η`, where the value
/// goes up.
pub fn increasing_steps(etas: &[f64], values: &[f64]) -> usize {
    let mut pairs: Vec<(f64, f64)> = etas.iter().copied().zip(values.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.windows(2).filter(|w| w[1].1 > w[0].1).count()
}

/// Whether the minimum is attained strictly inside the `η`-ordered grid.
pub fn interior_minimum(etas: &[f64], values: &[f64]) -> bool {
    let mut pairs: Vec<(f64, f64)> = etas.iter().copied().zip(values.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let arg = pairs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, _)| i);
    matches!(arg, Some(i) if i > 0 && i + 1 < pairs.len())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub rep: usize,
    pub eta: f64,
    pub status: String,
    pub lo: f64,
    pub hi: f64,
    pub n_in: usize,
    pub mse_interval: f64,
    pub loss_interval: f64,
    pub truth_loss_interval: f64,
    /// Empirical loss on `I` at most that of the ground truth on `I`.
    pub optimized_interval: bool,
    pub optimized_global: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSize {
    pub n: usize,
    pub valid: usize,
    pub median_n_in: f64,
    pub median_mse_interval: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateFlag {
    Fitted,
    NoiselessControl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    pub slope: Option<f64>,
    pub flag: RateFlag,
    pub rows: Vec<RateRow>,
    pub sizes: Vec<RateSize>,
}

/// Restricted-MSE decay with the sample size.
///
/// For each `n` and replicate: generate, train, pick `I`, and record
/// `MSE_I`. Rows not optimized over `I` are excluded; the slope of the
/// median `MSE_I` against the median `n_I` is fitted on a log-log scale.
pub fn rate_experiment(cfg: &ExperimentConfig) -> Result<RateResult> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.reps).map(move |r| (n, r)))
        .collect();
    let rows: Vec<Result<RateRow>> = run_pool(cfg.workers, &jobs, |&(n, rep)| rate_cell(cfg, n, rep));
    let rows: Vec<RateRow> = rows.into_iter().collect::<Result<_>>()?;

    let mut sizes = Vec::new();
    for &n in &cfg.n_grid {
        let valid: Vec<&RateRow> = rows
            .iter()
            .filter(|r| r.n == n && r.status == "ok" && r.optimized_interval)
            .collect();
        sizes.push(RateSize {
            n,
            valid: valid.len(),
            median_n_in: median(&valid.iter().map(|r| r.n_in as f64).collect::<Vec<_>>()).unwrap_or(f64::NAN),
            median_mse_interval: median(&valid.iter().map(|r| r.mse_interval).collect::<Vec<_>>()).unwrap_or(f64::NAN),
        });
    }
    if cfg.dataset.sigma == 0.0 {
        return Ok(RateResult {
            slope: None,
            flag: RateFlag::NoiselessControl,
            rows,
            sizes,
        });
    }
    let usable: Vec<&RateSize> = sizes
        .iter()
        .filter(|s| s.valid > 0 && s.median_mse_interval > 0.0)
        .collect();
    if usable.len() < 4 {
        return Err(Error::InsufficientData {
            valid: usable.len(),
            required: 4,
        });
    }
    let x: Vec<f64> = usable.iter().map(|s| s.median_n_in).collect();
    let y: Vec<f64> = usable.iter().map(|s| s.median_mse_interval).collect();
    Ok(RateResult {
        slope: metrics::loglog_slope(&x, &y),
        flag: RateFlag::Fitted,
        rows,
        sizes,
    })
}

fn rate_cell(cfg: &ExperimentConfig, n: usize, rep: usize) -> Result<RateRow> {
    let data = cfg.dataset.build(n, rep)?;
    let eta = cfg.eta_mode.eta(cfg.train.eta, n);
    let (lo, hi) = match cfg.interval {
        IntervalSpec::Explicit { lo, hi } => (lo, hi),
        IntervalSpec::Auto { c, grid_step } => {
            let step = grid_step.unwrap_or(data.x_max / 2000.0);
            let r = funcspace::select_interval(&EmpiricalWeight::from_data(&data), c, step)?;
            (r.lo, r.hi)
        }
    };
    let n_in = data.indices_in(lo, hi).len();
    let config = TrainConfig {
        eta,
        log_every: cfg.train.max_steps.max(1),
        seed: cfg.train.seed.wrapping_add(rep as u64),
        ..cfg.train.clone()
    };
    let mut row = RateRow {
        n,
        rep,
        eta,
        status: "ok".into(),
        lo,
        hi,
        n_in,
        mse_interval: f64::NAN,
        loss_interval: f64::NAN,
        truth_loss_interval: metrics::truth_loss_on(&data, lo, hi)?,
        optimized_interval: false,
        optimized_global: None,
    };
    match trainer::train(&config, &data) {
        Ok(out) => {
            row.mse_interval = metrics::mse(&out.params, &data, Some((lo, hi)))?;
            row.loss_interval = metrics::loss_on(&out.params, &data, lo, hi)?;
            row.optimized_interval = row.loss_interval <= row.truth_loss_interval;
            row.optimized_global = out.summary.optimized_vs_ground_truth;
        }
        Err(e) => row.status = e.to_string(),
    }
    Ok(row)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleRow {
    pub n: usize,
    pub rep: usize,
    pub k: usize,
    pub status: String,
    pub residual_rms: f64,
    pub rank: usize,
    /// Span covered by the second-difference bound.
    pub lo: f64,
    pub hi: f64,
    pub tv_middle: f64,
    pub plain_lower_bound: f64,
    pub weighted_tv_middle: f64,
    pub weighted_lower_bound: f64,
    pub weighted_tv: f64,
    pub lambda_max_full: f64,
    pub lambda_max_gn: f64,
    /// `1 + 2 ∫|f''| g`.
    pub gn_lower_bound: f64,
    /// `2 / λ_max`: largest step size for which the interpolant is stable.
    pub eta_ceiling: f64,
    pub lower_bound_pass: bool,
    pub weighted_lower_bound_pass: bool,
    pub sharpness_pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleSize {
    pub n: usize,
    pub valid: usize,
    pub median_weighted_tv: f64,
    pub median_tv_middle: f64,
    pub median_lambda_max_full: f64,
    pub median_eta_ceiling: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleResult {
    pub rows: Vec<CounterexampleRow>,
    pub sizes: Vec<CounterexampleSize>,
}

/// Minimum-norm interpolants of pure-noise labels.
///
/// Width `k = width_factor · n`; first-layer knots are drawn uniformly over
/// the data range so that the random features can fit every sample.
pub fn counterexample_study(cfg: &ExperimentConfig) -> Result<CounterexampleResult> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.reps).map(move |r| (n, r)))
        .collect();
    let rows: Vec<Result<CounterexampleRow>> =
        run_pool(cfg.workers, &jobs, |&(n, rep)| counterexample_cell(cfg, n, rep));
    let rows: Vec<CounterexampleRow> = rows.into_iter().collect::<Result<_>>()?;
    let sizes = cfg
        .n_grid
        .iter()
        .map(|&n| {
            let ok: Vec<&CounterexampleRow> = rows.iter().filter(|r| r.n == n && r.status == "ok").collect();
            let med = |f: &dyn Fn(&CounterexampleRow) -> f64| {
                median(&ok.iter().map(|r| f(r)).collect::<Vec<_>>()).unwrap_or(f64::NAN)
            };
            CounterexampleSize {
                n,
                valid: ok.len(),
                median_weighted_tv: med(&|r| r.weighted_tv),
                median_tv_middle: med(&|r| r.tv_middle),
                median_lambda_max_full: med(&|r| r.lambda_max_full),
                median_eta_ceiling: med(&|r| r.eta_ceiling),
            }
        })
        .collect();
    Ok(CounterexampleResult { rows, sizes })
}

fn counterexample_cell(cfg: &ExperimentConfig, n: usize, rep: usize) -> Result<CounterexampleRow> {
    let data = crate::data::gen_counterexample(
        n,
        cfg.dataset.sigma,
        cfg.dataset.data_seed.wrapping_add(rep as u64),
        cfg.dataset.x_max,
    )?;
    let k = cfg.width_factor * n;
    let (w1, b1) = trainer::gap_covering_layer(&data, k, cfg.train.seed.wrapping_add(rep as u64))?;
    let plain = funcspace::interpolant_tv_lower_bound(&data, LowerBoundMode::PlainMiddle)?;
    let weighted = funcspace::interpolant_tv_lower_bound(&data, LowerBoundMode::WeightedMiddle)?;
    let nan = f64::NAN;
    let mut row = CounterexampleRow {
        n,
        rep,
        k,
        status: "ok".into(),
        residual_rms: nan,
        rank: 0,
        lo: plain.lo,
        hi: plain.hi,
        tv_middle: nan,
        plain_lower_bound: plain.value,
        weighted_tv_middle: nan,
        weighted_lower_bound: weighted.value,
        weighted_tv: nan,
        lambda_max_full: nan,
        lambda_max_gn: nan,
        gn_lower_bound: nan,
        eta_ceiling: nan,
        lower_bound_pass: false,
        weighted_lower_bound_pass: false,
        sharpness_pass: false,
    };
    let fit = match trainer::min_norm_interpolant(&w1, &b1, &data, true) {
        Ok(f) => f,
        Err(e @ Error::NotInterpolating { .. }) => {
            row.status = e.to_string();
            return Ok(row);
        }
        Err(e) => return Err(e),
    };
    row.residual_rms = fit.residual_rms;
    row.rank = fit.rank;
    let weight = EmpiricalWeight::from_data(&data);
    let pwl = relu_net::extract_knots(&fit.params);
    row.tv_middle = funcspace::tv_on_interval(&pwl, plain.lo, plain.hi);
    row.weighted_tv_middle = funcspace::weighted_tv_on_interval(&pwl, &weight, plain.lo, plain.hi);
    row.weighted_tv = funcspace::weighted_tv(&pwl, &weight);
    row.gn_lower_bound = 1.0 + 2.0 * row.weighted_tv;
    match landscape::spectrum_report(&fit.params, &data, cfg.train.eigen_method, DIFF_TOL) {
        Ok(spec) => {
            row.lambda_max_full = spec.lambda_max_full;
            row.lambda_max_gn = spec.lambda_max_gn;
            row.eta_ceiling = 2.0 / spec.lambda_max_full;
            row.sharpness_pass = spec.lambda_max_full >= row.gn_lower_bound - CERT_TOL;
        }
        Err(e) => row.status = e.to_string(),
    }
    row.lower_bound_pass = row.tv_middle >= plain.value - CERT_TOL;
    row.weighted_lower_bound_pass = row.weighted_tv_middle >= weighted.value - CERT_TOL;
    Ok(row)
}

fn cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        fmt_float(v)
    }
}

impl RateResult {
    pub const CSV_HEADER: &'static str =
        "n,rep,eta,status,lo,hi,n_in,mse_interval,loss_interval,truth_loss_interval,optimized_interval,optimized_global";

    /// Write `rate.csv` and `rate.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let rows = self.rows.iter().map(|r| {
            vec![
                r.n.to_string(),
                r.rep.to_string(),
                cell(r.eta),
                csv_text(&r.status),
                cell(r.lo),
                cell(r.hi),
                r.n_in.to_string(),
                cell(r.mse_interval),
                cell(r.loss_interval),
                cell(r.truth_loss_interval),
                r.optimized_interval.to_string(),
                r.optimized_global.map(|b| b.to_string()).unwrap_or_default(),
            ]
        });
        std::fs::write(dir.join("rate.csv"), output::csv_table(Self::CSV_HEADER, rows))?;
        output::write_json(&dir.join("rate.json"), self)
    }
}

impl CounterexampleResult {
    pub const CSV_HEADER: &'static str = "n,rep,k,status,residual_rms,rank,lo,hi,tv_middle,plain_lower_bound,\
weighted_tv_middle,weighted_lower_bound,weighted_tv,lambda_max_full,lambda_max_gn,gn_lower_bound,eta_ceiling,\
lower_bound_pass,weighted_lower_bound_pass,sharpness_pass";

    /// Rows that break an inequality valid for every interpolant.
    pub fn hard_failures(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| r.status == "ok" && !(r.lower_bound_pass && r.weighted_lower_bound_pass && r.sharpness_pass))
            .count()
    }

    /// Write `counterexample.csv` and `counterexample.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let rows = self.rows.iter().map(|r| {
            vec![
                r.n.to_string(),
                r.rep.to_string(),
                r.k.to_string(),
                csv_text(&r.status),
                cell(r.residual_rms),
                r.rank.to_string(),
                cell(r.lo),
                cell(r.hi),
                cell(r.tv_middle),
                cell(r.plain_lower_bound),
                cell(r.weighted_tv_middle),
                cell(r.weighted_lower_bound),
                cell(r.weighted_tv),
                cell(r.lambda_max_full),
                cell(r.lambda_max_gn),
                cell(r.gn_lower_bound),
                cell(r.eta_ceiling),
                r.lower_bound_pass.to_string(),
                r.weighted_lower_bound_pass.to_string(),
                r.sharpness_pass.to_string(),
            ]
        });
        std::fs::write(
            dir.join("counterexample.csv"),
            output::csv_table(Self::CSV_HEADER, rows),
        )?;
        output::write_json(&dir.join("counterexample.json"), self)
    }
}

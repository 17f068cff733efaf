//! Command-line front end: config resolution, experiment dispatch, artifact
//! writing and optional SVG plots.

pub mod config;
pub mod plot;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use minstab_core::experiments::{
    self, counterexample_study, eta_sweep, export_basis, rate_experiment, verify_bounds, CertificateReport,
    ExperimentConfig, SweepTable,
};
use minstab_core::funcspace::{self, EmpiricalWeight, LowerBoundMode};
use minstab_core::landscape;
use minstab_core::output::{csv_table, fmt_float, write_json};
use minstab_core::relu_net::{extract_knots, forward, init_params};
use minstab_core::trainer::{self, min_norm_interpolant, write_run_dir, TrainOutput};
use minstab_core::{Dataset, ErrorFamily, NetParams, RunSummary, TrainRecord};
use serde::Serialize;
use thiserror::Error;

pub use config::{parse_config, parse_config_str, resolved_toml, ConfigError};
use plot::{Chart, Series, Style};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CERTIFICATE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_DIFFERENTIABILITY: i32 = 4;
pub const EXIT_NUMERICAL: i32 = 5;
pub const EXIT_DATA: i32 = 6;
pub const EXIT_IO: i32 = 7;

#[derive(Debug, Parser)]
#[command(
    name = "minstab",
    version,
    about = "Minima-stability experiments for two-layer ReLU networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// TOML config file; defaults apply when omitted.
    #[arg(short, long)]
    pub config: Option<PathBuf>,

    /// Output directory.
    #[arg(short, long, default_value = "out")]
    pub out: PathBuf,

    /// Override a config key, e.g. `--set eta=0.01` or `--set trainer.k=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Also emit SVG plots.
    #[arg(long)]
    pub plot: bool,

    /// Worker threads for independent runs.
    #[arg(long, env = "MINSTAB_WORKERS")]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one network and certify its checkpoints.
    Train(Common),
    /// Learning-rate sweep over seeds.
    Sweep(Common),
    /// Restricted-MSE rate over sample sizes.
    Rate(Common),
    /// Min-norm interpolants on the pure-noise design.
    Counterexample(Common),
    /// Min-norm second-layer interpolant with a frozen random first layer.
    Interpolate(Common),
    /// Evaluate every bound at stored parameters.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        params: PathBuf,
    },
    /// Export per-neuron basis functions on a grid.
    Basis {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 400)]
        points: usize,
    },
    /// Summarize an existing run directory.
    Report {
        /// Run directory written by `train`.
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        plot: bool,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Core(#[from] minstab_core::Error),

    #[error("{0}")]
    Io(String),

    #[error("hard certificate failure: {0}")]
    Certificate(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(ConfigError::Io(_)) | CliError::Io(_) => EXIT_IO,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Certificate(_) => EXIT_CERTIFICATE,
            CliError::Core(e) => match e.family() {
                ErrorFamily::Config => EXIT_CONFIG,
                ErrorFamily::Differentiability => EXIT_DIFFERENTIABILITY,
                ErrorFamily::Numerical => EXIT_NUMERICAL,
                ErrorFamily::Data => EXIT_DATA,
                ErrorFamily::Io => EXIT_IO,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn resolve(common: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = parse_config(common.config.as_deref(), &common.overrides)?;
    if common.workers.is_some() {
        cfg.workers = common.workers;
        cfg.validate()?;
    }
    std::fs::create_dir_all(&common.out)?;
    std::fs::write(common.out.join("resolved_config.toml"), resolved_toml(&cfg))?;
    Ok(cfg)
}

fn write_svg(dir: &Path, name: &str, chart: &Chart) -> CliResult<()> {
    std::fs::write(dir.join(name), chart.render())?;
    Ok(())
}

fn read_params(path: &Path) -> CliResult<NetParams> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Core(e.into()))
}

fn certificate_failures(report: &CertificateReport) -> Option<String> {
    let f = report.hard_failures();
    (!f.is_empty()).then(|| f.join(", "))
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(c) => cmd_train(&c),
        Command::Sweep(c) => cmd_sweep(&c),
        Command::Rate(c) => cmd_rate(&c),
        Command::Counterexample(c) => cmd_counterexample(&c),
        Command::Interpolate(c) => cmd_interpolate(&c),
        Command::Verify { common, params } => cmd_verify(&common, &params),
        Command::Basis { common, params, points } => cmd_basis(&common, &params, points),
        Command::Report { dir, plot } => cmd_report(&dir, plot),
    }
}

fn cmd_train(c: &Common) -> CliResult<()> {
    let cfg = resolve(c)?;
    let data = cfg.dataset.build(cfg.dataset.n, 0)?;
    let out = trainer::train(&cfg.train, &data)?;
    write_run_dir(&c.out, &out)?;
    write_json(&c.out.join("certificates.json"), &out.summary.certificates)?;
    if c.plot {
        plot_run(&c.out, &out, &data)?;
    }
    println!(
        "trained {} steps: loss {} lambda_max {} weighted_tv {}",
        out.summary.steps_run,
        fmt_float(out.summary.final_record.loss),
        out.summary
            .final_record
            .lambda_max_full
            .map(fmt_float)
            .unwrap_or_else(|| "n/a".into()),
        fmt_float(out.summary.final_record.weighted_tv)
    );
    let mut failures = Vec::new();
    if let Some(f) = out.summary.certificates.as_ref().and_then(certificate_failures) {
        failures.push(format!("final: {f}"));
    }
    for r in &out.records {
        if let Some(cert) = experiments::checkpoint_certificate(r, data.x_max) {
            if !cert.tv_bound.pass || !cert.gn_bound.pass {
                failures.push(format!("step {}", r.step));
            }
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Certificate(failures.join("; ")))
    }
}

fn grid(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    funcspace::uniform_grid(lo, hi, m)
}

fn plot_run(dir: &Path, out: &TrainOutput, data: &Dataset) -> CliResult<()> {
    let xs = grid(-data.x_max, data.x_max, 400);
    let mut fit = Chart::new("learned function", "x", "f(x)")
        .with(Series::new(
            "data",
            data.xs.iter().copied().zip(data.ys.iter().copied()).collect(),
            Style::Markers,
        ))
        .with(Series::new(
            "network",
            xs.iter().map(|&x| (x, forward(&out.params, x))).collect(),
            Style::Line,
        ));
    if let Some(f0) = data.ground_truth {
        fit = fit.with(Series::new(
            "ground truth",
            xs.iter().map(|&x| (x, f0.eval(x))).collect(),
            Style::Dashed,
        ));
    }
    write_svg(dir, "fit.svg", &fit)?;
    write_svg(
        dir,
        "learning_curves.svg",
        &learning_chart(&out.records, out.summary.config.eta),
    )?;
    write_svg(dir, "basis.svg", &basis_chart(&out.params, -data.x_max, data.x_max))?;
    Ok(())
}

fn learning_chart(records: &[TrainRecord], eta: f64) -> Chart {
    let step = |r: &TrainRecord| r.step.max(1) as f64;
    let lam: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| r.lambda_max_full.map(|l| (step(r), l)))
        .collect();
    let span: Vec<(f64, f64)> = match (records.first(), records.last()) {
        (Some(a), Some(b)) => vec![(step(a), 2.0 / eta), (step(b), 2.0 / eta)],
        _ => vec![],
    };
    Chart::new("learning curves", "step", "value")
        .log_y()
        .with(Series::new(
            "loss",
            records.iter().map(|r| (step(r), r.loss)).collect(),
            Style::Line,
        ))
        .with(Series::new("lambda_max", lam, Style::Line))
        .with(Series::new("2/eta", span, Style::Dashed))
        .with(Series::new(
            "weighted TV",
            records.iter().map(|r| (step(r), r.weighted_tv)).collect(),
            Style::Line,
        ))
}

fn basis_chart(params: &NetParams, lo: f64, hi: f64) -> Chart {
    let m = 200;
    let xs = grid(lo, hi, m);
    let basis = export_basis(params, lo, hi, m).expect("grid has at least two points");
    let mut order: Vec<usize> = (0..params.k()).collect();
    let peak = |j: usize| basis.row(j).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    order.sort_by(|&a, &b| peak(b).total_cmp(&peak(a)));
    let mut chart = Chart::new("largest basis functions", "x", "w2 relu(w1 x + b1)");
    for &j in order.iter().take(10) {
        chart = chart.with(Series::new(
            format!("neuron {j}"),
            xs.iter().copied().zip(basis.row(j).iter().copied()).collect(),
            Style::Line,
        ));
    }
    chart
}

fn cmd_sweep(c: &Common) -> CliResult<()> {
    let cfg = resolve(c)?;
    let table = eta_sweep(&cfg)?;
    table.write(&c.out)?;
    if c.plot {
        write_svg(&c.out, "sweep.svg", &sweep_chart(&table))?;
    }
    for m in &table.medians {
        println!(
            "eta {} ok {} loss {} mse {} weighted_tv {} knots {}",
            fmt_float(m.eta),
            m.ok_runs,
            fmt_float(m.loss),
            fmt_float(m.mse),
            fmt_float(m.weighted_tv),
            m.knot_count
        );
    }
    let bad: Vec<String> = table
        .rows
        .iter()
        .filter(|r| r.checkpoint_tv_failures + r.checkpoint_gn_failures > 0)
        .map(|r| format!("eta {} rep {}", r.eta, r.rep))
        .chain(table.certificates.iter().filter_map(|cc| {
            cc.report
                .as_ref()
                .and_then(certificate_failures)
                .map(|f| format!("eta {} rep {}: {f}", cc.eta, cc.rep))
        }))
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::Certificate(bad.join("; ")))
    }
}

fn sweep_chart(table: &SweepTable) -> Chart {
    let series = |f: fn(&experiments::MedianRow) -> f64| table.medians.iter().map(|m| (m.eta, f(m))).collect();
    Chart::new("median over seeds", "learning rate", "value")
        .log_x()
        .log_y()
        .with(Series::new("MSE", series(|m| m.mse), Style::Line))
        .with(Series::new("loss", series(|m| m.loss), Style::Line))
        .with(Series::new("weighted TV", series(|m| m.weighted_tv), Style::Line))
        .with(Series::new("lambda_max", series(|m| m.lambda_max_full), Style::Line))
}

fn cmd_rate(c: &Common) -> CliResult<()> {
    let cfg = resolve(c)?;
    let r = rate_experiment(&cfg)?;
    r.write(&c.out)?;
    if c.plot {
        let pts = r.sizes.iter().map(|s| (s.median_n_in, s.median_mse_interval)).collect();
        let chart = Chart::new("restricted MSE", "n_I", "median MSE_I")
            .log_x()
            .log_y()
            .with(Series::new("median", pts, Style::Line));
        write_svg(&c.out, "rate.svg", &chart)?;
    }
    match r.slope {
        Some(s) => println!("log-log slope {}", fmt_float(s)),
        None => println!("no slope ({:?})", r.flag),
    }
    Ok(())
}

fn cmd_counterexample(c: &Common) -> CliResult<()> {
    let cfg = resolve(c)?;
    let r = counterexample_study(&cfg)?;
    r.write(&c.out)?;
    if c.plot {
        let series =
            |f: fn(&experiments::CounterexampleSize) -> f64| r.sizes.iter().map(|s| (s.n as f64, f(s))).collect();
        let chart = Chart::new("min-norm interpolants", "n", "median")
            .log_x()
            .log_y()
            .with(Series::new(
                "weighted TV",
                series(|s| s.median_weighted_tv),
                Style::Line,
            ))
            .with(Series::new("middle TV", series(|s| s.median_tv_middle), Style::Line))
            .with(Series::new(
                "lambda_max",
                series(|s| s.median_lambda_max_full),
                Style::Line,
            ));
        write_svg(&c.out, "counterexample.svg", &chart)?;
    }
    for s in &r.sizes {
        println!(
            "n {} valid {} weighted_tv {} lambda_max {} largest stable eta {}",
            s.n,
            s.valid,
            fmt_float(s.median_weighted_tv),
            fmt_float(s.median_lambda_max_full),
            fmt_float(s.median_eta_ceiling)
        );
    }
    match r.hard_failures() {
        0 => Ok(()),
        n => Err(CliError::Certificate(format!("{n} interpolants violate a bound"))),
    }
}

#[derive(Serialize)]
struct InterpolationReport {
    k: usize,
    residual_rms: f64,
    rank: usize,
    interpolates: bool,
    tv_plain: f64,
    weighted_tv: f64,
    lambda_max_full: Option<f64>,
    lambda_max_gn: Option<f64>,
    plain_lower_bound: Option<f64>,
}

fn cmd_interpolate(c: &Common) -> CliResult<()> {
    let cfg = resolve(c)?;
    let data = cfg.dataset.build(cfg.dataset.n, 0)?;
    let first = init_params(cfg.train.k, cfg.train.init, cfg.train.seed)?;
    let fit = min_norm_interpolant(&first.w1, &first.b1, &data, false)?;
    let pwl = extract_knots(&fit.params);
    let spectrum = landscape::spectrum_report(&fit.params, &data, cfg.train.eigen_method, cfg.train.diff_tol).ok();
    let report = InterpolationReport {
        k: cfg.train.k,
        residual_rms: fit.residual_rms,
        rank: fit.rank,
        interpolates: fit.residual_rms <= trainer::INTERP_TOL,
        tv_plain: funcspace::tv_on_interval(&pwl, data.min_x(), data.max_x()),
        weighted_tv: funcspace::weighted_tv(&pwl, &EmpiricalWeight::from_data(&data)),
        lambda_max_full: spectrum.as_ref().map(|s| s.lambda_max_full),
        lambda_max_gn: spectrum.as_ref().map(|s| s.lambda_max_gn),
        plain_lower_bound: funcspace::interpolant_tv_lower_bound(&data, LowerBoundMode::PlainMiddle)
            .ok()
            .map(|b| b.value),
    };
    write_json(&c.out.join("params.json"), &fit.params)?;
    write_json(&c.out.join("interpolant.json"), &report)?;
    if c.plot {
        let xs = grid(-data.x_max, data.x_max, 600);
        let chart = Chart::new("min-norm interpolant", "x", "f(x)")
            .with(Series::new(
                "data",
                data.xs.iter().copied().zip(data.ys.iter().copied()).collect(),
                Style::Markers,
            ))
            .with(Series::new(
                "interpolant",
                xs.iter().map(|&x| (x, forward(&fit.params, x))).collect(),
                Style::Line,
            ));
        write_svg(&c.out, "interpolant.svg", &chart)?;
    }
    println!(
        "k {} residual rms {} weighted_tv {}",
        report.k,
        fmt_float(report.residual_rms),
        fmt_float(report.weighted_tv)
    );
    Ok(())
}

fn cmd_verify(c: &Common, params: &Path) -> CliResult<()> {
    let cfg = resolve(c)?;
    let p = read_params(params)?;
    let data = cfg.dataset.build(cfg.dataset.n, 0)?;
    let report = verify_bounds(&p, &data, cfg.train.eta, cfg.train.delta)?;
    write_json(&c.out.join("certificates.json"), &report)?;
    println!(
        "tv_bound slack {} gn_bound slack {} hessian_norm slack {}",
        fmt_float(report.tv_bound.slack),
        fmt_float(report.gn_bound.slack),
        fmt_float(report.hessian_norm.slack)
    );
    match certificate_failures(&report) {
        None => Ok(()),
        Some(f) => Err(CliError::Certificate(f)),
    }
}

fn cmd_basis(c: &Common, params: &Path, points: usize) -> CliResult<()> {
    let cfg = resolve(c)?;
    let p = read_params(params)?;
    let (lo, hi) = (-cfg.dataset.x_max, cfg.dataset.x_max);
    let basis = export_basis(&p, lo, hi, points)?;
    let xs = grid(lo, hi, points);
    let header: String = std::iter::once("x".to_string())
        .chain((0..p.k()).map(|j| format!("neuron_{j}")))
        .collect::<Vec<_>>()
        .join(",");
    let rows = xs.iter().enumerate().map(|(i, &x)| {
        std::iter::once(fmt_float(x))
            .chain((0..p.k()).map(|j| fmt_float(basis[(j, i)])))
            .collect()
    });
    std::fs::write(c.out.join("basis.csv"), csv_table(&header, rows))?;
    let sparsity = experiments::sparsity_metrics(&p, cfg.train.dslope_tol, &cfg.dataset.build(cfg.dataset.n, 0)?);
    write_json(&c.out.join("sparsity.json"), &sparsity)?;
    if c.plot {
        write_svg(&c.out, "basis.svg", &basis_chart(&p, lo, hi))?;
    }
    println!("{} neurons, {} in-range knots", p.k(), sparsity.knot_count);
    Ok(())
}

fn cmd_report(dir: &Path, plot: bool) -> CliResult<()> {
    let summary_text = std::fs::read_to_string(dir.join("summary.json"))?;
    let summary: RunSummary = serde_json::from_str(&summary_text).map_err(|e| CliError::Core(e.into()))?;
    let mut reader = csv::Reader::from_path(dir.join("records.csv")).map_err(|e| CliError::Io(e.to_string()))?;
    let records: Vec<TrainRecord> = reader
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Io(e.to_string()))?;
    let f = &summary.final_record;
    let mut lines = vec![
        format!("steps run: {}", summary.steps_run),
        format!("records: {}", records.len()),
        format!("final loss: {}", fmt_float(f.loss)),
        format!("final weighted TV: {}", fmt_float(f.weighted_tv)),
        format!("final knots in range: {}", f.knot_count),
        format!(
            "final lambda_max: {} (2/eta = {})",
            f.lambda_max_full.map(fmt_float).unwrap_or_else(|| "n/a".into()),
            fmt_float(2.0 / summary.config.eta)
        ),
        format!("stable: {:?}", summary.stable),
        format!("steady state from step: {:?}", summary.steady_state_step),
        format!("below edge of stability from record: {:?}", summary.beos_index),
        format!("optimized vs ground truth: {:?}", summary.optimized_vs_ground_truth),
    ];
    if let Some(c) = &summary.certificates {
        lines.push(format!(
            "certificate failures: {}",
            certificate_failures(c).unwrap_or_else(|| "none".into())
        ));
    }
    let text = lines.join("\n") + "\n";
    std::fs::write(dir.join("report.txt"), &text)?;
    print!("{text}");
    if plot {
        write_svg(
            dir,
            "learning_curves.svg",
            &learning_chart(&records, summary.config.eta),
        )?;
        let x_max = parse_config(Some(&dir.join("resolved_config.toml")), &[])
            .map(|c| c.dataset.x_max)
            .unwrap_or(1.0);
        let lo = -x_max;
        write_svg(dir, "basis.svg", &basis_chart(&summary.final_params, lo, -lo))?;
    }
    Ok(())
}

//! Sweep drivers, statistical metrics, certificate bundling and spline
//! diagnostics.

mod certificates;
mod config;
mod drivers;
mod metrics;

pub use certificates::{
    checkpoint_certificate, verify_bounds, CertificateReport, Check, CheckpointCertificate, CERT_TOL, D3_SAMPLES,
};
pub use config::{DatasetSpec, Design, EtaMode, ExperimentConfig, IntervalSpec};
pub use drivers::{
    counterexample_study, eta_sweep, increasing_steps, interior_minimum, rate_experiment, run_pool, sweep_row,
    sweep_runs, sweep_table, CellCertificates, CounterexampleResult, CounterexampleRow, CounterexampleSize, MedianRow,
    RateFlag, RateResult, RateRow, RateSize, SweepCell, SweepRow, SweepTable,
};
pub use metrics::{
    export_basis, generalization_gap, in_range_knots, loglog_slope, loss_on, median, mse, quantile, sparsity_metrics,
    truth_loss_on, SparsityMetrics,
};

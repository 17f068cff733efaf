//! Gradient-descent stability experiments for two-layer univariate ReLU
//! networks: closed-form derivatives, loss-Hessian spectra, full-batch
//! training, linear-spline functionals and certificate sweeps.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod eigen;
pub mod error;
pub mod experiments;
pub mod funcspace;
pub mod landscape;
pub mod output;
pub mod relu_net;
pub mod rng;
pub mod trainer;

pub use data::{gen_counterexample, gen_hat_dataset, Dataset, GroundTruth};
pub use eigen::{lambda_max, EigenMethod, SymmetricOperator, TopEigen};
pub use error::{Error, ErrorFamily, Result};
pub use experiments::{CertificateReport, ExperimentConfig};
pub use funcspace::{EmpiricalWeight, IntervalReport, LowerBoundMode, Sharpness};
pub use landscape::SpectrumReport;
pub use relu_net::{InitScheme, Knot, NetParams, PiecewiseLinear};
pub use trainer::{RunSummary, TrainConfig, TrainOutput, TrainRecord};

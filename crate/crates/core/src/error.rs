use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the analysis routines can report.
///
/// Variants are grouped into families (see [`Error::family`]) so that a
/// command-line front end can map them onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(
        "loss is not twice differentiable: neuron {neuron} has pre-activation {preactivation:e} at sample {sample:?}"
    )]
    NotTwiceDifferentiable {
        sample: Option<usize>,
        neuron: usize,
        preactivation: f64,
    },

    #[error("power iteration did not converge after {iters} iterations (rayleigh {rayleigh}, residual {residual:e})")]
    NoConvergence { iters: usize, rayleigh: f64, residual: f64 },

    #[error("gradient descent diverged at step {step}")]
    Diverged {
        step: usize,
        last_finite: Option<Box<crate::trainer::TrainRecord>>,
    },

    #[error("least-squares fit does not interpolate: residual rms {rms:e} > {tol:e}")]
    NotInterpolating { rms: f64, tol: f64 },

    #[error("dataset has no ground-truth function")]
    MissingGroundTruth,

    #[error("dataset has no noise level")]
    MissingSigma,

    #[error("no grid point has g >= {c}")]
    NoInterval { c: f64 },

    #[error("design is not equispaced (relative spacing deviation {deviation:e})")]
    NotEquispaced { deviation: f64 },

    #[error("no data points in [{lo}, {hi}]")]
    EmptyInterval { lo: f64, hi: f64 },

    #[error("only {valid} usable sizes, need at least {required}")]
    InsufficientData { valid: usize, required: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse error classes, one per CLI exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorFamily {
    Config,
    Differentiability,
    Numerical,
    Data,
    Io,
}

impl Error {
    pub fn family(&self) -> ErrorFamily {
        match self {
            Error::InvalidConfig(_) => ErrorFamily::Config,
            Error::NotTwiceDifferentiable { .. } => ErrorFamily::Differentiability,
            Error::NoConvergence { .. } | Error::Diverged { .. } | Error::NotInterpolating { .. } => {
                ErrorFamily::Numerical
            }
            Error::MissingGroundTruth
            | Error::MissingSigma
            | Error::NoInterval { .. }
            | Error::NotEquispaced { .. }
            | Error::EmptyInterval { .. }
            | Error::InsufficientData { .. } => ErrorFamily::Data,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => ErrorFamily::Io,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

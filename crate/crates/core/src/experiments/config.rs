use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset};
use crate::error::{invalid, Result};
use crate::trainer::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    Hat,
    Counterexample,
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub design: Design,
    pub n: usize,
    pub sigma: f64,
    pub x_max: f64,
    /// Replicate `r` uses `data_seed + r`.
    pub data_seed: u64,
    /// CSV source for `Design::File`.
    pub path: Option<PathBuf>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            design: Design::Hat,
            n: 30,
            sigma: 0.5,
            x_max: 0.5,
            data_seed: 1001,
            path: None,
        }
    }
}

impl DatasetSpec {
    /// Dataset of size `n` for replicate `rep`.
    pub fn build(&self, n: usize, rep: usize) -> Result<Dataset> {
        let seed = self.data_seed.wrapping_add(rep as u64);
        match self.design {
            Design::Hat => data::gen_hat_dataset(n, self.sigma, seed, self.x_max),
            Design::Counterexample => data::gen_counterexample(n, self.sigma, seed, self.x_max),
            Design::File => {
                let path = self
                    .path
                    .as_ref()
                    .ok_or_else(|| invalid("path is required for the file design"))?;
                Dataset::from_csv(path, Some(self.x_max))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IntervalSpec {
    Explicit {
        lo: f64,
        hi: f64,
    },
    /// Longest grid interval with `g >= c`; default step `x_max / 2000`.
    Auto {
        c: f64,
        grid_step: Option<f64>,
    },
}

impl Default for IntervalSpec {
    fn default() -> Self {
        IntervalSpec::Auto {
            c: 1.0 / 4320.0,
            grid_step: None,
        }
    }
}

/// Step size used for a dataset of size `n` in the rate experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EtaMode {
    Constant,
    /// `η(n) = η₀ (n / reference_n)^exponent`.
    Scaled {
        reference_n: usize,
        exponent: f64,
    },
}

impl EtaMode {
    pub fn eta(self, eta0: f64, n: usize) -> f64 {
        match self {
            EtaMode::Constant => eta0,
            EtaMode::Scaled { reference_n, exponent } => eta0 * (n as f64 / reference_n as f64).powf(exponent),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub dataset: DatasetSpec,
    pub reps: usize,
    pub eta_grid: Vec<f64>,
    pub n_grid: Vec<usize>,
    pub interval: IntervalSpec,
    pub eta_mode: EtaMode,
    /// Hidden width per sample in the counter-example study (`k = factor · n`).
    pub width_factor: usize,
    /// Equal to `max_steps · η₀ / η` per cell instead of `max_steps` when set.
    pub equal_time: bool,
    /// Worker threads; `None` leaves the choice to the pool.
    pub workers: Option<usize>,
    /// Monte-Carlo test draws for the generalization gap.
    pub test_m: usize,
    pub test_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            dataset: DatasetSpec::default(),
            reps: 5,
            eta_grid: vec![0.4, 0.2, 0.1, 0.05, 0.01],
            n_grid: vec![64, 128, 256, 512, 1024],
            interval: IntervalSpec::default(),
            eta_mode: EtaMode::Constant,
            width_factor: 2,
            equal_time: false,
            workers: None,
            test_m: 100_000,
            test_seed: 7,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let d = &self.dataset;
        if d.n < 2 {
            return Err(invalid("n must be at least 2"));
        }
        if !(d.sigma >= 0.0 && d.sigma.is_finite()) {
            return Err(invalid("sigma must be nonnegative"));
        }
        if !(d.x_max > 0.0 && d.x_max.is_finite()) {
            return Err(invalid("x_max must be positive"));
        }
        if d.design == Design::File && d.path.is_none() {
            return Err(invalid("path is required for the file design"));
        }
        if self.reps == 0 {
            return Err(invalid("reps must be at least 1"));
        }
        if self.eta_grid.is_empty() || self.eta_grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(invalid("eta_grid must be nonempty and positive"));
        }
        if self.n_grid.is_empty() || self.n_grid.iter().any(|&n| n < 2) {
            return Err(invalid("n_grid must be nonempty with sizes >= 2"));
        }
        match self.interval {
            IntervalSpec::Explicit { lo, hi } if !(lo < hi) => return Err(invalid("interval must satisfy lo < hi")),
            IntervalSpec::Auto { c, grid_step } if !(c > 0.0) || grid_step.is_some_and(|s| !(s > 0.0)) => {
                return Err(invalid("interval must have positive c and grid_step"))
            }
            _ => {}
        }
        if let EtaMode::Scaled { reference_n, exponent } = self.eta_mode {
            if reference_n == 0 || !exponent.is_finite() {
                return Err(invalid("eta_mode must have reference_n > 0 and a finite exponent"));
            }
        }
        if self.width_factor == 0 {
            return Err(invalid("width_factor must be positive"));
        }
        if self.workers == Some(0) {
            return Err(invalid("workers must be positive"));
        }
        if self.test_m == 0 {
            return Err(invalid("test_m must be positive"));
        }
        Ok(())
    }

    /// Step budget for a cell trained at `eta`.
    pub fn steps_for(&self, eta: f64) -> usize {
        if self.equal_time {
            (self.train.max_steps as f64 * self.train.eta / eta).round() as usize
        } else {
            self.train.max_steps
        }
    }
}

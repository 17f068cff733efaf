//! Fixed-design regression samples and the two synthetic designs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::SeededStream;

/// Known regression functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruth {
    /// `(2x + 1) 1(x <= 0) + (1 - 2x) 1(x > 0)`.
    Hat,
    Zero,
}

impl GroundTruth {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            GroundTruth::Hat => {
                if x <= 0.0 {
                    2.0 * x + 1.0
                } else {
                    -2.0 * x + 1.0
                }
            }
            GroundTruth::Zero => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub x_max: f64,
    pub ground_truth: Option<GroundTruth>,
    pub sigma: Option<f64>,
    pub noises: Option<Vec<f64>>,
}

impl Dataset {
    /// Validated construction: `n >= 2`, strictly increasing inputs, all within
    /// `[-x_max, x_max]`, and `y = f0(x) + noise` exactly when both are given.
    pub fn new(
        xs: Vec<f64>,
        ys: Vec<f64>,
        x_max: f64,
        ground_truth: Option<GroundTruth>,
        sigma: Option<f64>,
        noises: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = xs.len();
        if n < 2 {
            return Err(invalid("dataset needs at least two points"));
        }
        if ys.len() != n {
            return Err(invalid("xs and ys differ in length"));
        }
        if !(x_max > 0.0 && x_max.is_finite()) {
            return Err(invalid("x_max must be positive and finite"));
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(invalid("data must be finite"));
        }
        if xs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("xs must be strictly increasing"));
        }
        if xs.iter().any(|x| x.abs() > x_max) {
            return Err(invalid("some |x| exceeds x_max"));
        }
        if let Some(s) = sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(invalid("sigma must be nonnegative"));
            }
        }
        if let Some(eps) = &noises {
            if eps.len() != n {
                return Err(invalid("noise vector length differs from n"));
            }
            if let Some(f0) = ground_truth {
                let consistent = xs.iter().zip(&ys).zip(eps).all(|((&x, &y), &e)| y == f0.eval(x) + e);
                if !consistent {
                    return Err(invalid("labels do not equal f0(x) + noise"));
                }
            }
        }
        Ok(Self {
            xs,
            ys,
            x_max,
            ground_truth,
            sigma,
            noises,
        })
    }

    pub fn n(&self) -> usize {
        self.xs.len()
    }

    pub fn min_x(&self) -> f64 {
        self.xs[0]
    }

    pub fn max_x(&self) -> f64 {
        self.xs[self.xs.len() - 1]
    }

    pub fn truth(&self) -> Result<GroundTruth> {
        self.ground_truth.ok_or(Error::MissingGroundTruth)
    }

    pub fn sigma(&self) -> Result<f64> {
        self.sigma.ok_or(Error::MissingSigma)
    }

    /// Indices of inputs inside the closed interval.
    pub fn indices_in(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let a = self.xs.partition_point(|&x| x < lo);
        let b = self.xs.partition_point(|&x| x <= hi);
        a..b.max(a)
    }

    /// Load a `x,y` CSV (header required). Rows are sorted by `x`; `x_max`
    /// defaults to the largest `|x|`.
    pub fn from_csv(path: &Path, x_max: Option<f64>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            x: f64,
            y: f64,
        }
        let mut rdr = csv::Reader::from_path(path)?;
        let mut rows: Vec<Row> = rdr.deserialize().collect::<Result<_, _>>()?;
        rows.sort_by(|a, b| a.x.total_cmp(&b.x));
        let xs: Vec<f64> = rows.iter().map(|r| r.x).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.y).collect();
        let x_max = x_max.unwrap_or_else(|| xs.iter().fold(0.0_f64, |m, x| m.max(x.abs())));
        Dataset::new(xs, ys, x_max, None, None, None)
    }
}

/// `n` equispaced inputs on `[-x_max, x_max]`, hat ground truth, Gaussian
/// label noise drawn from the seeded stream.
pub fn gen_hat_dataset(n: usize, sigma: f64, seed: u64, x_max: f64) -> Result<Dataset> {
    if n < 2 {
        return Err(invalid("n must be at least 2"));
    }
    let xs: Vec<f64> = (0..n)
        .map(|i| {
            if i == n - 1 {
                x_max
            } else {
                -x_max + 2.0 * x_max * (i as f64) / ((n - 1) as f64)
            }
        })
        .collect();
    labelled(xs, GroundTruth::Hat, sigma, seed, x_max)
}

/// Inputs `x_i = 2 x_max i/(n-1) - (n+1) x_max/(n-1)` for `i = 1..n` with
/// pure-noise labels.
pub fn gen_counterexample(n: usize, sigma: f64, seed: u64, x_max: f64) -> Result<Dataset> {
    if n < 2 {
        return Err(invalid("n must be at least 2"));
    }
    let denom = (n - 1) as f64;
    let xs: Vec<f64> = (1..=n)
        .map(|i| x_max * ((2 * i as i64 - n as i64 - 1) as f64 / denom))
        .collect();
    labelled(xs, GroundTruth::Zero, sigma, seed, x_max)
}

fn labelled(xs: Vec<f64>, f0: GroundTruth, sigma: f64, seed: u64, x_max: f64) -> Result<Dataset> {
    if !(sigma >= 0.0) {
        return Err(invalid("sigma must be nonnegative"));
    }
    let mut stream = SeededStream::new(seed);
    let noises: Vec<f64> = xs.iter().map(|_| stream.normal(sigma)).collect();
    let ys = xs.iter().zip(&noises).map(|(&x, &e)| f0.eval(x) + e).collect();
    Dataset::new(xs, ys, x_max, Some(f0), Some(sigma), Some(noises))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hat_values() {
        assert_eq!(GroundTruth::Hat.eval(0.0), 1.0);
        assert_eq!(GroundTruth::Hat.eval(0.5), 0.0);
        assert_eq!(GroundTruth::Hat.eval(-0.5), 0.0);
    }

    #[test]
    fn noiseless_hat_labels_are_exact() {
        let d = gen_hat_dataset(30, 0.0, 1, 0.5).unwrap();
        for (x, y) in d.xs.iter().zip(&d.ys) {
            assert_eq!(*y, GroundTruth::Hat.eval(*x));
        }
        assert_eq!(d.xs[0], -0.5);
        assert_eq!(d.xs[29], 0.5);
    }

    #[test]
    fn seeds_change_noise_not_design() {
        let a = gen_hat_dataset(30, 0.5, 1, 0.5).unwrap();
        let b = gen_hat_dataset(30, 0.5, 2, 0.5).unwrap();
        assert_eq!(a.xs, b.xs);
        assert_ne!(a.noises, b.noises);
        assert_eq!(a, gen_hat_dataset(30, 0.5, 1, 0.5).unwrap());
    }

    #[test]
    fn counterexample_grid() {
        let d = gen_counterexample(41, 0.0, 3, 1.5).unwrap();
        assert_eq!(d.xs[0], -1.5);
        assert_eq!(d.xs[40], 1.5);
        assert!(d.ys.iter().all(|&y| y == 0.0));
        let h = 3.0 / 40.0;
        for w in d.xs.windows(2) {
            assert!(((w[1] - w[0]) - h).abs() <= 1e-12 * h);
        }
    }

    #[test]
    fn validation() {
        assert!(Dataset::new(vec![0.0], vec![0.0], 1.0, None, None, None).is_err());
        assert!(Dataset::new(vec![0.1, 0.0], vec![0.0, 0.0], 1.0, None, None, None).is_err());
        assert!(Dataset::new(vec![0.0, 2.0], vec![0.0, 0.0], 1.0, None, None, None).is_err());
        assert!(Dataset::new(
            vec![0.0, 0.5],
            vec![0.0, 0.0],
            1.0,
            Some(GroundTruth::Hat),
            None,
            Some(vec![0.0, 0.0])
        )
        .is_err());
    }

    #[test]
    fn interval_indices() {
        let d = gen_hat_dataset(11, 0.0, 0, 0.5).unwrap();
        let r = d.indices_in(-0.1, 0.1);
        assert_eq!(r, 4..7);
        assert!(d.indices_in(0.61, 0.9).is_empty());
    }
}

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::funcspace::uniform_grid;
use crate::relu_net::{self, NetParams, PiecewiseLinear};
use crate::rng::SeededStream;

/// `(1/n_I) Σ_{x_i ∈ I} (f(x_i) - f0(x_i))²`, over all data without an
/// interval.
pub fn mse(params: &NetParams, data: &Dataset, interval: Option<(f64, f64)>) -> Result<f64> {
    let f0 = data.truth()?;
    let range = match interval {
        Some((lo, hi)) => data.indices_in(lo, hi),
        None => 0..data.n(),
    };
    if range.is_empty() {
        let (lo, hi) = interval.unwrap_or((f64::NAN, f64::NAN));
        return Err(Error::EmptyInterval { lo, hi });
    }
    let m = range.len() as f64;
    Ok(data.xs[range]
        .iter()
        .map(|&x| (relu_net::forward(params, x) - f0.eval(x)).powi(2))
        .sum::<f64>()
        / m)
}

/// `1/(2 n_I) Σ_{x_i ∈ I} (f(x_i) - y_i)²`.
pub fn loss_on(params: &NetParams, data: &Dataset, lo: f64, hi: f64) -> Result<f64> {
    let range = data.indices_in(lo, hi);
    if range.is_empty() {
        return Err(Error::EmptyInterval { lo, hi });
    }
    let m = range.len() as f64;
    Ok(range
        .map(|i| (relu_net::forward(params, data.xs[i]) - data.ys[i]).powi(2))
        .sum::<f64>()
        / (2.0 * m))
}

/// `1/(2 n_I) Σ_{x_i ∈ I} (f0(x_i) - y_i)²`.
pub fn truth_loss_on(data: &Dataset, lo: f64, hi: f64) -> Result<f64> {
    let f0 = data.truth()?;
    let range = data.indices_in(lo, hi);
    if range.is_empty() {
        return Err(Error::EmptyInterval { lo, hi });
    }
    let m = range.len() as f64;
    Ok(range.map(|i| (f0.eval(data.xs[i]) - data.ys[i]).powi(2)).sum::<f64>() / (2.0 * m))
}

/// `|E_test (f(x) - y)² - (1/n_I) Σ_{x_i ∈ I} (f(x_i) - y_i)²|` with `m`
/// fresh draws `x ~ U(I)`, `y = f0(x) + N(0, σ²)`.
pub fn generalization_gap(
    params: &NetParams,
    data: &Dataset,
    lo: f64,
    hi: f64,
    test_seed: u64,
    m: usize,
) -> Result<f64> {
    let f0 = data.truth()?;
    let sigma = data.sigma()?;
    if m == 0 {
        return Err(invalid("m must be positive"));
    }
    let train = 2.0 * loss_on(params, data, lo, hi)?;
    let mut s = SeededStream::new(test_seed);
    let mut acc = 0.0;
    for _ in 0..m {
        let x = s.uniform(lo, hi);
        let y = f0.eval(x) + s.normal(sigma);
        acc += (relu_net::forward(params, x) - y).powi(2);
    }
    Ok((acc / m as f64 - train).abs())
}

/// Knots strictly inside `(lo, hi)` with `|dslope| > tol`.
pub fn in_range_knots(pwl: &PiecewiseLinear, lo: f64, hi: f64, tol: f64) -> usize {
    pwl.knots
        .iter()
        .filter(|k| k.position > lo && k.position < hi && k.dslope.abs() > tol)
        .count()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityMetrics {
    pub knot_count: usize,
    /// `Σ |dslope|` over the counted knots.
    pub l1: f64,
    /// 10/25/50/75/90% quantiles of counted knot positions.
    pub quantiles: Option<[f64; 5]>,
    /// Smallest distance from any knot to any datum.
    pub min_knot_data_distance: Option<f64>,
}

pub fn sparsity_metrics(params: &NetParams, dslope_tol: f64, data: &Dataset) -> SparsityMetrics {
    let pwl = relu_net::extract_knots(params);
    let (lo, hi) = (data.min_x(), data.max_x());
    let counted: Vec<f64> = pwl
        .knots
        .iter()
        .filter(|k| k.position > lo && k.position < hi && k.dslope.abs() > dslope_tol)
        .map(|k| k.position)
        .collect();
    let l1 = pwl
        .knots
        .iter()
        .filter(|k| k.position > lo && k.position < hi && k.dslope.abs() > dslope_tol)
        .map(|k| k.dslope.abs())
        .sum();
    let quantiles = (!counted.is_empty()).then(|| [0.1, 0.25, 0.5, 0.75, 0.9].map(|q| quantile(&counted, q)));
    let min_knot_data_distance = pwl
        .knots
        .iter()
        .map(|k| {
            let i = data.xs.partition_point(|&x| x < k.position);
            let right = data.xs.get(i).map(|x| x - k.position);
            let left = i.checked_sub(1).map(|j| k.position - data.xs[j]);
            right.into_iter().chain(left).fold(f64::INFINITY, f64::min)
        })
        .reduce(f64::min);
    SparsityMetrics {
        knot_count: counted.len(),
        l1,
        quantiles,
        min_knot_data_distance,
    }
}

/// Linear-interpolation quantile of sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Median of the finite values; `None` when there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len();
    Some(if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    })
}

/// Row `j` holds `w2_j φ(w1_j x + b1_j)` on `m` uniform points of `[lo, hi]`.
pub fn export_basis(params: &NetParams, lo: f64, hi: f64, m: usize) -> Result<DMatrix<f64>> {
    if m < 2 || !(lo < hi) {
        return Err(invalid("basis export needs m >= 2 and lo < hi"));
    }
    let grid = uniform_grid(lo, hi, m);
    Ok(DMatrix::from_fn(params.k(), m, |j, i| {
        params.w2[j] * params.preactivation(j, grid[i]).max(0.0)
    }))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

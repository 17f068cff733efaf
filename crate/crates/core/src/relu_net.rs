//! Two-layer univariate ReLU networks
//!
//! `f(x) = sum_j w2_j * relu(w1_j * x + b1_j) + b2`, with the parameter vector
//! flattened as `(w1_1..w1_k, b1_1..b1_k, w2_1..w2_k, b2)`.
//!
//! The activation derivative uses the strict indicator `1(u > 0)`, so the
//! gradient is defined everywhere. The Hessian is only returned where every
//! pre-activation is bounded away from zero.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::SeededStream;

/// Default absolute pre-activation tolerance for Hessian admissibility.
pub const DIFF_TOL: f64 = 1e-8;
/// Knots closer than this are merged into one.
pub const KNOT_MERGE_TOL: f64 = 1e-9;
/// Merged knots with a slope jump at or below this are dropped.
pub const DSLOPE_ZERO_TOL: f64 = 1e-12;

#[inline]
fn relu(u: f64) -> f64 {
    if u > 0.0 {
        u
    } else {
        0.0
    }
}

/// Parameters of a width-`k` network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FlatParams", into = "FlatParams")]
pub struct NetParams {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

/// On-disk form: `{"k": k, "theta": [w1.., b1.., w2.., b2]}`.
#[derive(Serialize, Deserialize)]
struct FlatParams {
    k: usize,
    theta: Vec<f64>,
}

impl TryFrom<FlatParams> for NetParams {
    type Error = Error;

    fn try_from(flat: FlatParams) -> Result<Self> {
        NetParams::unflatten(flat.k, &flat.theta)
    }
}

impl From<NetParams> for FlatParams {
    fn from(p: NetParams) -> Self {
        FlatParams {
            k: p.k(),
            theta: p.flatten(),
        }
    }
}

/// Index helpers into the flattened parameter vector.
#[derive(Clone, Copy, Debug)]
pub struct Layout {
    pub k: usize,
}

impl Layout {
    pub fn dim(self) -> usize {
        3 * self.k + 1
    }
    pub fn w1(self, j: usize) -> usize {
        j
    }
    pub fn b1(self, j: usize) -> usize {
        self.k + j
    }
    pub fn w2(self, j: usize) -> usize {
        2 * self.k + j
    }
    pub fn b2(self) -> usize {
        3 * self.k
    }
}

impl NetParams {
    pub fn new(w1: Vec<f64>, b1: Vec<f64>, w2: Vec<f64>, b2: f64) -> Result<Self> {
        let k = w1.len();
        if k == 0 || b1.len() != k || w2.len() != k {
            return Err(invalid(format!(
                "layer lengths must be equal and positive (w1 {}, b1 {}, w2 {})",
                w1.len(),
                b1.len(),
                w2.len()
            )));
        }
        let p = Self { w1, b1, w2, b2 };
        if !p.is_finite() {
            return Err(invalid("parameters must be finite"));
        }
        Ok(p)
    }

    /// Single-neuron network, convenient in tests and examples.
    pub fn single(w1: f64, b1: f64, w2: f64, b2: f64) -> Self {
        Self {
            w1: vec![w1],
            b1: vec![b1],
            w2: vec![w2],
            b2,
        }
    }

    pub fn zeros(k: usize) -> Self {
        Self {
            w1: vec![0.0; k],
            b1: vec![0.0; k],
            w2: vec![0.0; k],
            b2: 0.0,
        }
    }

    pub fn k(&self) -> usize {
        self.w1.len()
    }

    pub fn layout(&self) -> Layout {
        Layout { k: self.k() }
    }

    pub fn dim(&self) -> usize {
        3 * self.k() + 1
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(&self.b1).chain(&self.w2).all(|v| v.is_finite()) && self.b2.is_finite()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.dim());
        theta.extend_from_slice(&self.w1);
        theta.extend_from_slice(&self.b1);
        theta.extend_from_slice(&self.w2);
        theta.push(self.b2);
        theta
    }

    pub fn unflatten(k: usize, theta: &[f64]) -> Result<Self> {
        if k == 0 || theta.len() != 3 * k + 1 {
            return Err(invalid(format!(
                "parameter vector of length {} does not match width {k}",
                theta.len()
            )));
        }
        Self::new(
            theta[..k].to_vec(),
            theta[k..2 * k].to_vec(),
            theta[2 * k..3 * k].to_vec(),
            theta[3 * k],
        )
    }

    /// `‖θ‖_∞`.
    pub fn inf_norm(&self) -> f64 {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(std::iter::once(&self.b2))
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    #[inline]
    pub fn preactivation(&self, j: usize, x: f64) -> f64 {
        self.w1[j] * x + self.b1[j]
    }
}

pub fn forward(params: &NetParams, x: f64) -> f64 {
    let mut acc = params.b2;
    for j in 0..params.k() {
        acc += params.w2[j] * relu(params.preactivation(j, x));
    }
    acc
}

/// Gradient of `f_θ(x)` with respect to the flattened parameters.
pub fn param_gradient(params: &NetParams, x: f64) -> Vec<f64> {
    let mut grad = vec![0.0; params.dim()];
    param_gradient_into(params, x, &mut grad);
    grad
}

/// Same as [`param_gradient`], writing into a caller-provided buffer.
pub fn param_gradient_into(params: &NetParams, x: f64, grad: &mut [f64]) {
    let lay = params.layout();
    debug_assert_eq!(grad.len(), lay.dim());
    for j in 0..lay.k {
        let u = params.preactivation(j, x);
        if u > 0.0 {
            grad[lay.w1(j)] = x * params.w2[j];
            grad[lay.b1(j)] = params.w2[j];
            grad[lay.w2(j)] = u;
        } else {
            grad[lay.w1(j)] = 0.0;
            grad[lay.b1(j)] = 0.0;
            grad[lay.w2(j)] = 0.0;
        }
    }
    grad[lay.b2()] = 1.0;
}

/// Fails with `NotTwiceDifferentiable` if some neuron's knot sits (within
/// `diff_tol`) at `x`.
pub fn check_twice_differentiable(params: &NetParams, x: f64, diff_tol: f64) -> Result<()> {
    for j in 0..params.k() {
        let u = params.preactivation(j, x);
        if u.abs() <= diff_tol {
            return Err(Error::NotTwiceDifferentiable {
                sample: None,
                neuron: j,
                preactivation: u,
            });
        }
    }
    Ok(())
}

/// Dense Hessian of `f_θ(x)`. The only nonzeros couple `w2_j` with `w1_j`
/// (value `x`) and with `b1_j` (value `1`) for active neurons.
pub fn param_hessian(params: &NetParams, x: f64, diff_tol: f64) -> Result<DMatrix<f64>> {
    check_twice_differentiable(params, x, diff_tol)?;
    let lay = params.layout();
    let mut h = DMatrix::zeros(lay.dim(), lay.dim());
    for j in 0..lay.k {
        if params.preactivation(j, x) > 0.0 {
            h[(lay.w1(j), lay.w2(j))] = x;
            h[(lay.w2(j), lay.w1(j))] = x;
            h[(lay.b1(j), lay.w2(j))] = 1.0;
            h[(lay.w2(j), lay.b1(j))] = 1.0;
        }
    }
    Ok(h)
}

/// Matrix-free `∇²f_θ(x) · v`.
pub fn hessian_vector_product(params: &NetParams, x: f64, v: &[f64], diff_tol: f64) -> Result<Vec<f64>> {
    check_twice_differentiable(params, x, diff_tol)?;
    let mut out = vec![0.0; params.dim()];
    add_scaled_hvp(params, x, v, 1.0, &mut out);
    Ok(out)
}

/// `out += scale * ∇²f_θ(x) v`, without the differentiability check.
pub(crate) fn add_scaled_hvp(params: &NetParams, x: f64, v: &[f64], scale: f64, out: &mut [f64]) {
    let lay = params.layout();
    for j in 0..lay.k {
        if params.preactivation(j, x) > 0.0 {
            let vw2 = v[lay.w2(j)];
            out[lay.w1(j)] += scale * (x * vw2);
            out[lay.b1(j)] += scale * vw2;
            out[lay.w2(j)] += scale * (x * v[lay.w1(j)] + v[lay.b1(j)]);
        }
    }
}

/// Smallest pre-activation magnitude over all neurons and inputs; `+inf` for
/// an empty input set.
pub fn differentiability_margin(params: &NetParams, xs: &[f64]) -> f64 {
    let mut m = f64::INFINITY;
    for &x in xs {
        for j in 0..params.k() {
            m = m.min(params.preactivation(j, x).abs());
        }
    }
    m
}

/// A slope change point of a linear spline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub position: f64,
    pub dslope: f64,
}

/// Canonical linear-spline form of a network.
///
/// `f(x) = base_value + base_slope (x - base_point) + Σ_{t_j < x} dslope_j (x - t_j)`
/// with `base_point` at or left of every knot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    pub base_point: f64,
    pub base_value: f64,
    pub base_slope: f64,
    pub knots: Vec<Knot>,
}

impl PiecewiseLinear {
    pub fn eval(&self, x: f64) -> f64 {
        let mut acc = self.base_value + self.base_slope * (x - self.base_point);
        for k in &self.knots {
            if k.position < x {
                acc += k.dslope * (x - k.position);
            } else {
                break;
            }
        }
        acc
    }

    /// Slope on the open piece containing `x` (right derivative at a knot).
    pub fn slope_at(&self, x: f64) -> f64 {
        self.base_slope
            + self
                .knots
                .iter()
                .take_while(|k| k.position <= x)
                .map(|k| k.dslope)
                .sum::<f64>()
    }

    pub fn total_variation(&self) -> f64 {
        self.knots.iter().map(|k| k.dslope.abs()).sum()
    }
}

/// Convert a network to its linear-spline form. Neuron `j` with `w1_j != 0`
/// places a knot at `-b1_j / w1_j` with slope jump `w2_j |w1_j|`.
pub fn extract_knots(params: &NetParams) -> PiecewiseLinear {
    extract_knots_with(params, KNOT_MERGE_TOL, DSLOPE_ZERO_TOL)
}

pub fn extract_knots_with(params: &NetParams, merge_tol: f64, zero_tol: f64) -> PiecewiseLinear {
    let mut raw: Vec<Knot> = Vec::with_capacity(params.k());
    let mut base_slope = 0.0;
    for j in 0..params.k() {
        let w1 = params.w1[j];
        if w1 == 0.0 {
            continue;
        }
        raw.push(Knot {
            position: -params.b1[j] / w1,
            dslope: params.w2[j] * w1.abs(),
        });
        // left of its knot, a neuron with w1 < 0 is active
        if w1 < 0.0 {
            base_slope += params.w2[j] * w1;
        }
    }
    raw.sort_by(|a, b| a.position.total_cmp(&b.position));

    let mut knots: Vec<Knot> = Vec::with_capacity(raw.len());
    let mut last_raw = f64::NEG_INFINITY;
    for k in raw {
        match knots.last_mut() {
            Some(cur) if k.position - last_raw <= merge_tol => cur.dslope += k.dslope,
            _ => knots.push(k),
        }
        last_raw = k.position;
    }
    knots.retain(|k| k.dslope.abs() > zero_tol);

    let base_point = match knots.first() {
        Some(k) => k.position.min(0.0),
        None => 0.0,
    };
    PiecewiseLinear {
        base_point,
        base_value: forward(params, base_point),
        base_slope,
        knots,
    }
}

/// Random initialization laws.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitScheme {
    /// `w1, b1 ~ U(-1, 1)` (fan-in 1); `w2, b2 ~ U(-1/√k, 1/√k)` (fan-in k).
    #[default]
    UniformFanin,
    /// `w1 ~ U(-a_w1, a_w1)`, `b1 ~ U(-a_b1, a_b1)`, `w2, b2 ~ U(-a_w2, a_w2)`.
    UniformCustom { a_w1: f64, a_b1: f64, a_w2: f64 },
    /// `w1 ~ U(-1, 1)`, knot `t ~ U(lo, hi)` with `b1 = -w1 t`,
    /// `w2, b2 ~ U(-1/√k, 1/√k)`.
    KnotUniform { lo: f64, hi: f64 },
}

pub fn init_params(k: usize, scheme: InitScheme, seed: u64) -> Result<NetParams> {
    if k == 0 {
        return Err(invalid("width k must be positive"));
    }
    let mut s = SeededStream::new(seed);
    let out_range = 1.0 / (k as f64).sqrt();
    let draw = |s: &mut SeededStream, a: f64| -> Vec<f64> { (0..k).map(|_| s.uniform(-a, a)).collect() };
    let p = match scheme {
        InitScheme::UniformFanin => {
            let w1 = draw(&mut s, 1.0);
            let b1 = draw(&mut s, 1.0);
            let w2 = draw(&mut s, out_range);
            let b2 = s.uniform(-out_range, out_range);
            NetParams { w1, b1, w2, b2 }
        }
        InitScheme::UniformCustom { a_w1, a_b1, a_w2 } => {
            if !(a_w1 > 0.0 && a_b1 > 0.0 && a_w2 > 0.0) {
                return Err(invalid("initialization ranges must be positive"));
            }
            let w1 = draw(&mut s, a_w1);
            let b1 = draw(&mut s, a_b1);
            let w2 = draw(&mut s, a_w2);
            let b2 = s.uniform(-a_w2, a_w2);
            NetParams { w1, b1, w2, b2 }
        }
        InitScheme::KnotUniform { lo, hi } => {
            if !(lo < hi) {
                return Err(invalid("knot range must satisfy lo < hi"));
            }
            let w1 = draw(&mut s, 1.0);
            let b1 = w1.iter().map(|w| -w * s.uniform(lo, hi)).collect();
            let w2 = draw(&mut s, out_range);
            let b2 = s.uniform(-out_range, out_range);
            NetParams { w1, b1, w2, b2 }
        }
    };
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit() -> NetParams {
        NetParams::single(1.0, 0.0, 1.0, 0.0)
    }

    #[test]
    fn forward_examples() {
        assert_eq!(forward(&unit(), 2.0), 2.0);
        assert_eq!(forward(&unit(), -1.0), 0.0);
        let p = NetParams::new(vec![1.0, -1.0], vec![0.0, 0.0], vec![1.0, 1.0], 0.5).unwrap();
        assert_eq!(forward(&p, 0.5), 1.0);
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(param_gradient(&unit(), 2.0), vec![2.0, 1.0, 2.0, 1.0]);
        assert_eq!(param_gradient(&unit(), -1.0), vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn gradient_at_knot_uses_strict_indicator() {
        assert_eq!(param_gradient(&unit(), 0.0), vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn hessian_examples() {
        let h = param_hessian(&unit(), 2.0, DIFF_TOL).unwrap();
        let mut expected = DMatrix::zeros(4, 4);
        expected[(0, 2)] = 2.0;
        expected[(2, 0)] = 2.0;
        expected[(1, 2)] = 1.0;
        expected[(2, 1)] = 1.0;
        assert_eq!(h, expected);
        assert_eq!(param_hessian(&unit(), -1.0, DIFF_TOL).unwrap(), DMatrix::zeros(4, 4));
        let v = nalgebra::DVector::from_vec(vec![1.0, 0.0, 1.0, 0.0]) / 2f64.sqrt();
        assert_relative_eq!((v.transpose() * &h * &v)[(0, 0)], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn hessian_rejects_knot_at_input() {
        let p = NetParams::single(1.0, -0.5, 1.0, 0.0);
        match param_hessian(&p, 0.5, DIFF_TOL) {
            Err(Error::NotTwiceDifferentiable { neuron: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(hessian_vector_product(&p, 0.5, &[0.0; 4], DIFF_TOL).is_err());
    }

    #[test]
    fn hvp_examples() {
        let out = hessian_vector_product(&unit(), 2.0, &[1.0, 0.0, 0.0, 0.0], DIFF_TOL).unwrap();
        assert_eq!(out, vec![0.0, 0.0, 2.0, 0.0]);
        let out = hessian_vector_product(&unit(), 2.0, &[0.0; 4], DIFF_TOL).unwrap();
        assert_eq!(out, vec![0.0; 4]);
    }

    #[test]
    fn knot_examples() {
        let pwl = extract_knots(&unit());
        assert_eq!(
            pwl.knots,
            vec![Knot {
                position: 0.0,
                dslope: 1.0
            }]
        );

        let pwl = extract_knots(&NetParams::single(-2.0, 1.0, 3.0, 0.0));
        assert_eq!(
            pwl.knots,
            vec![Knot {
                position: 0.5,
                dslope: 6.0
            }]
        );

        let p = NetParams::new(vec![1.0, -1.0], vec![0.0, 0.0], vec![1.0, 1.0], 0.0).unwrap();
        let pwl = extract_knots(&p);
        assert_eq!(
            pwl.knots,
            vec![Knot {
                position: 0.0,
                dslope: 2.0
            }]
        );
    }

    #[test]
    fn cancelling_knots_are_dropped() {
        let p = NetParams::new(vec![1.0, 1.0], vec![0.0, 0.0], vec![1.0, -1.0], 0.0).unwrap();
        assert!(extract_knots(&p).knots.is_empty());
    }

    #[test]
    fn degenerate_neuron_is_constant() {
        let p = NetParams::single(0.0, 0.7, 2.0, 0.1);
        let pwl = extract_knots(&p);
        assert!(pwl.knots.is_empty());
        assert_relative_eq!(pwl.eval(-3.0), 1.5, epsilon = 1e-15);
        assert_relative_eq!(pwl.eval(5.0), 1.5, epsilon = 1e-15);
    }

    #[test]
    fn margin_examples() {
        assert_eq!(
            differentiability_margin(&NetParams::single(1.0, 0.0, 1.0, 0.0), &[0.5]),
            0.5
        );
        assert_eq!(
            differentiability_margin(&NetParams::single(1.0, -0.5, 1.0, 0.0), &[0.5]),
            0.0
        );
        let p = NetParams::new(vec![1.0, 0.0], vec![1.0, -0.25], vec![1.0, 1.0], 0.0).unwrap();
        assert_eq!(differentiability_margin(&p, &[0.25]), 0.25);
        assert_eq!(differentiability_margin(&p, &[]), f64::INFINITY);
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let a = init_params(50, InitScheme::UniformFanin, 11).unwrap();
        let b = init_params(50, InitScheme::UniformFanin, 11).unwrap();
        let c = init_params(50, InitScheme::UniformFanin, 12).unwrap();
        assert_eq!(
            a.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_ne!(a, c);
    }

    #[test]
    fn init_fanin_ranges() {
        let k = 10_000;
        let p = init_params(k, InitScheme::UniformFanin, 5).unwrap();
        let bound = 1.0 / (k as f64).sqrt();
        assert!(p.w2.iter().all(|w| w.abs() <= bound));
        assert!(p.b2.abs() <= bound);
        assert!(p.w1.iter().chain(&p.b1).all(|w| w.abs() <= 1.0));
    }

    #[test]
    fn init_rejects_bad_config() {
        assert!(init_params(0, InitScheme::UniformFanin, 1).is_err());
        let bad = InitScheme::UniformCustom {
            a_w1: 1.0,
            a_b1: 0.0,
            a_w2: 1.0,
        };
        assert!(init_params(3, bad, 1).is_err());
        assert!(init_params(3, InitScheme::KnotUniform { lo: 1.0, hi: 1.0 }, 1).is_err());
    }

    #[test]
    fn knot_uniform_places_knots_in_range() {
        let p = init_params(200, InitScheme::KnotUniform { lo: -0.5, hi: 0.5 }, 3).unwrap();
        let pwl = extract_knots(&p);
        assert!(pwl.knots.iter().all(|k| (-0.5..=0.5).contains(&k.position)));
    }

    #[test]
    fn json_is_flat_array_with_width() {
        let p = NetParams::new(vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0], 7.0).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"k":2,"theta":[1.0,2.0,3.0,4.0,5.0,6.0,7.0]}"#);
        let back: NetParams = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<NetParams>(r#"{"k":2,"theta":[1.0]}"#).is_err());
    }
}

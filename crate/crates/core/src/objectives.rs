//! Loss families, data laws and parameter grids.
//!
//! Every family evaluates a loss `h(x, ξ)` where `x` is a parameter vector
//! drawn from a [`ParamGrid`] and `ξ` is a data point in the support of a
//! [`DataDistribution`]. Layouts:
//!
//! | family          | parameter `x`                                  | data `ξ`         |
//! |-----------------|------------------------------------------------|------------------|
//! | `perceptron`    | `(w₁..w_m, b)`                                 | `(z₁..z_m, y)`   |
//! | `relu_net`      | `(a₀, a₁..a_M, w₁..w_M (each m), c₁..c_M)`     | `(z₁..z_m, y)`   |
//! | `threshold_reg` | `(β₁ (p), β₂ (p), s)`                          | `(x₁..x_p, t, y)`|
//! | `lp_svr`        | `(w₁..w_m, b)`                                 | `(z₁..z_m, y)`   |
//! | `quad_synthetic`| `x ∈ R^d`                                      | `ξ ∈ R^d`        |
//! | `gap_synthetic` | `x ∈ R`                                        | `ξ ∈ R`          |

use std::collections::HashSet;
use std::fmt;
use std::hash::{DefaultHasher, Hash, Hasher};

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::empirical::ObjectiveTable;
use crate::error::{Error, Result};

/// Weight-sum tolerance for finite-support laws.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Contrast applied to the threshold-regression residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Contrast {
    Square,
    Abs,
}

impl Contrast {
    fn apply(self, r: f64) -> f64 {
        match self {
            Contrast::Square => r * r,
            Contrast::Abs => r.abs(),
        }
    }
}

/// Exact exponent `p = num/den` with `0 < num < den`, kept in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rational {
    num: u32,
    den: u32,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

impl Rational {
    /// Largest denominator accepted when recovering a fraction from a decimal.
    pub const MAX_DECIMAL_DEN: u64 = 1_000_000;

    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || num >= den {
            return Err(Error::contract(format!(
                "exponent {num}/{den} must satisfy 0 < r < s"
            )));
        }
        let g = gcd(num as u64, den as u64) as u32;
        Ok(Rational {
            num: num / g,
            den: den / g,
        })
    }

    /// Recovers the exact fraction behind a decimal such as `0.5` or `0.25`.
    ///
    /// Uses the continued-fraction expansion and accepts the first convergent
    /// within a few ulps of the input, so `0.3` gives `3/10` while irrational
    /// approximations are refused.
    pub fn from_decimal(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::contract(format!("exponent {p} must lie in (0, 1)")));
        }
        let (mut h0, mut h1) = (0u64, 1u64);
        let (mut k0, mut k1) = (1u64, 0u64);
        let mut x = p;
        for _ in 0..64 {
            let a = x.floor();
            let ai = a as u64;
            let h2 = ai.saturating_mul(h1).saturating_add(h0);
            let k2 = ai.saturating_mul(k1).saturating_add(k0);
            if k2 > Self::MAX_DECIMAL_DEN {
                break;
            }
            (h0, h1, k0, k1) = (h1, h2, k1, k2);
            if (h1 as f64 / k1 as f64 - p).abs() <= 4.0 * f64::EPSILON * p {
                return Rational::new(h1 as u32, k1 as u32);
            }
            let frac = x - a;
            if frac <= 0.0 {
                break;
            }
            x = 1.0 / frac;
        }
        Err(Error::contract(format!(
            "exponent {p} is not a rational with denominator <= {}",
            Self::MAX_DECIMAL_DEN
        )))
    }

    pub fn num(&self) -> u32 {
        self.num
    }

    pub fn den(&self) -> u32 {
        self.den
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `|u|^(r/s)` evaluated as the real `s`-th root of `|u|^r`.
    pub fn abs_pow(&self, u: f64) -> f64 {
        let base = u.abs().powi(self.num as i32);
        match self.den {
            2 => base.sqrt(),
            3 => base.cbrt(),
            s => base.powf(1.0 / s as f64),
        }
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl Serialize for Rational {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

/// Family tag, used for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Perceptron,
    ReluNet,
    ThresholdReg,
    LpSvr,
    QuadSynthetic,
    GapSynthetic,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Perceptron => "perceptron",
            Family::ReluNet => "relu_net",
            Family::ThresholdReg => "threshold_reg",
            Family::LpSvr => "lp_svr",
            Family::QuadSynthetic => "quad_synthetic",
            Family::GapSynthetic => "gap_synthetic",
        }
    }

    pub fn parse(name: &str) -> Option<Family> {
        Some(match name {
            "perceptron" => Family::Perceptron,
            "relu_net" => Family::ReluNet,
            "threshold_reg" => Family::ThresholdReg,
            "lp_svr" => Family::LpSvr,
            "quad_synthetic" => Family::QuadSynthetic,
            "gap_synthetic" => Family::GapSynthetic,
            _ => return None,
        })
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A loss family together with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LossModel {
    /// `1{y(wᵀz + b) ≤ 0}`.
    Perceptron { features: usize },
    /// `1{y N_θ(z) ≤ 0}` with `N_θ(z) = a₀ + Σⱼ aⱼ max(wⱼᵀz + cⱼ, 0)`.
    ReluNet { features: usize, width: usize },
    /// `ρ(y − xᵀβ₁ 1{t ≤ s} − xᵀβ₂ 1{t > s})`.
    ThresholdReg { regressors: usize, contrast: Contrast },
    /// `C|y − (wᵀz + b)| + λ(‖w‖ₚᵖ + |b|ᵖ)`.
    LpSvr {
        features: usize,
        c: f64,
        lambda: f64,
        p: Rational,
    },
    /// `‖x − ξ‖²`.
    QuadSynthetic { dim: usize },
    /// `x + 1{x = 0} + ξ`; with centred noise the expected objective is
    /// `x + 1{x = 0}`, which has no minimizer on `[0, 1]`.
    GapSynthetic,
}

impl LossModel {
    pub fn family(&self) -> Family {
        match self {
            LossModel::Perceptron { .. } => Family::Perceptron,
            LossModel::ReluNet { .. } => Family::ReluNet,
            LossModel::ThresholdReg { .. } => Family::ThresholdReg,
            LossModel::LpSvr { .. } => Family::LpSvr,
            LossModel::QuadSynthetic { .. } => Family::QuadSynthetic,
            LossModel::GapSynthetic => Family::GapSynthetic,
        }
    }

    /// Checks hyperparameters (positive dimensions, nonnegative constants).
    pub fn validate(&self) -> Result<()> {
        let positive = |v: usize, what: &str| {
            if v == 0 {
                Err(Error::contract(format!("{what} must be at least 1")))
            } else {
                Ok(())
            }
        };
        match *self {
            LossModel::Perceptron { features } => positive(features, "features"),
            LossModel::ReluNet { features, width } => {
                positive(features, "features")?;
                positive(width, "width")
            }
            LossModel::ThresholdReg { regressors, .. } => positive(regressors, "regressors"),
            LossModel::LpSvr {
                features,
                c,
                lambda,
                ..
            } => {
                positive(features, "features")?;
                if !(c.is_finite() && c >= 0.0) {
                    return Err(Error::contract("C must be finite and nonnegative"));
                }
                if !(lambda.is_finite() && lambda >= 0.0) {
                    return Err(Error::contract("lambda must be finite and nonnegative"));
                }
                Ok(())
            }
            LossModel::QuadSynthetic { dim } => positive(dim, "dim"),
            LossModel::GapSynthetic => Ok(()),
        }
    }

    pub fn param_dim(&self) -> usize {
        match *self {
            LossModel::Perceptron { features } => features + 1,
            LossModel::ReluNet { features, width } => 1 + width + width * features + width,
            LossModel::ThresholdReg { regressors, .. } => 2 * regressors + 1,
            LossModel::LpSvr { features, .. } => features + 1,
            LossModel::QuadSynthetic { dim } => dim,
            LossModel::GapSynthetic => 1,
        }
    }

    pub fn data_dim(&self) -> usize {
        match *self {
            LossModel::Perceptron { features } => features + 1,
            LossModel::ReluNet { features, .. } => features + 1,
            LossModel::ThresholdReg { regressors, .. } => regressors + 2,
            LossModel::LpSvr { features, .. } => features + 1,
            LossModel::QuadSynthetic { dim } => dim,
            LossModel::GapSynthetic => 1,
        }
    }

    /// `{0, 1}`-valued families.
    pub fn is_indicator(&self) -> bool {
        matches!(
            self,
            LossModel::Perceptron { .. } | LossModel::ReluNet { .. }
        )
    }

    /// Evaluates `h(x, ξ)` after checking dimensions.
    pub fn eval(&self, x: &[f64], xi: &[f64]) -> Result<f64> {
        self.check_dims(x.len(), xi.len())?;
        Ok(self.eval_unchecked(x, xi))
    }

    pub(crate) fn check_dims(&self, x_len: usize, xi_len: usize) -> Result<()> {
        if x_len != self.param_dim() {
            return Err(Error::Dimension {
                what: "parameter",
                expected: self.param_dim(),
                got: x_len,
            });
        }
        if xi_len != self.data_dim() {
            return Err(Error::Dimension {
                what: "data point",
                expected: self.data_dim(),
                got: xi_len,
            });
        }
        Ok(())
    }

    /// Dimensions must already have been checked.
    pub(crate) fn eval_unchecked(&self, x: &[f64], xi: &[f64]) -> f64 {
        match *self {
            LossModel::Perceptron { features } => {
                let (w, b) = (&x[..features], x[features]);
                let (z, y) = (&xi[..features], xi[features]);
                indicator(y * (dot(w, z) + b) <= 0.0)
            }
            LossModel::ReluNet { features, width } => {
                let (z, y) = (&xi[..features], xi[features]);
                indicator(y * relu_score(x, z, features, width) <= 0.0)
            }
            LossModel::ThresholdReg {
                regressors,
                contrast,
            } => {
                let p = regressors;
                let (beta1, beta2, s) = (&x[..p], &x[p..2 * p], x[2 * p]);
                let (reg, t, y) = (&xi[..p], xi[p], xi[p + 1]);
                let fitted = if t <= s { dot(reg, beta1) } else { dot(reg, beta2) };
                contrast.apply(y - fitted)
            }
            LossModel::LpSvr {
                features,
                c,
                lambda,
                p,
            } => {
                let (w, b) = (&x[..features], x[features]);
                let (z, y) = (&xi[..features], xi[features]);
                let fit = c * (y - (dot(w, z) + b)).abs();
                let penalty: f64 = w.iter().map(|&wi| p.abs_pow(wi)).sum::<f64>() + p.abs_pow(b);
                fit + lambda * penalty
            }
            LossModel::QuadSynthetic { .. } => x
                .iter()
                .zip(xi)
                .map(|(a, b)| (a - b) * (a - b))
                .sum(),
            LossModel::GapSynthetic => x[0] + indicator(x[0] == 0.0) + xi[0],
        }
    }
}

#[inline]
fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn relu_score(theta: &[f64], z: &[f64], features: usize, width: usize) -> f64 {
    let a0 = theta[0];
    let a = &theta[1..1 + width];
    let w = &theta[1 + width..1 + width + width * features];
    let c = &theta[1 + width + width * features..];
    let mut score = a0;
    for j in 0..width {
        let pre = dot(&w[j * features..(j + 1) * features], z) + c[j];
        score += a[j] * pre.max(0.0);
    }
    score
}

/// `h(x, ξ)` for a single parameter and data point.
pub fn eval_loss(model: &LossModel, x: &[f64], xi: &[f64]) -> Result<f64> {
    model.eval(x, xi)
}

/// A law with finite support.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataDistribution {
    support: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl DataDistribution {
    pub fn new(support: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::contract("distribution support is empty"));
        }
        if support.len() != weights.len() {
            return Err(Error::Dimension {
                what: "distribution weights",
                expected: support.len(),
                got: weights.len(),
            });
        }
        let dim = support[0].len();
        if dim == 0 {
            return Err(Error::contract("support atoms have zero dimensions"));
        }
        for atom in &support {
            if atom.len() != dim {
                return Err(Error::Dimension {
                    what: "support atom",
                    expected: dim,
                    got: atom.len(),
                });
            }
            if atom.iter().any(|v| !v.is_finite()) {
                return Err(Error::contract("support atoms must be finite"));
            }
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::contract("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::contract(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(DataDistribution { support, weights })
    }

    pub fn uniform(support: Vec<Vec<f64>>) -> Result<Self> {
        let k = support.len().max(1);
        let weights = vec![1.0 / k as f64; support.len()];
        Self::new(support, weights)
    }

    pub fn point_mass(atom: Vec<f64>) -> Result<Self> {
        Self::new(vec![atom], vec![1.0])
    }

    pub fn support(&self) -> &[Vec<f64>] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.support[0].len()
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Weighted mean of `g` over the support, summed in atom order.
    pub fn expect(&self, mut g: impl FnMut(&[f64]) -> f64) -> f64 {
        self.support
            .iter()
            .zip(&self.weights)
            .map(|(atom, w)| w * g(atom))
            .sum()
    }
}

/// Axis-aligned box metadata for grids built by [`ParamGrid::from_box`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub resolution: Vec<usize>,
}

/// Finite, nonempty set of pairwise distinct parameter vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrid {
    dim: usize,
    points: Vec<Vec<f64>>,
    bounds: Option<GridBox>,
    fingerprint: u64,
}

fn canonical_bits(v: f64) -> u64 {
    // -0.0 and 0.0 are the same parameter.
    if v == 0.0 {
        0
    } else {
        v.to_bits()
    }
}

impl ParamGrid {
    pub fn from_points(points: Vec<Vec<f64>>) -> Result<Self> {
        Self::build(points, None)
    }

    /// Cartesian product of per-axis uniform grids; the first axis varies
    /// slowest. An axis with resolution 1 contributes its lower bound.
    pub fn from_box(lower: Vec<f64>, upper: Vec<f64>, resolution: Vec<usize>) -> Result<Self> {
        let d = lower.len();
        if d == 0 {
            return Err(Error::contract("grid box has zero dimensions"));
        }
        if upper.len() != d || resolution.len() != d {
            return Err(Error::Dimension {
                what: "grid box",
                expected: d,
                got: upper.len().min(resolution.len()),
            });
        }
        let mut axes = Vec::with_capacity(d);
        for k in 0..d {
            let (lo, hi, r) = (lower[k], upper[k], resolution[k]);
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::contract(format!(
                    "axis {k}: bounds [{lo}, {hi}] are not a finite interval"
                )));
            }
            if r == 0 {
                return Err(Error::contract(format!("axis {k}: resolution must be >= 1")));
            }
            if r > 1 && lo == hi {
                return Err(Error::contract(format!(
                    "axis {k}: degenerate interval with resolution {r} gives repeated points"
                )));
            }
            let axis: Vec<f64> = if r == 1 {
                vec![lo]
            } else {
                (0..r)
                    .map(|i| {
                        if i == r - 1 {
                            hi
                        } else {
                            lo + (hi - lo) * i as f64 / (r - 1) as f64
                        }
                    })
                    .collect()
            };
            axes.push(axis);
        }
        let points: Vec<Vec<f64>> = axes
            .iter()
            .map(|a| a.iter().copied())
            .multi_cartesian_product()
            .collect();
        Self::build(
            points,
            Some(GridBox {
                lower,
                upper,
                resolution,
            }),
        )
    }

    fn build(points: Vec<Vec<f64>>, bounds: Option<GridBox>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::contract("parameter grid is empty"));
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(Error::contract("parameter grid points have zero dimensions"));
        }
        let mut seen = HashSet::with_capacity(points.len());
        let mut hasher = DefaultHasher::new();
        dim.hash(&mut hasher);
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::Dimension {
                    what: "grid point",
                    expected: dim,
                    got: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::contract(format!("grid point {i} is not finite")));
            }
            let key: Vec<u64> = p.iter().map(|&v| canonical_bits(v)).collect();
            key.hash(&mut hasher);
            if !seen.insert(key) {
                return Err(Error::contract(format!("grid point {i} is a duplicate")));
            }
            if let Some(b) = &bounds {
                for k in 0..dim {
                    if p[k] < b.lower[k] || p[k] > b.upper[k] {
                        return Err(Error::contract(format!(
                            "grid point {i} lies outside the declared box"
                        )));
                    }
                }
            }
        }
        Ok(ParamGrid {
            dim,
            points,
            bounds,
            fingerprint: hasher.finish(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn bounds(&self) -> Option<&GridBox> {
        self.bounds.as_ref()
    }

    /// Identity token used to detect tables built on different grids.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Euclidean distance from grid point `i` to the nearest point of `set`.
    pub fn distance_to_set(&self, i: usize, set: &[usize]) -> f64 {
        let p = &self.points[i];
        set.iter()
            .map(|&j| {
                p.iter()
                    .zip(&self.points[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    }
}

pub(crate) fn check_model_fits(model: &LossModel, dist: &DataDistribution, grid: &ParamGrid) -> Result<()> {
    model.validate()?;
    model.check_dims(grid.dim(), dist.dim())
}

/// Exact expected objective `f(x) = Σⱼ wⱼ h(x, ξⱼ)` on every grid point.
pub fn true_objective(
    model: &LossModel,
    dist: &DataDistribution,
    grid: &ParamGrid,
) -> Result<ObjectiveTable> {
    check_model_fits(model, dist, grid)?;
    let values = weighted_objective(model, dist.support(), dist.weights(), grid);
    ObjectiveTable::on_grid(grid, values)
}

/// `Σⱼ wⱼ h(x, ξⱼ)` in atom order for every grid point.
///
/// Shared by the true and the empirical objective so that equal weights give
/// bit-identical tables.
pub(crate) fn weighted_objective(
    model: &LossModel,
    support: &[Vec<f64>],
    weights: &[f64],
    grid: &ParamGrid,
) -> Vec<f64> {
    grid.points()
        .iter()
        .map(|x| {
            support
                .iter()
                .zip(weights)
                .map(|(xi, w)| w * model.eval_unchecked(x, xi))
                .sum()
        })
        .collect()
}

/// `max |h(x, ξ)|` over grid × support; exactly 1 for indicator losses.
pub fn envelope(model: &LossModel, grid: &ParamGrid, dist: &DataDistribution) -> Result<f64> {
    check_model_fits(model, dist, grid)?;
    if model.is_indicator() {
        return Ok(1.0);
    }
    let mut env = 0.0f64;
    for x in grid.points() {
        for xi in dist.support() {
            env = env.max(model.eval_unchecked(x, xi).abs());
        }
    }
    Ok(env)
}

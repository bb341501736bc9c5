//! VC-dimension upper bounds for program-defined classes and a brute-force
//! shattering search that gives empirical lower bounds.
//!
//! The bound functions return reals; callers floor them for display.
//! The shattering search only explores the supplied parameter grid, so the
//! dimension it reports is a lower bound for the grid family, which is itself
//! a subfamily of the continuous one.

use std::collections::HashSet;

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{LossModel, ParamGrid};

/// Largest subset size the shattering search accepts.
pub const MAX_SHATTER_SET: usize = 12;

/// Complexity parameters of a program computing `h(x, ξ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgramSpec {
    /// Parameter dimension (`k` for Pfaffian programs).
    pub m: u64,
    /// Running time.
    pub t: u64,
    /// Number of exponential or Pfaffian evaluations.
    #[serde(default)]
    pub q: u64,
    /// Pfaffian chain length `ℓ`.
    #[serde(default)]
    pub chain_len: u64,
    /// Degree bound `D`.
    #[serde(default = "default_degree")]
    pub degree: u64,
    /// Universal constant of the Pfaffian bound. Never defaulted.
    #[serde(default)]
    pub constant: Option<f64>,
}

fn default_degree() -> u64 {
    2
}

impl ProgramSpec {
    pub fn new(m: u64, t: u64) -> Self {
        ProgramSpec {
            m,
            t,
            q: 0,
            chain_len: 0,
            degree: 2,
            constant: None,
        }
    }

    pub fn with_q(mut self, q: u64) -> Self {
        self.q = q;
        self
    }

    pub fn pfaffian(mut self, q: u64, chain_len: u64, degree: u64, constant: f64) -> Self {
        self.q = q;
        self.chain_len = chain_len;
        self.degree = degree;
        self.constant = Some(constant);
        self
    }

    fn check_mt(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::contract("parameter dimension m must be >= 1"));
        }
        if self.t < 1 {
            return Err(Error::contract("running time t must be >= 1"));
        }
        Ok(())
    }
}

/// `4m(t + 2)` for programs using `+, −, ×, /` and comparisons.
pub fn vc_arith_bound(spec: &ProgramSpec) -> Result<f64> {
    spec.check_mt()?;
    Ok(4.0 * spec.m as f64 * (spec.t as f64 + 2.0))
}

/// `t²m(m + 19 log₂(9m))` when exponentials are also allowed.
pub fn vc_exp_bound(spec: &ProgramSpec) -> Result<f64> {
    spec.check_mt()?;
    let (m, t) = (spec.m as f64, spec.t as f64);
    Ok(t * t * m * (m + 19.0 * (9.0 * m).log2()))
}

/// `m²(q+1)² + 11m(q+1)(t + log₂(9m(q+1)))` with at most `q` exponentials.
pub fn vc_exp_q_bound(spec: &ProgramSpec) -> Result<f64> {
    spec.check_mt()?;
    let (m, t, q1) = (spec.m as f64, spec.t as f64, spec.q as f64 + 1.0);
    Ok(m * m * q1 * q1 + 11.0 * m * q1 * (t + (9.0 * m * q1).log2()))
}

/// `C((q₀k)² + k(q₀ + t) log₂((k+1)t) log₂ D)` with `q₀ = max(q, ℓ, 1)`.
pub fn vc_pfaffian_bound(spec: &ProgramSpec) -> Result<f64> {
    spec.check_mt()?;
    if spec.degree < 2 {
        return Err(Error::contract("degree bound D must be >= 2"));
    }
    let c = spec
        .constant
        .ok_or_else(|| Error::contract("the Pfaffian bound needs an explicit constant C"))?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::contract(format!("constant C = {c} must be positive")));
    }
    let k = spec.m as f64;
    let t = spec.t as f64;
    let q0 = spec.q.max(spec.chain_len).max(1) as f64;
    let d = spec.degree as f64;
    Ok(c * ((q0 * k).powi(2) + k * (q0 + t) * ((k + 1.0) * t).log2() * d.log2()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundRow {
    pub formula: &'static str,
    pub bound: f64,
    pub floored: u64,
}

/// Every formula that applies to `spec`. The Pfaffian row needs a constant.
pub fn bound_table(spec: &ProgramSpec) -> Result<Vec<BoundRow>> {
    let mut rows = Vec::new();
    let mut push = |formula, bound: f64| {
        rows.push(BoundRow {
            formula,
            bound,
            floored: bound.floor() as u64,
        })
    };
    push("arithmetic", vc_arith_bound(spec)?);
    push("exponential", vc_exp_bound(spec)?);
    push("exponential_q", vc_exp_q_bound(spec)?);
    if spec.constant.is_some() {
        push("pfaffian", vc_pfaffian_bound(spec)?);
    }
    Ok(rows)
}

/// A finite family of binary classifiers indexed by `0..param_count()`.
pub trait ConceptFamily: Sync {
    fn point_dim(&self) -> usize;
    fn param_count(&self) -> usize;
    fn classify(&self, param: usize, point: &[f64]) -> bool;
}

/// Open halfplanes `{z : cos(a)·z₁ + sin(a)·z₂ > b}`.
#[derive(Debug, Clone)]
pub struct Halfplanes {
    params: Vec<(f64, f64, f64)>,
}

impl Halfplanes {
    /// `angles` equally spaced directions and `offsets` values of `b` on
    /// `[-reach, reach]`.
    pub fn grid(angles: usize, offsets: usize, reach: f64) -> Result<Self> {
        if angles == 0 || offsets < 2 || !(reach > 0.0) {
            return Err(Error::contract("halfplane grid needs angles >= 1, offsets >= 2, reach > 0"));
        }
        let mut params = Vec::with_capacity(angles * offsets);
        for i in 0..angles {
            let a = std::f64::consts::TAU * i as f64 / angles as f64;
            for j in 0..offsets {
                let b = -reach + 2.0 * reach * j as f64 / (offsets - 1) as f64;
                params.push((a.cos(), a.sin(), b));
            }
        }
        Ok(Halfplanes { params })
    }
}

impl ConceptFamily for Halfplanes {
    fn point_dim(&self) -> usize {
        2
    }
    fn param_count(&self) -> usize {
        self.params.len()
    }
    fn classify(&self, param: usize, z: &[f64]) -> bool {
        let (w1, w2, b) = self.params[param];
        w1 * z[0] + w2 * z[1] > b
    }
}

/// Closed intervals `[a, b]` on the line, with `a, b` on a common grid.
/// Pairs with `a > b` give the empty set.
#[derive(Debug, Clone)]
pub struct Intervals {
    params: Vec<(f64, f64)>,
}

impl Intervals {
    pub fn grid(endpoints: &[f64]) -> Result<Self> {
        if endpoints.is_empty() {
            return Err(Error::contract("interval grid needs endpoints"));
        }
        let params = endpoints
            .iter()
            .cartesian_product(endpoints)
            .map(|(&a, &b)| (a, b))
            .collect();
        Ok(Intervals { params })
    }
}

impl ConceptFamily for Intervals {
    fn point_dim(&self) -> usize {
        1
    }
    fn param_count(&self) -> usize {
        self.params.len()
    }
    fn classify(&self, param: usize, z: &[f64]) -> bool {
        let (a, b) = self.params[param];
        a <= z[0] && z[0] <= b
    }
}

/// A single classifier that returns `value` everywhere.
#[derive(Debug, Clone)]
pub struct Constant {
    pub dim: usize,
    pub value: bool,
}

impl ConceptFamily for Constant {
    fn point_dim(&self) -> usize {
        self.dim
    }
    fn param_count(&self) -> usize {
        1
    }
    fn classify(&self, _: usize, _: &[f64]) -> bool {
        self.value
    }
}

/// Strict subgraphs `{(ξ, s) : h(x, ξ) > s}` of a loss over a parameter grid.
/// Points are `ξ` followed by the level `s`.
#[derive(Debug, Clone)]
pub struct Subgraphs<'a> {
    model: &'a LossModel,
    grid: &'a ParamGrid,
}

impl<'a> Subgraphs<'a> {
    pub fn new(model: &'a LossModel, grid: &'a ParamGrid) -> Result<Self> {
        model.validate()?;
        if grid.dim() != model.param_dim() {
            return Err(Error::Dimension {
                what: "parameter grid",
                expected: model.param_dim(),
                got: grid.dim(),
            });
        }
        Ok(Subgraphs { model, grid })
    }
}

impl ConceptFamily for Subgraphs<'_> {
    fn point_dim(&self) -> usize {
        self.model.data_dim() + 1
    }
    fn param_count(&self) -> usize {
        self.grid.len()
    }
    fn classify(&self, param: usize, z: &[f64]) -> bool {
        let (xi, s) = z.split_at(self.model.data_dim());
        self.model.eval_unchecked(self.grid.point(param), xi) > s[0]
    }
}

/// Largest `k ≤ max_set_size` such that some `k`-subset of `candidates` is
/// shattered by the family's parameter grid.
///
/// Shattering is hereditary, so the search stops at the first size with no
/// shattered subset.
pub fn empirical_shatter_dim(
    family: &dyn ConceptFamily,
    candidates: &[Vec<f64>],
    max_set_size: usize,
) -> Result<usize> {
    if max_set_size > MAX_SHATTER_SET {
        return Err(Error::contract(format!(
            "max_set_size {max_set_size} exceeds {MAX_SHATTER_SET}"
        )));
    }
    if candidates.len() > 64 {
        return Err(Error::contract("at most 64 candidate points are supported"));
    }
    let dim = family.point_dim();
    if let Some(bad) = candidates.iter().find(|p| p.len() != dim) {
        return Err(Error::Dimension {
            what: "candidate point",
            expected: dim,
            got: bad.len(),
        });
    }
    // Bit i of a label is the classification of candidate i.
    let labels: Vec<u64> = (0..family.param_count())
        .into_par_iter()
        .map(|p| {
            candidates
                .iter()
                .enumerate()
                .filter(|(_, z)| family.classify(p, z))
                .fold(0u64, |acc, (i, _)| acc | (1 << i))
        })
        .collect::<HashSet<u64>>()
        .into_iter()
        .collect();

    let shattered = |subset: &[usize]| {
        let mask = subset.iter().fold(0u64, |acc, &i| acc | (1 << i));
        let patterns: HashSet<u64> = labels.iter().map(|l| l & mask).collect();
        patterns.len() == 1usize << subset.len()
    };

    let mut best = 0;
    for k in 1..=max_set_size.min(candidates.len()) {
        if labels.len() < 1usize << k {
            break;
        }
        let subsets: Vec<Vec<usize>> = (0..candidates.len()).combinations(k).collect();
        if subsets.par_iter().any(|s| shattered(s)) {
            best = k;
        } else {
            break;
        }
    }
    Ok(best)
}

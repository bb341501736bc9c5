//! Directional derivative of the infimum functional and the delta-method
//! linearization residual.
//!
//! On a finite grid `ι′_f(g) = lim_{ε↓0} inf_{S_f^ε} g` is reached after
//! finitely many ladder steps: once `ε` is below the smallest positive gap
//! `f(x) − ι(f)` the ε-minimizer set equals the exact argmin set.

use serde::Serialize;

use crate::empirical::{infimum, is_eps_member, ObjectiveTable};
use crate::error::{Error, Result};

/// Ratio of the default geometric ladder.
pub const DEFAULT_LADDER_RATIO: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirDerivResult {
    pub value: f64,
    /// First ladder level at which the ε-minimizer set equalled the argmin set.
    pub stabilized_at_eps: f64,
    /// `(ε_k, inf_{S^{ε_k}} g)` in ladder order.
    pub ladder: Vec<(f64, f64)>,
}

fn inf_over_level(f: &ObjectiveTable, g: &ObjectiveTable, inf_f: f64, eps: f64) -> (f64, usize) {
    let mut best = f64::INFINITY;
    let mut count = 0;
    for i in 0..f.len() {
        if is_eps_member(f, inf_f, i, eps) {
            best = best.min(g.get(i));
            count += 1;
        }
    }
    (best, count)
}

/// Evaluates `inf_{S_f^ε} g` along `ε_k = ε₀·ratio^k` until the level set is
/// the exact argmin set of `f`.
pub fn directional_derivative(
    f: &ObjectiveTable,
    g: &ObjectiveTable,
    eps0: f64,
    ratio: f64,
) -> Result<DirDerivResult> {
    f.check_same_grid(g)?;
    if !(eps0 > 0.0 && eps0.is_finite()) {
        return Err(Error::contract(format!("ladder start {eps0} must be positive")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::contract(format!("ladder ratio {ratio} must lie in (0, 1)")));
    }
    let inf_f = infimum(f);
    let argmin_len = f.values().iter().filter(|&&v| v == inf_f).count();
    if argmin_len == f.len() {
        let value = infimum(g);
        return Ok(DirDerivResult {
            value,
            stabilized_at_eps: 0.0,
            ladder: vec![(0.0, value)],
        });
    }
    let mut ladder = Vec::new();
    let mut eps = eps0;
    loop {
        let (value, members) = inf_over_level(f, g, inf_f, eps);
        ladder.push((eps, value));
        if members == argmin_len {
            return Ok(DirDerivResult {
                value,
                stabilized_at_eps: eps,
                ladder,
            });
        }
        eps *= ratio;
        if eps == 0.0 {
            // Underflow: S^0 is the argmin set by definition.
            let (value, _) = inf_over_level(f, g, inf_f, 0.0);
            ladder.push((0.0, value));
            return Ok(DirDerivResult {
                value,
                stabilized_at_eps: 0.0,
                ladder,
            });
        }
    }
}

/// Ladder with `ε₀ = range(f)` and ratio `1/2`.
pub fn directional_derivative_default(
    f: &ObjectiveTable,
    g: &ObjectiveTable,
) -> Result<DirDerivResult> {
    let range = f.range();
    if range == 0.0 {
        f.check_same_grid(g)?;
        let value = infimum(g);
        return Ok(DirDerivResult {
            value,
            stabilized_at_eps: 0.0,
            ladder: vec![(0.0, value)],
        });
    }
    directional_derivative(f, g, range, DEFAULT_LADDER_RATIO)
}

/// `τ(ι(f̂) − ι(f)) − ι′_f(τ(f̂ − f))`, signed.
pub fn delta_residual(f: &ObjectiveTable, f_hat: &ObjectiveTable, tau: f64) -> Result<f64> {
    f.check_same_grid(f_hat)?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::contract(format!("scale {tau} must be positive")));
    }
    let direction = f_hat.minus(f)?.scaled(tau)?;
    let derivative = directional_derivative_default(f, &direction)?.value;
    Ok(tau * (infimum(f_hat) - infimum(f)) - derivative)
}

//! Deterministic transfer checks: value perturbation, ε-minimizer inclusions,
//! excess risk and sharp-growth distance localization.
//!
//! All inequalities are compared with the tolerance
//! `1e-12·(1 + |lhs| + |rhs|)`; a slack is `rhs − lhs`.

use serde::Serialize;

use crate::empirical::{eps_min_set, infimum, sup_deviation, ObjectiveTable};
use crate::error::{Error, Result};
use crate::objectives::ParamGrid;

pub const REL_TOL: f64 = 1e-12;

pub fn tolerance(lhs: f64, rhs: f64) -> f64 {
    REL_TOL * (1.0 + lhs.abs() + rhs.abs())
}

fn holds(lhs: f64, rhs: f64) -> bool {
    rhs - lhs >= -tolerance(lhs, rhs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck {
    /// Left-hand side.
    pub value: f64,
    pub bound: f64,
    pub ok: bool,
}

impl BoundCheck {
    fn new(value: f64, bound: f64) -> Self {
        BoundCheck {
            value,
            bound,
            ok: holds(value, bound),
        }
    }

    pub fn slack(&self) -> f64 {
        self.bound - self.value
    }
}

/// `|ψ̂ₙ − ψ*| ≤ Δₙ`.
pub fn check_value_perturbation(f: &ObjectiveTable, f_hat: &ObjectiveTable) -> Result<BoundCheck> {
    let delta = sup_deviation(f_hat, f)?;
    let gap = (infimum(f_hat) - infimum(f)).abs();
    Ok(BoundCheck::new(gap, delta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsTransferCheck {
    /// `Ŝₙ^δ ⊆ S^{2Δₙ+δ}`.
    pub forward_ok: bool,
    /// `S^ε ⊆ Ŝₙ^{2Δₙ+ε}`.
    pub backward_ok: bool,
    /// `min_{x∈Ŝₙ^δ} (2Δₙ + δ) − (f(x) − ψ*)`.
    pub forward_slack: f64,
    /// `min_{x∈S^ε} (2Δₙ + ε) − (f̂(x) − ψ̂ₙ)`.
    pub backward_slack: f64,
}

/// Checks whether every member of `from`'s `level`-set sits inside the
/// `target_level`-set of `to`; returns the worst slack.
fn inclusion_slack(
    from: &ObjectiveTable,
    level: f64,
    to: &ObjectiveTable,
    target_level: f64,
) -> Result<(bool, f64)> {
    let members = eps_min_set(from, level)?;
    let to_inf = infimum(to);
    let mut ok = true;
    let mut worst = f64::INFINITY;
    for &i in &members.members {
        let excess = to.get(i) - to_inf;
        worst = worst.min(target_level - excess);
        ok &= holds(excess, target_level);
    }
    Ok((ok, worst))
}

pub fn check_eps_transfer(
    f: &ObjectiveTable,
    f_hat: &ObjectiveTable,
    eps: f64,
    delta: f64,
) -> Result<EpsTransferCheck> {
    if !(eps >= 0.0 && delta >= 0.0) {
        return Err(Error::contract(format!(
            "epsilon {eps} and delta {delta} must be >= 0"
        )));
    }
    let dn = sup_deviation(f_hat, f)?;
    let (forward_ok, forward_slack) = inclusion_slack(f_hat, delta, f, 2.0 * dn + delta)?;
    let (backward_ok, backward_slack) = inclusion_slack(f, eps, f_hat, 2.0 * dn + eps)?;
    Ok(EpsTransferCheck {
        forward_ok,
        backward_ok,
        forward_slack,
        backward_slack,
    })
}

fn require_member(f_hat: &ObjectiveTable, index: usize, delta: f64) -> Result<()> {
    if !(delta >= 0.0) {
        return Err(Error::contract(format!("delta {delta} must be >= 0")));
    }
    if index >= f_hat.len() {
        return Err(Error::contract(format!(
            "grid index {index} out of range for {} points",
            f_hat.len()
        )));
    }
    if !eps_min_set(f_hat, delta)?.contains(index) {
        return Err(Error::Membership { index, delta });
    }
    Ok(())
}

/// `f(x̂) − ψ* ≤ 2Δₙ + δ` for `x̂ ∈ Ŝₙ^δ`.
pub fn check_excess_risk(
    f: &ObjectiveTable,
    f_hat: &ObjectiveTable,
    x_hat: usize,
    delta: f64,
) -> Result<BoundCheck> {
    f.check_same_grid(f_hat)?;
    require_member(f_hat, x_hat, delta)?;
    let dn = sup_deviation(f_hat, f)?;
    Ok(BoundCheck::new(f.get(x_hat) - infimum(f), 2.0 * dn + delta))
}

/// Certificate of `f(x) − ψ* ≥ α·dist(x, S⁰)^κ` on every grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SharpGrowthCert {
    pub kappa: f64,
    /// `+∞` when the certificate is vacuous (`S⁰` is the whole grid).
    pub alpha: f64,
    pub argmin: Vec<usize>,
}

impl SharpGrowthCert {
    pub fn new(kappa: f64, alpha: f64, argmin: Vec<usize>) -> Result<Self> {
        if !(kappa >= 1.0 && kappa.is_finite()) {
            return Err(Error::contract(format!("sharp-growth order {kappa} must be >= 1")));
        }
        if !(alpha > 0.0) {
            return Err(Error::Certificate(format!("alpha {alpha} must be positive")));
        }
        if argmin.is_empty() {
            return Err(Error::Certificate("empty argmin set".into()));
        }
        Ok(SharpGrowthCert {
            kappa,
            alpha,
            argmin,
        })
    }

    pub fn is_vacuous(&self) -> bool {
        self.alpha == f64::INFINITY
    }

    /// Confirms the argmin set and the growth inequality on every grid point.
    ///
    /// The comparison is relative to the two sides only, so a certificate
    /// inflated by a factor `1 + 1e-9` is rejected whenever the minimizing
    /// ratio is attained.
    pub fn verify(&self, f: &ObjectiveTable, grid: &ParamGrid) -> Result<()> {
        if f.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        if f.argmin_set() != self.argmin {
            return Err(Error::Certificate(
                "argmin set does not match the objective".into(),
            ));
        }
        if self.is_vacuous() {
            if self.argmin.len() != grid.len() {
                return Err(Error::Certificate(
                    "vacuous certificate for a non-constant objective".into(),
                ));
            }
            return Ok(());
        }
        let psi = infimum(f);
        for i in 0..grid.len() {
            let gap = f.get(i) - psi;
            let required = self.alpha * grid.distance_to_set(i, &self.argmin).powf(self.kappa);
            if gap < required - REL_TOL * (gap.abs() + required.abs()) {
                return Err(Error::Certificate(format!(
                    "growth fails at grid index {i}: gap {gap} < {required}"
                )));
            }
        }
        Ok(())
    }

    /// Euclidean distance from grid point `i` to the certified `S⁰`.
    pub fn distance(&self, grid: &ParamGrid, i: usize) -> f64 {
        grid.distance_to_set(i, &self.argmin)
    }
}

/// Largest `α` with `f(x) − ψ* ≥ α·dist(x, S⁰)^κ` on the grid.
pub fn estimate_sharp_growth(
    f: &ObjectiveTable,
    grid: &ParamGrid,
    kappa: f64,
) -> Result<SharpGrowthCert> {
    if !(kappa >= 1.0 && kappa.is_finite()) {
        return Err(Error::contract(format!("sharp-growth order {kappa} must be >= 1")));
    }
    if f.len() != grid.len() {
        return Err(Error::GridMismatch);
    }
    let argmin = f.argmin_set();
    let psi = infimum(f);
    let mut alpha = f64::INFINITY;
    for i in 0..grid.len() {
        if f.get(i) == psi {
            continue;
        }
        let d = grid.distance_to_set(i, &argmin).powf(kappa);
        alpha = alpha.min((f.get(i) - psi) / d);
    }
    SharpGrowthCert::new(kappa, alpha, argmin)
}

/// `dist(x̂, S⁰)^κ ≤ (2Δₙ + δ)/α` for `x̂ ∈ Ŝₙ^δ`. The returned `value` is
/// the distance itself; `ok` compares its `κ`-th power.
pub fn check_distance_bound(
    f: &ObjectiveTable,
    f_hat: &ObjectiveTable,
    grid: &ParamGrid,
    cert: &SharpGrowthCert,
    x_hat: usize,
    delta: f64,
) -> Result<BoundCheck> {
    f.check_same_grid(f_hat)?;
    cert.verify(f, grid)?;
    require_member(f_hat, x_hat, delta)?;
    let dn = sup_deviation(f_hat, f)?;
    let dist = cert.distance(grid, x_hat);
    let powered = dist.powf(cert.kappa);
    let rhs = (2.0 * dn + delta) / cert.alpha;
    Ok(BoundCheck {
        value: dist,
        bound: rhs.powf(1.0 / cert.kappa),
        ok: cert.is_vacuous() || holds(powered, rhs),
    })
}

/// Every transfer conclusion for one `(f, f̂)` pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferReport {
    pub delta_n: f64,
    pub value: BoundCheck,
    pub eps_transfer: EpsTransferCheck,
    pub excess: BoundCheck,
    pub distance: Option<BoundCheck>,
}

impl TransferReport {
    pub fn all_ok(&self) -> bool {
        self.value.ok
            && self.eps_transfer.forward_ok
            && self.eps_transfer.backward_ok
            && self.excess.ok
            && self.distance.is_none_or(|d| d.ok)
    }

    /// Smallest slack over every conclusion; negative iff one failed.
    pub fn min_slack(&self) -> f64 {
        let mut m = self
            .value
            .slack()
            .min(self.eps_transfer.forward_slack)
            .min(self.eps_transfer.backward_slack)
            .min(self.excess.slack());
        if let Some(d) = &self.distance {
            m = m.min(d.slack());
        }
        m
    }

    /// Names of the failing conclusions.
    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.value.ok {
            out.push("value perturbation");
        }
        if !self.eps_transfer.forward_ok {
            out.push("forward inclusion");
        }
        if !self.eps_transfer.backward_ok {
            out.push("backward inclusion");
        }
        if !self.excess.ok {
            out.push("excess risk");
        }
        if self.distance.is_some_and(|d| !d.ok) {
            out.push("distance localization");
        }
        out
    }
}

/// Runs all four checks; `cert` (with its grid) enables distance localization.
pub fn transfer_report(
    f: &ObjectiveTable,
    f_hat: &ObjectiveTable,
    cert: Option<(&SharpGrowthCert, &ParamGrid)>,
    x_hat: usize,
    eps: f64,
    delta: f64,
) -> Result<TransferReport> {
    let value = check_value_perturbation(f, f_hat)?;
    let eps_transfer = check_eps_transfer(f, f_hat, eps, delta)?;
    let excess = check_excess_risk(f, f_hat, x_hat, delta)?;
    let distance = cert
        .map(|(c, g)| check_distance_bound(f, f_hat, g, c, x_hat, delta))
        .transpose()?;
    Ok(TransferReport {
        delta_n: value.bound,
        value,
        eps_transfer,
        excess,
        distance,
    })
}

//! Monte Carlo rate estimation.
//!
//! Seeds: the replication `rep` at sample size `n` draws with
//! `mix_seed(mix_seed(master, n), rep)`, so results do not depend on how
//! replications are scheduled across workers. Every replication re-checks the
//! deterministic transfer inequalities and aborts with its seed on failure.

use std::f64::consts::E;

use rayon::prelude::*;
use serde::Serialize;

use crate::empirical::{
    counts_to_weights, draw_sample, empirical_objective, eps_min_set, infimum, mix_seed,
    sup_deviation, ObjectiveTable,
};
use crate::error::{Error, Result};
use crate::objectives::{
    check_model_fits, true_objective, weighted_objective, DataDistribution, LossModel, ParamGrid,
};
use crate::transfer::{estimate_sharp_growth, transfer_report, SharpGrowthCert};

/// `LL(u) = max(1, log log(max(u, e^e)))`.
pub fn ll(u: f64) -> f64 {
    u.max(E.powf(E)).ln().ln().max(1.0)
}

/// `bₙ = √(LL(n)/n)`.
pub fn lil_scale(n: usize) -> f64 {
    (ll(n as f64) / n as f64).sqrt()
}

/// Tolerance `δₙ = c·n^{-1/2}` for the selected empirical minimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaRule {
    pub c: f64,
}

impl DeltaRule {
    pub fn new(c: f64) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::contract(format!("delta constant {c} must be >= 0")));
        }
        Ok(DeltaRule { c })
    }

    pub fn exact() -> Self {
        DeltaRule { c: 0.0 }
    }

    pub fn at(&self, n: usize) -> f64 {
        self.c / (n as f64).sqrt()
    }
}

pub fn replication_seed(master: u64, n: usize, rep: usize) -> u64 {
    mix_seed(mix_seed(master, n as u64), rep as u64)
}

pub(crate) fn check_ns(ns: &[usize]) -> Result<()> {
    if ns.is_empty() {
        return Err(Error::contract("sample-size list is empty"));
    }
    if ns[0] == 0 {
        return Err(Error::contract("sample sizes must be >= 1"));
    }
    if ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::contract("sample sizes must be strictly increasing"));
    }
    Ok(())
}

/// One simulated SAA replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationRecord {
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub delta_n: f64,
    /// `|ψ̂ₙ − ψ*|`.
    pub value_gap: f64,
    /// Signed `ψ̂ₙ − ψ*`.
    pub value_error: f64,
    /// Selected grid index: lowest index in `Ŝₙ^{δₙ}`.
    pub x_hat: usize,
    pub excess: f64,
    pub distance: Option<f64>,
    /// Smallest slack over the transfer checks of this replication.
    pub min_slack: f64,
}

/// A model, law and grid together with the exact truth needed for checks.
#[derive(Debug, Clone)]
pub struct RateProblem<'a> {
    pub model: &'a LossModel,
    pub dist: &'a DataDistribution,
    pub grid: &'a ParamGrid,
    truth: ObjectiveTable,
    psi: f64,
    cert: Option<SharpGrowthCert>,
    epsilon: f64,
}

impl<'a> RateProblem<'a> {
    pub fn new(
        model: &'a LossModel,
        dist: &'a DataDistribution,
        grid: &'a ParamGrid,
        kappa: Option<f64>,
    ) -> Result<Self> {
        check_model_fits(model, dist, grid)?;
        let truth = true_objective(model, dist, grid)?;
        let cert = kappa
            .map(|k| estimate_sharp_growth(&truth, grid, k))
            .transpose()?;
        Ok(Self::assemble(model, dist, grid, truth, cert))
    }

    /// Uses a caller-supplied certificate, which must verify against `f`.
    pub fn with_certificate(
        model: &'a LossModel,
        dist: &'a DataDistribution,
        grid: &'a ParamGrid,
        cert: SharpGrowthCert,
    ) -> Result<Self> {
        check_model_fits(model, dist, grid)?;
        let truth = true_objective(model, dist, grid)?;
        cert.verify(&truth, grid)?;
        Ok(Self::assemble(model, dist, grid, truth, Some(cert)))
    }

    fn assemble(
        model: &'a LossModel,
        dist: &'a DataDistribution,
        grid: &'a ParamGrid,
        truth: ObjectiveTable,
        cert: Option<SharpGrowthCert>,
    ) -> Self {
        let psi = infimum(&truth);
        RateProblem {
            model,
            dist,
            grid,
            truth,
            psi,
            cert,
            epsilon: 0.0,
        }
    }

    /// Level `ε` used for the ε-minimizer inclusions (default 0).
    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::contract(format!("epsilon {epsilon} must be >= 0")));
        }
        self.epsilon = epsilon;
        Ok(self)
    }

    pub fn truth(&self) -> &ObjectiveTable {
        &self.truth
    }

    pub fn certificate(&self) -> Option<&SharpGrowthCert> {
        self.cert.as_ref()
    }

    /// Draws one sample and evaluates every per-replication statistic.
    pub fn replicate(
        &self,
        n: usize,
        rep: usize,
        seed: u64,
        rule: DeltaRule,
    ) -> Result<ReplicationRecord> {
        let sample = draw_sample(self.dist, n, seed)?;
        let f_hat = empirical_objective(self.model, &sample, self.grid)?;
        let delta = rule.at(n);
        let x_hat = eps_min_set(&f_hat, delta)?.members[0];
        let report = transfer_report(
            &self.truth,
            &f_hat,
            self.cert.as_ref().map(|c| (c, self.grid)),
            x_hat,
            self.epsilon,
            delta,
        )?;
        if !report.all_ok() {
            return Err(Error::CheckFailed {
                n,
                rep,
                seed,
                detail: report.failures().join(", "),
            });
        }
        let value_error = infimum(&f_hat) - self.psi;
        Ok(ReplicationRecord {
            n,
            rep,
            seed,
            delta_n: report.delta_n,
            value_gap: value_error.abs(),
            value_error,
            x_hat,
            excess: report.excess.value,
            distance: report.distance.map(|d| d.value),
            min_slack: report.min_slack(),
        })
    }

    /// All `(n, rep)` replications, ordered by `(n, rep)`.
    pub fn simulate(
        &self,
        ns: &[usize],
        reps: usize,
        master: u64,
        rule: DeltaRule,
    ) -> Result<Vec<ReplicationRecord>> {
        check_ns(ns)?;
        if reps == 0 {
            return Err(Error::contract("reps must be >= 1"));
        }
        let jobs: Vec<(usize, usize)> = ns
            .iter()
            .flat_map(|&n| (0..reps).map(move |r| (n, r)))
            .collect();
        jobs.into_par_iter()
            .map(|(n, r)| self.replicate(n, r, replication_seed(master, n, r), rule))
            .collect()
    }
}

/// Per-`n` summary of a replicated statistic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryStats {
    pub n: usize,
    pub mean: f64,
    pub max: f64,
    pub q10: f64,
    pub median: f64,
    pub q90: f64,
}

impl SummaryStats {
    pub fn from_values(n: usize, values: &[f64]) -> Result<Self> {
        let law = crate::gaussian::EmpiricalLaw::new(values.to_vec())?;
        Ok(SummaryStats {
            n,
            mean: law.mean(),
            max: *law.values().last().unwrap(),
            q10: law.quantile(0.1),
            median: law.median(),
            q90: law.quantile(0.9),
        })
    }
}

/// Groups records by `n` (records must be ordered by `n`).
pub fn summarize(
    records: &[ReplicationRecord],
    stat: impl Fn(&ReplicationRecord) -> Option<f64>,
) -> Result<Vec<SummaryStats>> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < records.len() {
        let n = records[start].n;
        let end = start + records[start..].iter().take_while(|r| r.n == n).count();
        let values: Vec<f64> = records[start..end].iter().filter_map(&stat).collect();
        if !values.is_empty() {
            out.push(SummaryStats::from_values(n, &values)?);
        }
        start = end;
    }
    Ok(out)
}

/// Replicated `Δₙ` for each `n`.
pub fn monte_carlo_delta(
    model: &LossModel,
    dist: &DataDistribution,
    grid: &ParamGrid,
    ns: &[usize],
    reps: usize,
    seed: u64,
) -> Result<Vec<SummaryStats>> {
    let problem = RateProblem::new(model, dist, grid, None)?;
    let records = problem.simulate(ns, reps, seed, DeltaRule::exact())?;
    summarize(&records, |r| Some(r.delta_n))
}

/// Least squares on `(log n, log mean)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub ns: Vec<usize>,
    pub means: Vec<f64>,
    /// Sample sizes whose mean was not positive and was left out.
    pub dropped: Vec<usize>,
}

pub fn fit_rate(ns: &[usize], means: &[f64]) -> Result<RateFit> {
    if ns.len() != means.len() {
        return Err(Error::Dimension {
            what: "rate means",
            expected: ns.len(),
            got: means.len(),
        });
    }
    let mut dropped = Vec::new();
    let mut pts = Vec::new();
    for (&n, &m) in ns.iter().zip(means) {
        if n > 0 && m > 0.0 && m.is_finite() {
            pts.push(((n as f64).ln(), m.ln()));
        } else {
            dropped.push(n);
        }
    }
    if pts.len() < 3 {
        return Err(Error::contract(format!(
            "rate fit needs at least 3 positive means, got {}",
            pts.len()
        )));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::contract("rate fit needs distinct sample sizes"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r_squared = if syy <= f64::EPSILON * k * my.abs().max(1.0) {
        1.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        ns: ns.to_vec(),
        means: means.to_vec(),
        dropped,
    })
}

/// Fit of the per-`n` means, or `None` when fewer than three are positive.
pub fn try_fit(stats: &[SummaryStats]) -> Option<RateFit> {
    let ns: Vec<usize> = stats.iter().map(|s| s.n).collect();
    let means: Vec<f64> = stats.iter().map(|s| s.mean).collect();
    fit_rate(&ns, &means).ok()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinimizerRatePoint {
    pub n: usize,
    pub mean_excess: f64,
    pub mean_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinimizerRates {
    pub points: Vec<MinimizerRatePoint>,
    pub excess_fit: Option<RateFit>,
    pub distance_fit: Option<RateFit>,
}

/// Mean excess risk and distance of the selected `δₙ`-minimizer per `n`.
#[allow(clippy::too_many_arguments)]
pub fn minimizer_rates(
    model: &LossModel,
    dist: &DataDistribution,
    grid: &ParamGrid,
    cert: &SharpGrowthCert,
    rule: DeltaRule,
    ns: &[usize],
    reps: usize,
    seed: u64,
) -> Result<MinimizerRates> {
    let problem = RateProblem::with_certificate(model, dist, grid, cert.clone())?;
    let records = problem.simulate(ns, reps, seed, rule)?;
    minimizer_rates_from(&records)
}

pub fn minimizer_rates_from(records: &[ReplicationRecord]) -> Result<MinimizerRates> {
    let excess = summarize(records, |r| Some(r.excess))?;
    let distance = summarize(records, |r| r.distance)?;
    let points = excess
        .iter()
        .zip(&distance)
        .map(|(e, d)| MinimizerRatePoint {
            n: e.n,
            mean_excess: e.mean,
            mean_distance: d.mean,
        })
        .collect();
    Ok(MinimizerRates {
        points,
        excess_fit: try_fit(&excess),
        distance_fit: try_fit(&distance),
    })
}

/// `Δₙ` along nested prefixes of one growing sample per replication.
///
/// Each prefix is evaluated exactly as [`empirical_objective`] would evaluate
/// it on its own.
pub fn lil_traces(
    model: &LossModel,
    dist: &DataDistribution,
    grid: &ParamGrid,
    ns: &[usize],
    reps: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    check_ns(ns)?;
    if reps == 0 {
        return Err(Error::contract("reps must be >= 1"));
    }
    check_model_fits(model, dist, grid)?;
    let truth = true_objective(model, dist, grid)?;
    let n_max = *ns.last().unwrap();
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let sample = draw_sample(dist, n_max, mix_seed(seed, r as u64))?;
            ns.iter()
                .map(|&n| {
                    let w = counts_to_weights(dist.support(), sample.atoms(), n);
                    let values = weighted_objective(model, dist.support(), &w, grid);
                    let f_hat = ObjectiveTable::on_grid(grid, values)?;
                    sup_deviation(&f_hat, &truth)
                })
                .collect()
        })
        .collect()
}

/// `Δₙ / bₙ` along one replication, with window maxima.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LilTrace {
    pub ns: Vec<usize>,
    pub normalized: Vec<f64>,
    /// Max over `n ≤ split`.
    pub early_max: f64,
    /// Max over `n ≥ split`.
    pub late_max: f64,
    /// `late_max / early_max` (0 when both vanish).
    pub ratio: f64,
}

impl LilTrace {
    /// Late window stays within `factor` times the early window.
    pub fn bounded_by(&self, factor: f64) -> bool {
        self.late_max <= factor * self.early_max
    }
}

pub fn lil_statistic(traces: &[Vec<f64>], ns: &[usize], split: usize) -> Result<Vec<LilTrace>> {
    check_ns(ns)?;
    if !ns.iter().any(|&n| n <= split) || !ns.iter().any(|&n| n >= split) {
        return Err(Error::contract(format!(
            "split {split} leaves an empty early or late window"
        )));
    }
    traces
        .iter()
        .map(|trace| {
            if trace.len() != ns.len() {
                return Err(Error::Dimension {
                    what: "LIL trace",
                    expected: ns.len(),
                    got: trace.len(),
                });
            }
            let normalized: Vec<f64> = trace
                .iter()
                .zip(ns)
                .map(|(d, &n)| d / lil_scale(n))
                .collect();
            let window_max = |keep: &dyn Fn(usize) -> bool| {
                ns.iter()
                    .zip(&normalized)
                    .filter(|(n, _)| keep(**n))
                    .map(|(_, v)| *v)
                    .fold(0.0, f64::max)
            };
            let early_max = window_max(&|n| n <= split);
            let late_max = window_max(&|n| n >= split);
            let ratio = if early_max > 0.0 {
                late_max / early_max
            } else if late_max == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            Ok(LilTrace {
                ns: ns.to_vec(),
                normalized,
                early_max,
                late_max,
                ratio,
            })
        })
        .collect()
}

//! Gaussian limit process on the grid and the limit law of the optimal value.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::empirical::{
    draw_sample, empirical_objective, infimum, mix_seed, rng_from_seed, GridKey, ObjectiveTable,
};
use crate::error::{Error, Result};
use crate::infimum::directional_derivative_default;
use crate::objectives::{check_model_fits, true_objective, DataDistribution, LossModel, ParamGrid};

/// Largest grid accepted for dense covariance work.
pub const MAX_GRID_POINTS: usize = 512;

/// Relative eigenvalue floor: anything more negative than
/// `-EIGEN_FLOOR·trace(Σ)` is treated as a real defect, not rounding.
pub const EIGEN_FLOOR: f64 = 1e-9;

/// Covariance `Σ(x, y) = P(h_x h_y) − P h_x · P h_y` with a PSD factor.
#[derive(Debug, Clone)]
pub struct CovModel {
    key: GridKey,
    matrix: DMatrix<f64>,
    /// `Σ ≈ L Lᵀ`, with columns only for positive eigenvalues.
    factor: DMatrix<f64>,
    clipped: bool,
}

impl CovModel {
    /// Symmetrizes `matrix`, clips rounding-level negative eigenvalues and
    /// builds the factor.
    pub fn from_matrix(key: GridKey, matrix: DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if n == 0 || matrix.ncols() != n {
            return Err(Error::contract("covariance must be a nonempty square matrix"));
        }
        if let GridKey::Anonymous(len) = key {
            if len != n {
                return Err(Error::Dimension {
                    what: "covariance",
                    expected: len,
                    got: n,
                });
            }
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("covariance has non-finite entries".into()));
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let trace = sym.trace();
        let eig = SymmetricEigen::new(sym.clone());
        let lambda_max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        let lambda_min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if lambda_min < -EIGEN_FLOOR * trace.abs().max(f64::MIN_POSITIVE) && lambda_min < 0.0 {
            return Err(Error::Numerical(format!(
                "covariance is not positive semidefinite (eigenvalue {lambda_min}, trace {trace})"
            )));
        }
        let clipped = lambda_min < 0.0;
        let keep: Vec<usize> = (0..n)
            .filter(|&k| eig.eigenvalues[k] > 1e-14 * lambda_max)
            .collect();
        let mut factor = DMatrix::zeros(n, keep.len());
        for (col, &k) in keep.iter().enumerate() {
            let s = eig.eigenvalues[k].sqrt();
            for r in 0..n {
                factor[(r, col)] = eig.eigenvectors[(r, k)] * s;
            }
        }
        Ok(CovModel {
            key,
            matrix: sym,
            factor,
            clipped,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn rank(&self) -> usize {
        self.factor.ncols()
    }

    /// Whether negative eigenvalues were clipped to zero.
    pub fn eigen_floor_applied(&self) -> bool {
        self.clipped
    }

    pub fn key(&self) -> GridKey {
        self.key
    }

    pub fn variance(&self, i: usize) -> f64 {
        self.matrix[(i, i)]
    }
}

/// Exact covariance of the loss class over a finite-support law.
pub fn covariance_matrix(
    model: &LossModel,
    dist: &DataDistribution,
    grid: &ParamGrid,
) -> Result<CovModel> {
    check_model_fits(model, dist, grid)?;
    if grid.len() > MAX_GRID_POINTS {
        return Err(Error::contract(format!(
            "grid has {} points; covariance work is capped at {MAX_GRID_POINTS}",
            grid.len()
        )));
    }
    let f = true_objective(model, dist, grid)?;
    let n = grid.len();
    // Centered losses per support atom: (h(x, ξⱼ) − f(x)).
    let centered: Vec<Vec<f64>> = dist
        .support()
        .iter()
        .map(|xi| {
            (0..n)
                .map(|i| model.eval_unchecked(grid.point(i), xi) - f.get(i))
                .collect()
        })
        .collect();
    let mut m = DMatrix::zeros(n, n);
    for (row, w) in centered.iter().zip(dist.weights()) {
        for a in 0..n {
            let wa = w * row[a];
            if wa == 0.0 {
                continue;
            }
            for b in a..n {
                m[(a, b)] += wa * row[b];
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            m[(a, b)] = m[(b, a)];
        }
    }
    CovModel::from_matrix(GridKey::Grid(grid.fingerprint()), m)
}

/// One draw of the centred Gaussian vector with covariance `Σ`.
pub fn sample_limit_process(cov: &CovModel, seed: u64) -> Result<ObjectiveTable> {
    let mut rng = rng_from_seed(seed);
    let z = DVector::from_iterator(
        cov.rank(),
        (0..cov.rank()).map(|_| StandardNormal.sample(&mut rng)),
    );
    let g = &cov.factor * z;
    ObjectiveTable::with_key(cov.key, g.iter().copied().collect())
}

/// Sorted sample of a real-valued statistic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalLaw {
    sorted: Vec<f64>,
}

impl EmpiricalLaw {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::contract("empirical law needs at least one value"));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::contract("empirical law contains NaN"));
        }
        values.sort_by(f64::total_cmp);
        Ok(EmpiricalLaw { sorted: values })
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.sorted.iter().sum::<f64>() / self.len() as f64
    }

    /// Unbiased sample variance (0 for a singleton).
    pub fn variance(&self) -> f64 {
        let n = self.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        self.sorted.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
    }

    /// Lower empirical quantile: the `⌈q·n⌉`-th order statistic.
    pub fn quantile(&self, q: f64) -> f64 {
        let n = self.len();
        let k = ((q * n as f64).ceil() as usize).clamp(1, n);
        self.sorted[k - 1]
    }

    pub fn median(&self) -> f64 {
        let n = self.len();
        if n % 2 == 1 {
            self.sorted[n / 2]
        } else {
            0.5 * (self.sorted[n / 2 - 1] + self.sorted[n / 2])
        }
    }

    /// Union of two laws.
    pub fn merge(&self, other: &EmpiricalLaw) -> EmpiricalLaw {
        let mut all = self.sorted.clone();
        all.extend_from_slice(&other.sorted);
        all.sort_by(f64::total_cmp);
        EmpiricalLaw { sorted: all }
    }
}

/// Draws of `ι′_f(G) = lim_{ε↓0} inf_{S^ε} G`; replication `r` uses
/// `mix_seed(seed, r)`.
pub fn limit_value_distribution(
    f: &ObjectiveTable,
    cov: &CovModel,
    reps: usize,
    seed: u64,
) -> Result<EmpiricalLaw> {
    if reps == 0 {
        return Err(Error::contract("reps must be >= 1"));
    }
    if f.key() != cov.key() || f.len() != cov.size() {
        return Err(Error::GridMismatch);
    }
    let values = (0..reps)
        .into_par_iter()
        .map(|r| {
            let g = sample_limit_process(cov, mix_seed(seed, r as u64))?;
            Ok(directional_derivative_default(f, &g)?.value)
        })
        .collect::<Result<Vec<f64>>>()?;
    EmpiricalLaw::new(values)
}

/// Draws of `√n(ψ̂ₙ − ψ*)`; replication `r` samples with `mix_seed(seed, r)`.
pub fn finite_n_value_distribution(
    model: &LossModel,
    dist: &DataDistribution,
    grid: &ParamGrid,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<EmpiricalLaw> {
    if reps == 0 {
        return Err(Error::contract("reps must be >= 1"));
    }
    let f = true_objective(model, dist, grid)?;
    let psi = infimum(&f);
    let scale = (n as f64).sqrt();
    let values = (0..reps)
        .into_par_iter()
        .map(|r| {
            let sample = draw_sample(dist, n, mix_seed(seed, r as u64))?;
            let f_hat = empirical_objective(model, &sample, grid)?;
            Ok(scale * (infimum(&f_hat) - psi))
        })
        .collect::<Result<Vec<f64>>>()?;
    EmpiricalLaw::new(values)
}

/// Two-sample Kolmogorov–Smirnov distance `sup_t |F_a(t) − F_b(t)|`,
/// evaluated at every pooled sample point.
pub fn ks_distance(a: &EmpiricalLaw, b: &EmpiricalLaw) -> f64 {
    let (xa, xb) = (a.values(), b.values());
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut sup = 0.0f64;
    while i < xa.len() || j < xb.len() {
        let t = match (xa.get(i), xb.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        while i < xa.len() && xa[i] <= t {
            i += 1;
        }
        while j < xb.len() && xb[j] <= t {
            j += 1;
        }
        sup = sup.max((i as f64 / na - j as f64 / nb).abs());
    }
    sup
}

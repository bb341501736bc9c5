//! Scenario sampling, empirical objectives and ε-minimizer sets.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::objectives::{weighted_objective, DataDistribution, LossModel, ParamGrid};

/// Derives the seed of stream `index` from `master`.
///
/// `mix(m, i) = splitmix64(m ^ splitmix64(i + 0x9E3779B97F4A7C15))`. The
/// derivation depends only on `(m, i)`, so any replication can be rerun in
/// isolation.
pub fn mix_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic generator for a derived seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Which grid a table lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum GridKey {
    /// A free-standing table of the given length.
    Anonymous(usize),
    /// A table indexed by the grid with this fingerprint.
    Grid(u64),
}

/// A finite real function on a parameter grid: `f`, `f̂ₙ`, a direction `g`
/// or a Gaussian path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectiveTable {
    key: GridKey,
    values: Vec<f64>,
}

impl ObjectiveTable {
    /// A table that is not attached to any particular grid.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let key = GridKey::Anonymous(values.len());
        Self::with_key(key, values)
    }

    pub fn on_grid(grid: &ParamGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension {
                what: "table",
                expected: grid.len(),
                got: values.len(),
            });
        }
        Self::with_key(GridKey::Grid(grid.fingerprint()), values)
    }

    pub(crate) fn with_key(key: GridKey, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::contract("objective table is empty"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::contract(format!(
                "objective table value at index {i} is not finite"
            )));
        }
        Ok(ObjectiveTable { key, values })
    }

    pub fn key(&self) -> GridKey {
        self.key
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn check_same_grid(&self, other: &ObjectiveTable) -> Result<()> {
        if self.key != other.key || self.values.len() != other.values.len() {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// `max − min` of the table.
    pub fn range(&self) -> f64 {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        hi - lo
    }

    pub fn scaled(&self, c: f64) -> Result<ObjectiveTable> {
        Self::with_key(self.key, self.values.iter().map(|v| c * v).collect())
    }

    /// Pointwise `self − other`.
    pub fn minus(&self, other: &ObjectiveTable) -> Result<ObjectiveTable> {
        self.check_same_grid(other)?;
        Self::with_key(
            self.key,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    /// Pointwise `self + other`.
    pub fn plus(&self, other: &ObjectiveTable) -> Result<ObjectiveTable> {
        self.check_same_grid(other)?;
        Self::with_key(
            self.key,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    /// Indices attaining the minimum (exact comparison).
    pub fn argmin_set(&self) -> Vec<usize> {
        let m = infimum(self);
        (0..self.values.len())
            .filter(|&i| self.values[i] == m)
            .collect()
    }
}

/// `ι(t) = min_x t(x)`; always attained on a finite grid.
pub fn infimum(t: &ObjectiveTable) -> f64 {
    t.values.iter().copied().fold(f64::INFINITY, f64::min)
}

/// `‖a − b‖∞`.
pub fn sup_deviation(a: &ObjectiveTable, b: &ObjectiveTable) -> Result<f64> {
    a.check_same_grid(b)?;
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}

/// `S^ε = {x : t(x) ≤ ι(t) + ε}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsMinSet {
    pub epsilon: f64,
    pub members: Vec<usize>,
}

impl EpsMinSet {
    pub fn contains(&self, i: usize) -> bool {
        self.members.binary_search(&i).is_ok()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn is_subset_of(&self, other: &EpsMinSet) -> bool {
        self.members.iter().all(|&i| other.contains(i))
    }
}

pub(crate) fn is_eps_member(t: &ObjectiveTable, inf: f64, i: usize, eps: f64) -> bool {
    t.values[i] <= inf + eps
}

pub fn eps_min_set(t: &ObjectiveTable, eps: f64) -> Result<EpsMinSet> {
    if !(eps >= 0.0) {
        return Err(Error::contract(format!("epsilon {eps} must be >= 0")));
    }
    let inf = infimum(t);
    let members = (0..t.len())
        .filter(|&i| is_eps_member(t, inf, i, eps))
        .collect();
    Ok(EpsMinSet {
        epsilon: eps,
        members,
    })
}

/// An i.i.d. sample `ξ₁ … ξₙ`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    seed: u64,
    dim: usize,
    draws: Vec<f64>,
    atoms: Vec<usize>,
    /// Support the atom indices refer to; empty for explicit samples.
    support: Vec<Vec<f64>>,
}

impl ScenarioSet {
    /// Builds a sample from explicit draws (no seed semantics).
    pub fn from_draws(draws: &[Vec<f64>]) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::contract("sample size must be >= 1"));
        }
        let dim = draws[0].len();
        let mut flat = Vec::with_capacity(dim * draws.len());
        for d in draws {
            if d.len() != dim {
                return Err(Error::Dimension {
                    what: "draw",
                    expected: dim,
                    got: d.len(),
                });
            }
            flat.extend_from_slice(d);
        }
        Ok(ScenarioSet {
            seed: 0,
            dim,
            draws: flat,
            atoms: Vec::new(),
            support: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.draws.len() / self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn draw(&self, i: usize) -> &[f64] {
        &self.draws[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.draws.chunks_exact(self.dim)
    }

    /// Support-atom index of every draw (empty for explicit samples).
    pub fn atoms(&self) -> &[usize] {
        &self.atoms
    }

    /// The first `n` draws.
    pub fn prefix(&self, n: usize) -> Result<ScenarioSet> {
        if n == 0 || n > self.n() {
            return Err(Error::contract(format!(
                "prefix length {n} outside 1..={}",
                self.n()
            )));
        }
        Ok(ScenarioSet {
            seed: self.seed,
            dim: self.dim,
            draws: self.draws[..n * self.dim].to_vec(),
            atoms: self.atoms.get(..n).map(<[usize]>::to_vec).unwrap_or_default(),
            support: self.support.clone(),
        })
    }

    /// Empirical weights `count(j)/n` per support atom, when drawn from a law.
    pub fn atom_weights(&self) -> Option<Vec<f64>> {
        if self.atoms.is_empty() {
            return None;
        }
        Some(counts_to_weights(&self.support, &self.atoms, self.n()))
    }
}

/// Draws `n` i.i.d. points from `dist` with a ChaCha8 stream keyed by `seed`.
pub fn draw_sample(dist: &DataDistribution, n: usize, seed: u64) -> Result<ScenarioSet> {
    if n == 0 {
        return Err(Error::contract("sample size must be >= 1"));
    }
    let dim = dist.dim();
    let mut rng = rng_from_seed(seed);
    let mut draws = Vec::with_capacity(n * dim);
    let mut atoms = Vec::with_capacity(n);
    if dist.len() == 1 {
        for _ in 0..n {
            draws.extend_from_slice(&dist.support()[0]);
            atoms.push(0);
        }
    } else {
        let index = WeightedIndex::new(dist.weights())
            .map_err(|e| Error::contract(format!("invalid weights: {e}")))?;
        for _ in 0..n {
            let j = index.sample(&mut rng);
            draws.extend_from_slice(&dist.support()[j]);
            atoms.push(j);
        }
    }
    Ok(ScenarioSet {
        seed,
        dim,
        draws,
        atoms,
        support: dist.support().to_vec(),
    })
}

pub(crate) fn counts_to_weights(support: &[Vec<f64>], atoms: &[usize], n: usize) -> Vec<f64> {
    let mut counts = vec![0usize; support.len()];
    for &a in &atoms[..n] {
        counts[a] += 1;
    }
    counts.into_iter().map(|c| c as f64 / n as f64).collect()
}

/// `f̂ₙ(x) = (1/n) Σᵢ h(x, ξᵢ)`.
///
/// Samples drawn from a law are aggregated per atom with weights
/// `count(j)/n`, using the same arithmetic as the true objective; a point mass
/// therefore reproduces `f` exactly. Explicit samples are summed in draw order.
pub fn empirical_objective(
    model: &LossModel,
    sample: &ScenarioSet,
    grid: &ParamGrid,
) -> Result<ObjectiveTable> {
    model.validate()?;
    model.check_dims(grid.dim(), sample.dim())?;
    let values = match sample.atom_weights() {
        Some(w) => weighted_objective(model, &sample.support, &w, grid),
        None => {
            let n = sample.n() as f64;
            grid.points()
                .iter()
                .map(|x| sample.iter().map(|xi| model.eval_unchecked(x, xi)).sum::<f64>() / n)
                .collect()
        }
    };
    ObjectiveTable::on_grid(grid, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::true_objective;
    use proptest::prelude::*;

    fn table(v: &[f64]) -> ObjectiveTable {
        ObjectiveTable::new(v.to_vec()).unwrap()
    }

    #[test]
    fn point_mass_sample_copies_atom() {
        let d = DataDistribution::point_mass(vec![0.5, -1.0]).unwrap();
        let s = draw_sample(&d, 5, 17).unwrap();
        assert_eq!(s.n(), 5);
        assert!(s.iter().all(|x| x == [0.5, -1.0]));
    }

    #[test]
    fn zero_sample_size_is_rejected() {
        let d = DataDistribution::point_mass(vec![0.0]).unwrap();
        assert!(matches!(draw_sample(&d, 0, 1), Err(Error::Contract(_))));
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let d = DataDistribution::uniform(vec![vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        assert_eq!(draw_sample(&d, 100, 9).unwrap(), draw_sample(&d, 100, 9).unwrap());
        assert_ne!(draw_sample(&d, 100, 9).unwrap(), draw_sample(&d, 100, 10).unwrap());
    }

    #[test]
    fn uniform_two_point_frequency() {
        // Hoeffding: P(|p̂ − 1/2| ≥ 0.1) ≤ 2 exp(−2·10⁴·0.01) ≈ 3e−87.
        let d = DataDistribution::uniform(vec![vec![0.0], vec![1.0]]).unwrap();
        for seed in [0u64, 1, 2, 99, u64::MAX] {
            let s = draw_sample(&d, 10_000, seed).unwrap();
            let freq = s.iter().filter(|x| x[0] == 0.0).count() as f64 / 1e4;
            assert!((0.4..=0.6).contains(&freq), "seed {seed}: {freq}");
        }
    }

    #[test]
    fn empirical_objective_examples() {
        let m = LossModel::Perceptron { features: 1 };
        let grid = ParamGrid::from_points(vec![vec![1.0, 0.0]]).unwrap();
        let s = ScenarioSet::from_draws(&[vec![1.0, 1.0], vec![-1.0, 1.0]]).unwrap();
        assert_eq!(empirical_objective(&m, &s, &grid).unwrap().values(), &[0.5]);

        let one = ScenarioSet::from_draws(&[vec![-1.0, 1.0]]).unwrap();
        assert_eq!(empirical_objective(&m, &one, &grid).unwrap().values(), &[1.0]);
    }

    #[test]
    fn point_mass_empirical_equals_truth() {
        let m = LossModel::QuadSynthetic { dim: 1 };
        let d = DataDistribution::point_mass(vec![0.3]).unwrap();
        let grid = ParamGrid::from_box(vec![-1.0], vec![1.0], vec![11]).unwrap();
        let s = draw_sample(&d, 7, 3).unwrap();
        assert_eq!(
            empirical_objective(&m, &s, &grid).unwrap(),
            true_objective(&m, &d, &grid).unwrap()
        );
    }

    #[test]
    fn sup_deviation_examples() {
        let a = table(&[2.0, 1.0, 2.0]);
        let b = table(&[1.0, 1.0, 1.0]);
        assert_eq!(sup_deviation(&a, &a).unwrap(), 0.0);
        assert_eq!(sup_deviation(&a, &b).unwrap(), 1.0);
        let shifted = a.plus(&table(&[-0.25; 3])).unwrap();
        assert_eq!(sup_deviation(&a, &shifted).unwrap(), 0.25);
        assert!(matches!(
            sup_deviation(&a, &table(&[1.0, 2.0])),
            Err(Error::GridMismatch)
        ));
    }

    #[test]
    fn tables_on_different_grids_do_not_mix() {
        let g1 = ParamGrid::from_points(vec![vec![0.0], vec![1.0]]).unwrap();
        let g2 = ParamGrid::from_points(vec![vec![0.0], vec![2.0]]).unwrap();
        let a = ObjectiveTable::on_grid(&g1, vec![0.0, 1.0]).unwrap();
        let b = ObjectiveTable::on_grid(&g2, vec![0.0, 1.0]).unwrap();
        assert!(matches!(sup_deviation(&a, &b), Err(Error::GridMismatch)));
    }

    #[test]
    fn infimum_examples() {
        assert_eq!(infimum(&table(&[3.0, 1.0, 2.0])), 1.0);
        assert_eq!(infimum(&table(&[4.5; 6])), 4.5);
        let m = LossModel::GapSynthetic;
        let d = DataDistribution::point_mass(vec![0.0]).unwrap();
        let grid =
            ParamGrid::from_points(vec![vec![0.0], vec![0.1], vec![0.5], vec![1.0]]).unwrap();
        let f = true_objective(&m, &d, &grid).unwrap();
        assert_eq!(infimum(&f), 0.1);
        assert_eq!(f.argmin_set(), vec![1]);
    }

    #[test]
    fn eps_min_set_examples() {
        let t = table(&[3.0, 1.0, 2.0]);
        assert_eq!(eps_min_set(&t, 0.0).unwrap().members, vec![1]);
        assert_eq!(eps_min_set(&t, 1.0).unwrap().members, vec![1, 2]);
        assert_eq!(eps_min_set(&t, t.range()).unwrap().members, vec![0, 1, 2]);
        assert!(eps_min_set(&t, -1e-3).is_err());
        assert!(eps_min_set(&t, f64::NAN).is_err());
    }

    #[test]
    fn non_finite_tables_are_rejected() {
        assert!(ObjectiveTable::new(vec![1.0, f64::NAN]).is_err());
        assert!(ObjectiveTable::new(vec![]).is_err());
    }

    #[test]
    fn empirical_objective_is_unbiased() {
        // Mean of f̂ₙ(x) − f(x) over R replications within 4·H/√(Rn).
        let m = LossModel::QuadSynthetic { dim: 1 };
        let d = DataDistribution::uniform(vec![vec![-1.0], vec![0.0], vec![1.0]]).unwrap();
        let grid = ParamGrid::from_box(vec![-1.0], vec![1.0], vec![5]).unwrap();
        let f = true_objective(&m, &d, &grid).unwrap();
        let env = crate::objectives::envelope(&m, &grid, &d).unwrap();
        let (reps, n) = (400usize, 50usize);
        let mut acc = vec![0.0; grid.len()];
        for r in 0..reps {
            let s = draw_sample(&d, n, mix_seed(5, r as u64)).unwrap();
            let fh = empirical_objective(&m, &s, &grid).unwrap();
            for (a, (x, y)) in acc.iter_mut().zip(fh.values().iter().zip(f.values())) {
                *a += x - y;
            }
        }
        let bound = 4.0 * env / ((reps * n) as f64).sqrt();
        for a in acc {
            assert!((a / reps as f64).abs() <= bound);
        }
    }

    #[test]
    fn mix_seed_separates_streams() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| mix_seed(42, i)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_eq!(mix_seed(42, 7), mix_seed(42, 7));
    }

    proptest! {
        #[test]
        fn infimum_is_one_lipschitz(
            pair in (1usize..40).prop_flat_map(|k| (
                prop::collection::vec(-10.0f64..10.0, k),
                prop::collection::vec(-10.0f64..10.0, k),
            ))
        ) {
            let (a, b) = (table(&pair.0), table(&pair.1));
            let dev = sup_deviation(&a, &b).unwrap();
            prop_assert!((infimum(&a) - infimum(&b)).abs() <= dev);
        }

        #[test]
        fn eps_min_set_is_monotone(
            v in prop::collection::vec(-5.0f64..5.0, 1..30),
            e1 in 0.0f64..3.0,
            e2 in 0.0f64..3.0,
        ) {
            let t = table(&v);
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            let small = eps_min_set(&t, lo).unwrap();
            let big = eps_min_set(&t, hi).unwrap();
            prop_assert!(!small.is_empty());
            prop_assert!(small.is_subset_of(&big));
        }

        #[test]
        fn empirical_objective_is_permutation_invariant(
            raw in prop::collection::vec(-1.0f64..1.0, 2..40),
            rot in 0usize..40,
        ) {
            let m = LossModel::QuadSynthetic { dim: 1 };
            let grid = ParamGrid::from_box(vec![-1.0], vec![1.0], vec![9]).unwrap();
            let draws: Vec<Vec<f64>> = raw.iter().map(|&v| vec![v]).collect();
            let mut permuted = draws.clone();
            let len = permuted.len();
            permuted.rotate_left(rot % len);
            permuted.reverse();
            let a = empirical_objective(&m, &ScenarioSet::from_draws(&draws).unwrap(), &grid).unwrap();
            let b = empirical_objective(&m, &ScenarioSet::from_draws(&permuted).unwrap(), &grid).unwrap();
            prop_assert!(sup_deviation(&a, &b).unwrap() <= 1e-12);
        }
    }
}

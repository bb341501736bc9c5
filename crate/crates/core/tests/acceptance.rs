//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with a
//! nonzero status if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use saa_lab::empirical::rng_from_seed;
use saa_lab::gaussian::{covariance_matrix, finite_n_value_distribution, ks_distance, limit_value_distribution};
use saa_lab::harness::{run_experiment, validate_value, RunOptions};
use saa_lab::infimum::{delta_residual, directional_derivative_default};
use saa_lab::rates::{
    fit_rate, lil_statistic, lil_traces, minimizer_rates, replication_seed, DeltaRule, RateProblem,
};
use saa_lab::transfer::{estimate_sharp_growth, transfer_report};
use saa_lab::vc::{
    empirical_shatter_dim, vc_arith_bound, vc_exp_bound, vc_exp_q_bound, vc_pfaffian_bound, Halfplanes,
    Intervals, ProgramSpec,
};
use saa_lab::{
    draw_sample, empirical_objective, mix_seed, true_objective, DataDistribution, LossModel,
    ObjectiveTable, ParamGrid,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn tol(lhs: f64, rhs: f64) -> f64 {
    1e-12 * (1.0 + lhs.abs() + rhs.abs())
}

fn min(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn sup_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

fn quad() -> LossModel {
    LossModel::QuadSynthetic { dim: 1 }
}

fn three_point() -> DataDistribution {
    DataDistribution::uniform(vec![vec![-1.0], vec![0.0], vec![1.0]]).unwrap()
}

fn line_grid(k: usize) -> ParamGrid {
    ParamGrid::from_box(vec![-1.0], vec![1.0], vec![k]).unwrap()
}

fn pow2(lo: u32, hi: u32) -> Vec<usize> {
    (lo..=hi).map(|k| 1usize << k).collect()
}

/// Bernoulli(1/2) loss on one parameter: the perceptron at (w, b) = (1, 0)
/// errs on (z, y) = (-1, 1) and not on (1, 1).
fn bernoulli_point() -> (LossModel, DataDistribution, ParamGrid) {
    (
        LossModel::Perceptron { features: 1 },
        DataDistribution::uniform(vec![vec![1.0, 1.0], vec![-1.0, 1.0]]).unwrap(),
        ParamGrid::from_points(vec![vec![1.0, 0.0]]).unwrap(),
    )
}

/// Values with many ties, or continuous values over several magnitudes.
fn random_values(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let scale = 10f64.powf(rng.random_range(-3.0..3.0));
    if rng.random_bool(0.5) {
        let levels = rng.random_range(1..6);
        (0..k).map(|_| scale * rng.random_range(0..levels) as f64 / 4.0).collect()
    } else {
        (0..k).map(|_| scale * rng.random_range(-1.0..1.0)).collect()
    }
}

fn random_perturbation(rng: &mut ChaCha8Rng, f: &[f64]) -> Vec<f64> {
    let range = f.iter().copied().fold(f64::NEG_INFINITY, f64::max) - min(f);
    let amp = (range.max(1e-3)) * 10f64.powf(rng.random_range(-4.0..0.5));
    match rng.random_range(0..3) {
        0 => f.iter().map(|v| v + amp * rng.random_range(-1.0..1.0)).collect(),
        // Sparse spikes.
        1 => f
            .iter()
            .map(|v| if rng.random_bool(0.1) { v + amp * rng.random_range(-1.0..1.0) } else { *v })
            .collect(),
        // A constant shift plus a discrete wobble.
        _ => {
            let shift = amp * rng.random_range(-1.0..1.0);
            f.iter()
                .map(|v| v + shift + amp * 0.25 * rng.random_range(-2..=2) as f64)
                .collect()
        }
    }
}

fn c01_transfer_suite() -> Outcome {
    let instances = 10_000;
    let mut rng = rng_from_seed(0xC01);
    let mut failures = 0usize;
    let mut library_disagreements = 0usize;
    let mut worst = f64::INFINITY;
    let mut with_distance = 0usize;
    for _ in 0..instances {
        let k = if rng.random_bool(0.2) {
            rng.random_range(1..=10)
        } else {
            rng.random_range(1..=1000)
        };
        let d = rng.random_range(1..=3);
        let points: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                (0..d)
                    .map(|a| if a == 0 { i as f64 } else { 0.0 } + rng.random_range(0.0..0.5))
                    .collect()
            })
            .collect();
        let grid = ParamGrid::from_points(points.clone()).unwrap();
        let f = random_values(&mut rng, k);
        let fh = random_perturbation(&mut rng, &f);
        let dn = sup_abs_diff(&f, &fh);
        let eps = if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..2.0) * dn.max(1e-6) };
        let delta = if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..2.0) * dn.max(1e-6) };
        let (psi, psi_hat) = (min(&f), min(&fh));

        let mut slack = (dn - (psi_hat - psi).abs()) + tol(psi_hat - psi, dn);
        let members: Vec<usize> = (0..k).filter(|&i| fh[i] <= psi_hat + delta).collect();
        for &i in &members {
            let rhs = psi + 2.0 * dn + delta;
            slack = slack.min(rhs - f[i] + tol(f[i], rhs));
        }
        for i in (0..k).filter(|&i| f[i] <= psi + eps) {
            let rhs = psi_hat + 2.0 * dn + eps;
            slack = slack.min(rhs - fh[i] + tol(fh[i], rhs));
        }
        let x_hat = members[rng.random_range(0..members.len())];
        let excess_rhs = 2.0 * dn + delta;
        slack = slack.min(excess_rhs - (f[x_hat] - psi) + tol(f[x_hat] - psi, excess_rhs));

        let ft = ObjectiveTable::on_grid(&grid, f.clone()).unwrap();
        let fht = ObjectiveTable::on_grid(&grid, fh.clone()).unwrap();
        let kappa = [1.0, 1.5, 2.0, 3.0][rng.random_range(0..4)];
        let cert = estimate_sharp_growth(&ft, &grid, kappa).unwrap();
        let s0: Vec<usize> = (0..k).filter(|&i| f[i] == psi).collect();
        if !cert.is_vacuous() {
            with_distance += 1;
            for i in 0..k {
                let dist = s0.iter().map(|&j| euclid(&points[i], &points[j])).fold(f64::INFINITY, f64::min);
                let lhs = cert.alpha * dist.powf(kappa);
                slack = slack.min(f[i] - psi - lhs + tol(lhs, f[i] - psi));
            }
            let dist = s0.iter().map(|&j| euclid(&points[x_hat], &points[j])).fold(f64::INFINITY, f64::min);
            let lhs = dist.powf(kappa);
            let rhs = excess_rhs / cert.alpha;
            slack = slack.min(rhs - lhs + tol(lhs, rhs));
        }
        worst = worst.min(slack);
        if slack < 0.0 {
            failures += 1;
        }
        let report = transfer_report(&ft, &fht, Some((&cert, &grid)), x_hat, eps, delta).unwrap();
        if report.all_ok() != (slack >= 0.0) {
            library_disagreements += 1;
        }
    }
    outcome(
        failures == 0 && library_disagreements == 0,
        format!(
            "{instances} instances ({with_distance} with localization), {failures} violations, \
             {library_disagreements} library disagreements, worst tolerance-adjusted slack {worst:.3e}"
        ),
    )
}

fn c02_infimum_oracle() -> Outcome {
    let pairs = 1000;
    let mut rng = rng_from_seed(0xC02);
    let (mut oracle_bad, mut homog_bad, mut lip_bad) = (0, 0, 0);
    for _ in 0..pairs {
        let k = rng.random_range(1..=300);
        let f: Vec<f64> = (0..k).map(|_| rng.random_range(0..5) as f64 * 0.5).collect();
        let g: Vec<f64> = (0..k)
            .map(|_| {
                if rng.random_bool(0.3) {
                    rng.random_range(-4..4) as f64 + 0.5
                } else {
                    rng.random_range(-10.0..10.0)
                }
            })
            .collect();
        let argmin = min(&f);
        let brute = (0..k).filter(|&i| f[i] == argmin).map(|i| g[i]).fold(f64::INFINITY, f64::min);
        let ft = ObjectiveTable::new(f).unwrap();
        let gt = ObjectiveTable::new(g.clone()).unwrap();
        let value = directional_derivative_default(&ft, &gt).unwrap().value;
        if value.to_bits() != brute.to_bits() {
            oracle_bad += 1;
        }
        let c = 10f64.powf(rng.random_range(-3.0..3.0));
        let scaled = directional_derivative_default(&ft, &gt.scaled(c).unwrap()).unwrap().value;
        if scaled.to_bits() != (c * value).to_bits() {
            homog_bad += 1;
        }
        let g2: Vec<f64> = g.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
        let other = directional_derivative_default(&ft, &ObjectiveTable::new(g2.clone()).unwrap())
            .unwrap()
            .value;
        if (value - other).abs() > sup_abs_diff(&g, &g2) {
            lip_bad += 1;
        }
    }
    outcome(
        oracle_bad + homog_bad + lip_bad == 0,
        format!(
            "{pairs} pairs: oracle mismatches {oracle_bad}, homogeneity failures {homog_bad}, \
             Lipschitz failures {lip_bad}"
        ),
    )
}

fn c03_value_rate() -> Outcome {
    let model = LossModel::Perceptron { features: 1 };
    let dist = DataDistribution::uniform(vec![vec![1.0, 1.0], vec![1.0, -1.0]]).unwrap();
    let grid = ParamGrid::from_box(vec![-1.0, -1.0], vec![1.0, 1.0], vec![8, 8]).unwrap();
    let ns = pow2(6, 14);
    let problem = RateProblem::new(&model, &dist, &grid, None).unwrap();
    let recs = problem.simulate(&ns, 200, 0xC03, DeltaRule::exact()).unwrap();
    let mean_of = |n: usize, g: &dyn Fn(&saa_lab::rates::ReplicationRecord) -> f64| {
        let v: Vec<f64> = recs.iter().filter(|r| r.n == n).map(g).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let delta: Vec<f64> = ns.iter().map(|&n| mean_of(n, &|r| r.delta_n)).collect();
    let value: Vec<f64> = ns.iter().map(|&n| mean_of(n, &|r| r.value_gap)).collect();
    let fd = fit_rate(&ns, &delta).unwrap();
    let fv = fit_rate(&ns, &value).unwrap();
    let ok = |s: f64, r2: f64| (-0.60..=-0.40).contains(&s) && r2 >= 0.95;
    outcome(
        ok(fd.slope, fd.r_squared) && ok(fv.slope, fv.r_squared),
        format!(
            "grid {} points, delta slope {:.4} (r2 {:.4}), value slope {:.4} (r2 {:.4})",
            grid.len(),
            fd.slope,
            fd.r_squared,
            fv.slope,
            fv.r_squared
        ),
    )
}

fn c04_small_n_oracle() -> Outcome {
    let (model, dist, grid) = bernoulli_point();
    let n = 4;
    let f = true_objective(&model, &dist, &grid).unwrap().values()[0];
    // All 2^4 equally likely outcomes of four draws.
    let mut exact = 0.0;
    for mask in 0u32..16 {
        let losses: Vec<f64> = (0..n)
            .map(|i| {
                let xi = &dist.support()[((mask >> i) & 1) as usize];
                model.eval(grid.point(0), xi).unwrap()
            })
            .collect();
        exact += (losses.iter().sum::<f64>() / n as f64 - f).abs() / 16.0;
    }
    let reps = 100_000;
    let problem = RateProblem::new(&model, &dist, &grid, None).unwrap();
    let recs = problem.simulate(&[n], reps, 0xC04, DeltaRule::exact()).unwrap();
    let d: Vec<f64> = recs.iter().map(|r| r.delta_n).collect();
    let mean = d.iter().sum::<f64>() / reps as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
    let se = (var / reps as f64).sqrt();
    let z = (mean - exact) / se;
    let z_quoted = (mean - 7.0 / 32.0) / se;
    outcome(
        z.abs() <= 3.0,
        format!(
            "brute-force E[Delta_4] = {exact} ({}), MC mean {mean:.5} +- {se:.5}, z = {z:.2}; \
             the value 7/32 would give z = {z_quoted:.1}",
            if exact == 3.0 / 16.0 { "3/16" } else { "?" }
        ),
    )
}

fn c05_delta_method() -> Outcome {
    let (model, dist, grid) = (quad(), three_point(), line_grid(201));
    let f = true_objective(&model, &dist, &grid).unwrap();
    let reps = 201;
    let mut medians = Vec::new();
    let mut positive = 0;
    for n in [1usize << 8, 1 << 14] {
        let mut abs = Vec::with_capacity(reps);
        for rep in 0..reps {
            let s = draw_sample(&dist, n, replication_seed(0xC05, n, rep)).unwrap();
            let fh = empirical_objective(&model, &s, &grid).unwrap();
            let r = delta_residual(&f, &fh, (n as f64).sqrt()).unwrap();
            if r > 0.0 {
                positive += 1;
            }
            abs.push(r.abs());
        }
        medians.push(median(abs));
    }
    outcome(
        medians[1] <= 0.5 * medians[0] && positive == 0,
        format!(
            "median |residual| {:.4e} at n=2^8, {:.4e} at n=2^14 (ratio {:.3}); positive residuals {positive}",
            medians[0],
            medians[1],
            medians[1] / medians[0]
        ),
    )
}

fn c06_limit_law() -> Outcome {
    let (model, dist, grid) = (quad(), three_point(), line_grid(21));
    let f = true_objective(&model, &dist, &grid).unwrap();
    let cov = covariance_matrix(&model, &dist, &grid).unwrap();
    let master = 0xC06u64;
    let limit = limit_value_distribution(&f, &cov, 10_000, mix_seed(master, u64::MAX)).unwrap();
    let finite = finite_n_value_distribution(&model, &dist, &grid, 1 << 14, 2000, mix_seed(master, 1 << 14)).unwrap();
    let ks_main = ks_distance(&finite, &limit);

    let ns = [1usize << 6, 1 << 8, 1 << 10, 1 << 12];
    let runs = 5;
    let mut per_n: Vec<Vec<f64>> = vec![Vec::new(); ns.len()];
    for run in 0..runs {
        let seed = mix_seed(master, run);
        let lim = limit_value_distribution(&f, &cov, 10_000, mix_seed(seed, u64::MAX)).unwrap();
        for (k, &n) in ns.iter().enumerate() {
            let law = finite_n_value_distribution(&model, &dist, &grid, n, 2000, mix_seed(seed, n as u64)).unwrap();
            per_n[k].push(ks_distance(&law, &lim));
        }
    }
    let med: Vec<f64> = per_n.into_iter().map(median).collect();
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).log2()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = med.iter().sum::<f64>() / med.len() as f64;
    let slope = xs.iter().zip(&med).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    outcome(
        ks_main <= 0.05 && slope <= 0.0,
        format!(
            "KS(n=2^14, limit) = {ks_main:.4}; median KS over {runs} runs at 2^6..2^12 = [{}], trend slope {slope:.4} per doubling",
            med.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn c07_localization_rate() -> Outcome {
    let (model, dist, grid) = (quad(), three_point(), line_grid(201));
    let f = true_objective(&model, &dist, &grid).unwrap();
    let cert = estimate_sharp_growth(&f, &grid, 2.0).unwrap();
    let ns = pow2(6, 14);
    let out = minimizer_rates(&model, &dist, &grid, &cert, DeltaRule::new(1.0).unwrap(), &ns, 200, 0xC07).unwrap();
    let Some(fit) = out.distance_fit else {
        return outcome(false, "distance fit unavailable".into());
    };
    outcome(
        (-0.35..=-0.15).contains(&fit.slope) && fit.r_squared >= 0.9,
        format!(
            "alpha {:.6}, delta_n = 1/sqrt(n), distance slope {:.4} (r2 {:.4})",
            cert.alpha, fit.slope, fit.r_squared
        ),
    )
}

fn c08_lil() -> Outcome {
    let (model, dist, grid) = bernoulli_point();
    let ns = pow2(4, 16);
    let reps = 50;
    let traces = lil_traces(&model, &dist, &grid, &ns, reps, 0xC08).unwrap();
    let stats = lil_statistic(&traces, &ns, 1 << 10).unwrap();
    let bounded = stats.iter().filter(|s| s.bounded_by(2.0)).count();
    let worst = stats.iter().map(|s| s.ratio).fold(0.0, f64::max);
    outcome(
        bounded >= 45,
        format!("late max <= 2 x early max in {bounded}/{reps} replications; largest ratio {worst:.3}"),
    )
}

fn c09_vc() -> Outcome {
    let log2 = |x: f64| x.ln() / 2f64.ln();
    let arith = vc_arith_bound(&ProgramSpec::new(2, 3)).unwrap();
    let exp = vc_exp_bound(&ProgramSpec::new(1, 1)).unwrap();
    let exp_q = vc_exp_q_bound(&ProgramSpec::new(1, 1)).unwrap();
    let pfaff = vc_pfaffian_bound(&ProgramSpec::new(1, 1).pfaffian(1, 1, 2, 1.0)).unwrap();
    let oracle_exp = 1.0 + 19.0 * log2(9.0);
    let oracle_exp_q = 1.0 + 11.0 * (1.0 + log2(9.0));
    let checks = [
        ("arithmetic = 40", arith == 40.0),
        ("exponential ~ 61.2286 +- 1e-4", (exp - 61.2286).abs() <= 1e-4),
        ("exponential = oracle", (exp - oracle_exp).abs() <= 1e-12),
        ("exponential_q ~ 46.869 +- 1e-4", (exp_q - 46.869).abs() <= 1e-4),
        ("exponential_q = oracle", (exp_q - oracle_exp_q).abs() <= 1e-12),
        ("pfaffian = 3", pfaff == 3.0),
    ];
    let halfplanes = Halfplanes::grid(72, 81, 2.0).unwrap();
    let plane: Vec<Vec<f64>> = vec![
        vec![0.0, 0.0],
        vec![1.0, 0.1],
        vec![0.2, 0.9],
        vec![0.8, 0.7],
        vec![0.45, 0.35],
        vec![0.1, 0.55],
    ];
    let hp = empirical_shatter_dim(&halfplanes, &plane, 6).unwrap();
    let ends: Vec<f64> = (0..=20).map(|i| i as f64 * 0.1 - 0.5).collect();
    let intervals = Intervals::grid(&ends).unwrap();
    let line: Vec<Vec<f64>> = [0.12, 0.37, 0.61, 0.88, 0.05].iter().map(|&v| vec![v]).collect();
    let iv = empirical_shatter_dim(&intervals, &line, 5).unwrap();
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let pass = failed.is_empty() && hp == 3 && iv == 2;
    outcome(
        pass,
        format!(
            "bounds 40 / {exp:.6} / {exp_q:.6} / {pfaff}; halfplanes {hp}, intervals {iv}{}",
            if failed.is_empty() {
                String::new()
            } else {
                format!(
                    "; failed: {} (exact 1 + 11(1 + log2 9) = {oracle_exp_q:.6} differs from 46.869 by {:.2e})",
                    failed.join(", "),
                    (oracle_exp_q - 46.869).abs()
                )
            }
        ),
    )
}

fn c10_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let problem = json!({
        "model": {"family": "quad_synthetic", "dim": 1},
        "distribution": {"support": [[-1.0], [0.0], [1.0]]},
        "grid": {"lower": [-1.0], "upper": [1.0], "resolution": [21]},
    });
    let configs = [
        json!({"kind": "transfer", "ns": [16, 64, 256], "reps": 40, "delta_c": 0.5, "epsilon": 0.01, "kappa": 2.0}),
        json!({"kind": "rates", "ns": [64, 256, 1024], "reps": 40, "delta_c": 1.0}),
        json!({"kind": "limit", "ns": [64, 256], "reps": 300, "limit_reps": 2000}),
        json!({"kind": "lil", "ns": [16, 64, 256, 1024], "reps": 20, "lil_split": 64}),
        json!({"kind": "vcbounds", "programs": [{"m": 2, "t": 3, "q": 1, "chain_len": 1, "degree": 3, "constant": 1.0}]}),
    ];
    let mut identical = 0;
    let mut names = Vec::new();
    for (i, extra) in configs.iter().enumerate() {
        let mut raw = problem.clone();
        for (k, v) in extra.as_object().unwrap() {
            raw[k] = v.clone();
        }
        raw["seed"] = json!(0xC10u64 + i as u64);
        let mut outputs = Vec::new();
        for workers in [1, 8] {
            raw["output_dir"] = json!(tmp.path().join(format!("w{workers}")).to_str().unwrap());
            let cfg = validate_value(&raw).unwrap();
            let rec = run_experiment(&cfg, &RunOptions { workers: Some(workers) }).unwrap();
            outputs.push(std::fs::read(rec.run_dir.join("results.csv")).unwrap());
        }
        let kind = extra["kind"].as_str().unwrap();
        if outputs[0] == outputs[1] && !outputs[0].is_empty() {
            identical += 1;
        } else {
            names.push(kind);
        }
    }
    outcome(
        identical == configs.len(),
        format!(
            "results.csv byte-identical for workers 1 vs 8 in {identical}/{} experiment kinds{}",
            configs.len(),
            if names.is_empty() { String::new() } else { format!("; differing: {}", names.join(", ")) }
        ),
    )
}

fn main() {
    let criteria: [(&str, &str, fn() -> Outcome); 10] = [
        ("C1", "deterministic transfer suite", c01_transfer_suite),
        ("C2", "infimum derivative oracle", c02_infimum_oracle),
        ("C3", "value rate", c03_value_rate),
        ("C4", "small-n exhaustive oracle", c04_small_n_oracle),
        ("C5", "delta-method linearization", c05_delta_method),
        ("C6", "limit-law match", c06_limit_law),
        ("C7", "sharp-growth localization rate", c07_localization_rate),
        ("C8", "iterated-logarithm statistic", c08_lil),
        ("C9", "VC formulas and shattering", c09_vc),
        ("C10", "determinism across worker counts", c10_determinism),
    ];
    let mut passed = 0;
    for (id, name, run) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        passed += usize::from(result.pass);
        println!(
            "{} {id} {name}: {} [{:.1}s]",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {passed}/{} criteria passed", criteria.len());
    if passed != criteria.len() {
        std::process::exit(1);
    }
}

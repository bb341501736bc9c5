use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, ExperimentKind, Problem};
use crate::empirical::mix_seed;
use crate::error::{Error, Result};
use crate::gaussian::{covariance_matrix, finite_n_value_distribution, ks_distance, limit_value_distribution, EmpiricalLaw};
use crate::objectives::true_objective;
use crate::rates::{
    lil_statistic, lil_traces, minimizer_rates_from, summarize, try_fit, DeltaRule, RateProblem,
    ReplicationRecord,
};
use crate::vc::bound_table;

/// Stream index of the limit-law draws, kept apart from every sample size.
const LIMIT_STREAM: u64 = u64::MAX;

/// Sharp-growth order used by rate experiments when the config gives none.
pub const DEFAULT_RATES_KAPPA: f64 = 2.0;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub run_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub summary: Value,
}

/// First 16 hex digits of the SHA-256 of the resolved config without its
/// output directory.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let digest = Sha256::digest(stored_config(config).to_string().as_bytes());
    hex::encode(digest)[..16].to_string()
}

/// The config as written to `config.resolved.json`: resolved, and without the
/// output directory so that a run directory can be moved.
pub fn stored_config(config: &ExperimentConfig) -> Value {
    let mut v = serde_json::to_value(config).expect("config serializes");
    if let Some(o) = v.as_object_mut() {
        o.remove("output_dir");
    }
    v
}

/// `{:.16e}`: 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

struct Output {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Output {
    fn write(&mut self, rel: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, contents)?;
        self.files.push(path);
        Ok(())
    }

    fn write_json(&mut self, rel: &str, v: &Value) -> Result<()> {
        let mut text = serde_json::to_string_pretty(v)?;
        text.push('\n');
        self.write(rel, &text)
    }
}

/// Runs the experiment, writing `results.csv`, `summary.json` and
/// `config.resolved.json` under `<output_dir>/<hash>/`.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<RunRecord> {
    let started = now_ms();
    let hash = config_hash(config);
    let mut out = Output {
        dir: config.output_dir.join(&hash),
        files: Vec::new(),
    };
    fs::create_dir_all(&out.dir)?;

    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(w) = options.workers {
            b = b.num_threads(w.max(1));
        }
        b.build().map_err(|e| Error::Numerical(format!("thread pool: {e}")))?
    };
    let summary = pool.install(|| match config.kind {
        ExperimentKind::Transfer | ExperimentKind::Rates => run_replications(config, &mut out),
        ExperimentKind::Limit => run_limit(config, &mut out),
        ExperimentKind::Lil => run_lil(config, &mut out),
        ExperimentKind::Vcbounds => run_vcbounds(config, &mut out),
    })?;

    out.write_json("summary.json", &summary)?;
    out.write_json("config.resolved.json", &stored_config(config))?;
    Ok(RunRecord {
        config_hash: hash,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        run_dir: out.dir,
        files: out.files,
        summary,
    })
}

/// Replication rows in the `results.csv` layout, ordered by `(n, rep)`.
pub fn replication_csv(family: &str, records: &[ReplicationRecord]) -> String {
    let mut rows: Vec<&ReplicationRecord> = records.iter().collect();
    rows.sort_by_key(|r| (r.n, r.rep));
    let mut s = String::from("family,n,rep,delta_n,value_gap,excess,distance,seed\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{family},{},{},{},{},{},{},{}",
            r.n,
            r.rep,
            fmt_float(r.delta_n),
            fmt_float(r.value_gap),
            fmt_float(r.excess),
            r.distance.map(fmt_float).unwrap_or_default(),
            r.seed
        );
    }
    s
}

fn run_replications(config: &ExperimentConfig, out: &mut Output) -> Result<Value> {
    let Problem { model, dist, grid } = config.problem()?;
    let kappa = match config.kind {
        ExperimentKind::Rates => Some(config.kappa.unwrap_or(DEFAULT_RATES_KAPPA)),
        _ => config.kappa,
    };
    let problem = RateProblem::new(&model, &dist, &grid, kappa)?.with_epsilon(config.epsilon)?;
    let rule = DeltaRule::new(config.delta_c)?;
    let records = problem.simulate(&config.ns, config.reps, config.seed, rule)?;
    let family = model.family().name();
    out.write("results.csv", &replication_csv(family, &records))?;

    let delta = summarize(&records, |r| Some(r.delta_n))?;
    let min_slack = records.iter().map(|r| r.min_slack).fold(f64::INFINITY, f64::min);
    let cert = problem.certificate().map(|c| {
        json!({"kappa": c.kappa, "alpha": c.alpha, "argmin": c.argmin})
    });

    if config.kind == ExperimentKind::Transfer {
        let max_delta = records.iter().map(|r| r.delta_n).fold(0.0, f64::max);
        return Ok(json!({
            "kind": "transfer",
            "family": family,
            "rows": records.len(),
            "all_checks_ok": true,
            "min_slack": min_slack,
            "max_delta_n": max_delta,
            "certificate": cert,
            "delta_n": delta,
        }));
    }

    let value = summarize(&records, |r| Some(r.value_gap))?;
    let minimizer = minimizer_rates_from(&records)?;
    let excess = summarize(&records, |r| Some(r.excess))?;
    let distance = summarize(&records, |r| r.distance)?;
    Ok(json!({
        "kind": "rates",
        "family": family,
        "rows": records.len(),
        "min_slack": min_slack,
        "certificate": cert,
        "fits": {
            "delta": try_fit(&delta),
            "value": try_fit(&value),
            "excess": minimizer.excess_fit,
            "distance": minimizer.distance_fit,
        },
        "per_n": {
            "delta": delta,
            "value": value,
            "excess": excess,
            "distance": distance,
        },
    }))
}

fn law_csv(law: &EmpiricalLaw) -> String {
    let mut s = String::from("value\n");
    for &v in law.values() {
        s.push_str(&fmt_float(v));
        s.push('\n');
    }
    s
}

/// Least-squares slope of `ys` against `xs`.
fn ols_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn run_limit(config: &ExperimentConfig, out: &mut Output) -> Result<Value> {
    let Problem { model, dist, grid } = config.problem()?;
    let f = true_objective(&model, &dist, &grid)?;
    let cov = covariance_matrix(&model, &dist, &grid)?;
    let limit = limit_value_distribution(&f, &cov, config.limit_reps, mix_seed(config.seed, LIMIT_STREAM))?;
    out.write("laws/limit.csv", &law_csv(&limit))?;

    let mut csv = String::from("n,reps,ks,finite_mean,finite_sd,finite_median,limit_mean,limit_sd\n");
    let mut per_n = Vec::new();
    for &n in &config.ns {
        let law = finite_n_value_distribution(&model, &dist, &grid, n, config.reps, mix_seed(config.seed, n as u64))?;
        let ks = ks_distance(&law, &limit);
        let _ = writeln!(
            csv,
            "{n},{},{},{},{},{},{},{}",
            config.reps,
            fmt_float(ks),
            fmt_float(law.mean()),
            fmt_float(law.variance().sqrt()),
            fmt_float(law.median()),
            fmt_float(limit.mean()),
            fmt_float(limit.variance().sqrt()),
        );
        out.write(&format!("laws/n_{n}.csv"), &law_csv(&law))?;
        per_n.push(json!({"n": n, "ks": ks, "mean": law.mean(), "variance": law.variance()}));
    }
    out.write("results.csv", &csv)?;
    let xs: Vec<f64> = config.ns.iter().map(|&n| (n as f64).log2()).collect();
    let ks: Vec<f64> = per_n.iter().map(|p| p["ks"].as_f64().unwrap()).collect();
    Ok(json!({
        "kind": "limit",
        "family": model.family().name(),
        "limit_reps": config.limit_reps,
        "limit": {"mean": limit.mean(), "variance": limit.variance()},
        "covariance_rank": cov.rank(),
        "eigen_floor_applied": cov.eigen_floor_applied(),
        "per_n": per_n,
        "ks_trend_slope": ols_slope(&xs, &ks),
    }))
}

fn run_lil(config: &ExperimentConfig, out: &mut Output) -> Result<Value> {
    let Problem { model, dist, grid } = config.problem()?;
    let traces = lil_traces(&model, &dist, &grid, &config.ns, config.reps, config.seed)?;
    let stats = lil_statistic(&traces, &config.ns, config.lil_split)?;
    let mut csv = String::from("rep,n,delta_n,normalized,seed\n");
    for (r, (trace, stat)) in traces.iter().zip(&stats).enumerate() {
        let seed = mix_seed(config.seed, r as u64);
        for ((n, d), z) in config.ns.iter().zip(trace).zip(&stat.normalized) {
            let _ = writeln!(csv, "{r},{n},{},{},{seed}", fmt_float(*d), fmt_float(*z));
        }
    }
    out.write("results.csv", &csv)?;
    let bounded = stats.iter().filter(|s| s.bounded_by(config.lil_factor)).count();
    let windows: Vec<Value> = stats
        .iter()
        .map(|s| json!({"early_max": s.early_max, "late_max": s.late_max, "ratio": s.ratio}))
        .collect();
    Ok(json!({
        "kind": "lil",
        "family": model.family().name(),
        "split": config.lil_split,
        "factor": config.lil_factor,
        "reps": config.reps,
        "bounded": bounded,
        "windows": windows,
    }))
}

fn run_vcbounds(config: &ExperimentConfig, out: &mut Output) -> Result<Value> {
    let mut csv = String::from("program,formula,m,t,q,chain_len,degree,constant,bound,floored\n");
    let mut rows = Vec::new();
    for (i, p) in config.programs.iter().enumerate() {
        for row in bound_table(p)? {
            let _ = writeln!(
                csv,
                "{i},{},{},{},{},{},{},{},{},{}",
                row.formula,
                p.m,
                p.t,
                p.q,
                p.chain_len,
                p.degree,
                p.constant.map(fmt_float).unwrap_or_default(),
                fmt_float(row.bound),
                row.floored
            );
            rows.push(json!({"program": i, "formula": row.formula, "bound": row.bound, "floored": row.floored}));
        }
    }
    out.write("results.csv", &csv)?;
    Ok(json!({"kind": "vcbounds", "rows": rows}))
}

/// Reads a CSV written by [`run_experiment`] back into memory.
pub fn read_results(run_dir: &Path) -> Result<String> {
    Ok(fs::read_to_string(run_dir.join("results.csv"))?)
}

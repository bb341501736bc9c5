use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use serde_json::{json, Value};

use saa_lab::empirical::rng_from_seed;
use saa_lab::harness::{run_experiment, validate_value, Diagnostic, RunOptions, RunRecord};
use saa_lab::transfer::{estimate_sharp_growth, transfer_report};
use saa_lab::vc::{bound_table, ProgramSpec};
use saa_lab::{eps_min_set, Error, ObjectiveTable, ParamGrid};

const EXIT_CHECK: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "saa-lab", version, about = "Sample average approximation checks and rate experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replications per sample size; overrides the config.
    #[arg(long, global = true)]
    reps: Option<u64>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by --config.
    Run,
    /// Check the transfer inequalities on one pair of objective tables.
    TransferCheck(TransferArgs),
    /// Print the VC-dimension bounds for a program class.
    VcBound(VcArgs),
    /// Compare finite-n value laws with the Gaussian limit (KS table).
    LimitSim,
    /// Fit convergence rates and print the slope table.
    Rates,
}

#[derive(Args)]
struct TransferArgs {
    /// True objective values, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    f: Option<Vec<f64>>,
    /// Empirical objective values, comma separated.
    #[arg(long = "f-hat", value_delimiter = ',', allow_hyphen_values = true)]
    f_hat: Option<Vec<f64>>,
    /// Without --f, draw random tables of this size (seeded by --seed).
    #[arg(long, default_value_t = 50)]
    size: usize,
    /// Perturbation half-width for random tables.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    /// Selected index; defaults to the lowest index in the empirical delta-minimizer set.
    #[arg(long)]
    x_hat: Option<usize>,
    /// Also check localization, with the grid 0, 1, ..., size-1.
    #[arg(long)]
    kappa: Option<f64>,
}

#[derive(Args)]
struct VcArgs {
    #[arg(long)]
    m: u64,
    #[arg(long)]
    t: u64,
    #[arg(long, default_value_t = 0)]
    q: u64,
    /// Pfaffian chain length.
    #[arg(long, default_value_t = 0)]
    chain: u64,
    #[arg(long, default_value_t = 2)]
    degree: u64,
    /// Constant of the Pfaffian bound; that row is printed only when given.
    #[arg(long)]
    constant: Option<f64>,
}

/// quad_synthetic on {-1, 0, 1} with a 201-point grid on [-1, 1].
fn default_problem() -> Value {
    json!({
        "model": {"family": "quad_synthetic", "dim": 1},
        "distribution": {"support": [[-1.0], [0.0], [1.0]]},
        "grid": {"lower": [-1.0], "upper": [1.0], "resolution": [201]},
    })
}

enum Failure {
    Config(Vec<Diagnostic>),
    Check(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::CheckFailed { .. } | Error::Membership { .. } | Error::Certificate(_) => {
                Failure::Check(e.to_string())
            }
            Error::Contract(_) | Error::Dimension { .. } | Error::GridMismatch | Error::Json(_) => {
                Failure::Config(vec![Diagnostic {
                    path: String::new(),
                    message: e.to_string(),
                }])
            }
            Error::Io(_) | Error::Numerical(_) => Failure::Other(e.to_string()),
        }
    }
}

fn config_error(path: &str, message: impl Into<String>) -> Failure {
    Failure::Config(vec![Diagnostic {
        path: path.to_string(),
        message: message.into(),
    }])
}

fn load_config(global: &Global, kind: Option<&str>) -> Result<Value, Failure> {
    let mut raw = match &global.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_error("", format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str::<Value>(&text)
                .map_err(|e| config_error("", format!("invalid JSON in {}: {e}", path.display())))?
        }
        None if kind.is_some() => default_problem(),
        None => return Err(config_error("", "--config is required")),
    };
    let Some(obj) = raw.as_object_mut() else {
        return Err(config_error("", "config must be a JSON object"));
    };
    if let Some(kind) = kind {
        obj.insert("kind".into(), json!(kind));
    }
    if let Some(seed) = global.seed {
        obj.insert("seed".into(), json!(seed));
    }
    if let Some(reps) = global.reps {
        obj.insert("reps".into(), json!(reps));
    }
    if let Some(out) = &global.out {
        obj.insert("output_dir".into(), json!(out.to_string_lossy()));
    }
    Ok(raw)
}

fn execute(global: &Global, kind: Option<&str>) -> Result<RunRecord, Failure> {
    let raw = load_config(global, kind)?;
    let config = validate_value(&raw).map_err(Failure::Config)?;
    let options = RunOptions {
        workers: global.workers,
    };
    Ok(run_experiment(&config, &options)?)
}

fn fmt_opt(v: &Value) -> String {
    v.as_f64().map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn cmd_run(global: &Global) -> Result<(), Failure> {
    let rec = execute(global, None)?;
    if !global.quiet {
        println!("run {} -> {}", rec.config_hash, rec.run_dir.display());
        for f in &rec.files {
            println!("  {}", f.display());
        }
    }
    Ok(())
}

fn cmd_rates(global: &Global) -> Result<(), Failure> {
    let rec = execute(global, Some("rates"))?;
    if !global.quiet {
        println!("run {} -> {}", rec.config_hash, rec.run_dir.display());
        println!("{:<10} {:>10} {:>10} {:>8}", "metric", "slope", "intercept", "r2");
        for metric in ["delta", "value", "excess", "distance"] {
            let fit = &rec.summary["fits"][metric];
            println!(
                "{:<10} {:>10} {:>10} {:>8}",
                metric,
                fmt_opt(&fit["slope"]),
                fmt_opt(&fit["intercept"]),
                fmt_opt(&fit["r_squared"])
            );
        }
    }
    Ok(())
}

fn cmd_limit(global: &Global) -> Result<(), Failure> {
    let rec = execute(global, Some("limit"))?;
    if !global.quiet {
        println!("run {} -> {}", rec.config_hash, rec.run_dir.display());
        println!("{:>8} {:>10} {:>12} {:>12}", "n", "ks", "mean", "variance");
        for p in rec.summary["per_n"].as_array().into_iter().flatten() {
            println!(
                "{:>8} {:>10} {:>12} {:>12}",
                p["n"].as_u64().map_or("-".to_string(), |n| n.to_string()),
                fmt_opt(&p["ks"]),
                fmt_opt(&p["mean"]),
                fmt_opt(&p["variance"])
            );
        }
        let limit = &rec.summary["limit"];
        println!("{:>8} {:>10} {:>12} {:>12}", "limit", "", fmt_opt(&limit["mean"]), fmt_opt(&limit["variance"]));
    }
    Ok(())
}

fn cmd_vc(global: &Global, a: &VcArgs) -> Result<(), Failure> {
    let mut spec = ProgramSpec::new(a.m, a.t).with_q(a.q);
    spec.chain_len = a.chain;
    spec.degree = a.degree;
    spec.constant = a.constant;
    let rows = bound_table(&spec)?;
    if !global.quiet {
        println!(
            "inputs: m={} t={} q={} chain={} degree={} constant={}",
            a.m,
            a.t,
            a.q,
            a.chain,
            a.degree,
            a.constant.map_or("-".to_string(), |c| c.to_string())
        );
        println!("{:<14} {:>16} {:>10}", "formula", "bound", "floored");
        for r in rows {
            println!("{:<14} {:>16.6} {:>10}", r.formula, r.bound, r.floored);
        }
    }
    Ok(())
}

fn random_tables(size: usize, noise: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = rng_from_seed(seed);
    // Coarse levels so that ties in f are common.
    let f: Vec<f64> = (0..size).map(|_| rng.random_range(0..8) as f64 * 0.125).collect();
    let f_hat = f.iter().map(|v| v + rng.random_range(-noise..=noise)).collect();
    (f, f_hat)
}

fn cmd_transfer(global: &Global, a: &TransferArgs) -> Result<(), Failure> {
    let (f, f_hat) = match (&a.f, &a.f_hat) {
        (Some(f), Some(fh)) => (f.clone(), fh.clone()),
        (None, None) => {
            if a.size == 0 || !(a.noise >= 0.0) {
                return Err(config_error("size", "random tables need size >= 1 and noise >= 0"));
            }
            random_tables(a.size, a.noise, global.seed.unwrap_or(0))
        }
        _ => return Err(config_error("f-hat", "--f and --f-hat must be given together")),
    };
    if f.len() != f_hat.len() {
        return Err(config_error("f-hat", format!("{} values for {} grid points", f_hat.len(), f.len())));
    }
    let grid = ParamGrid::from_points((0..f.len()).map(|i| vec![i as f64]).collect())?;
    let ft = ObjectiveTable::on_grid(&grid, f)?;
    let fht = ObjectiveTable::on_grid(&grid, f_hat)?;
    let x_hat = match a.x_hat {
        Some(i) => i,
        None => eps_min_set(&fht, a.delta)?.members[0],
    };
    let cert = a.kappa.map(|k| estimate_sharp_growth(&ft, &grid, k)).transpose()?;
    let report = transfer_report(&ft, &fht, cert.as_ref().map(|c| (c, &grid)), x_hat, a.epsilon, a.delta)?;
    if !global.quiet {
        println!("delta_n = {:.6e}, x_hat = {x_hat}", report.delta_n);
        println!("{:<24} {:>14} {:>14} {:>4}", "check", "value", "bound", "ok");
        println!("{:<24} {:>14.6e} {:>14.6e} {:>4}", "value perturbation", report.value.value, report.value.bound, report.value.ok);
        println!("{:<24} {:>14} {:>14.6e} {:>4}", "forward inclusion", "", report.eps_transfer.forward_slack, report.eps_transfer.forward_ok);
        println!("{:<24} {:>14} {:>14.6e} {:>4}", "backward inclusion", "", report.eps_transfer.backward_slack, report.eps_transfer.backward_ok);
        println!("{:<24} {:>14.6e} {:>14.6e} {:>4}", "excess risk", report.excess.value, report.excess.bound, report.excess.ok);
        if let Some(d) = &report.distance {
            println!("{:<24} {:>14.6e} {:>14.6e} {:>4}", "distance localization", d.value, d.bound, d.ok);
        }
    }
    if report.all_ok() {
        Ok(())
    } else {
        Err(Failure::Check(format!("failed: {}", report.failures().join(", "))))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = &cli.global;
    let result = match &cli.command {
        Command::Run => cmd_run(g),
        Command::TransferCheck(a) => cmd_transfer(g, a),
        Command::VcBound(a) => cmd_vc(g, a),
        Command::LimitSim => cmd_limit(g),
        Command::Rates => cmd_rates(g),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(diags)) => {
            for d in diags {
                if d.path.is_empty() {
                    eprintln!("config error: {}", d.message);
                } else {
                    eprintln!("config error: {d}");
                }
            }
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(EXIT_CHECK)
        }
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CHECK)
        }
    }
}

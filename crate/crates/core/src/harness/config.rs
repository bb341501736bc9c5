//! Experiment configuration: parsing, defaults and cross-validation.
//!
//! Configs are JSON objects. Every problem found is reported with the path of
//! the offending field, and all of them are collected before returning.

use std::fmt;
use std::path::PathBuf;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::gaussian::MAX_GRID_POINTS;
use crate::objectives::{Contrast, DataDistribution, LossModel, ParamGrid, Rational};
use crate::vc::ProgramSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Transfer,
    Rates,
    Limit,
    Lil,
    Vcbounds,
}

impl ExperimentKind {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "transfer" => Self::Transfer,
            "rates" => Self::Rates,
            "limit" => Self::Limit,
            "lil" => Self::Lil,
            "vcbounds" => Self::Vcbounds,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Transfer => "transfer",
            Self::Rates => "rates",
            Self::Limit => "limit",
            Self::Lil => "lil",
            Self::Vcbounds => "vcbounds",
        }
    }

    fn needs_problem(self) -> bool {
        self != Self::Vcbounds
    }

    fn default_ns(self) -> Vec<usize> {
        let pow = |lo: u32, hi: u32, step: usize| (lo..=hi).step_by(step).map(|k| 1usize << k).collect();
        match self {
            Self::Limit => pow(6, 14, 2),
            Self::Lil => pow(4, 16, 1),
            _ => pow(6, 14, 1),
        }
    }
}

/// One validation problem, addressed by a dotted field path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionSpec {
    pub support: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum GridSpec {
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
        resolution: Vec<usize>,
    },
    Points {
        points: Vec<Vec<f64>>,
    },
}

impl GridSpec {
    pub fn build(&self) -> crate::Result<ParamGrid> {
        match self {
            GridSpec::Box {
                lower,
                upper,
                resolution,
            } => ParamGrid::from_box(lower.clone(), upper.clone(), resolution.clone()),
            GridSpec::Points { points } => ParamGrid::from_points(points.clone()),
        }
    }
}

/// A validated experiment. Field order is the serialization order of
/// `config.resolved.json`; everything except `output_dir` enters the config
/// hash.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub model: Option<LossModel>,
    pub distribution: Option<DistributionSpec>,
    pub grid: Option<GridSpec>,
    pub ns: Vec<usize>,
    pub reps: usize,
    /// `δₙ = delta_c / √n`.
    pub delta_c: f64,
    pub epsilon: f64,
    pub kappa: Option<f64>,
    pub limit_reps: usize,
    pub lil_split: usize,
    pub lil_factor: f64,
    pub programs: Vec<ProgramSpec>,
    pub output_dir: PathBuf,
}

/// The model, law and grid of a validated config.
pub struct Problem {
    pub model: LossModel,
    pub dist: DataDistribution,
    pub grid: ParamGrid,
}

impl ExperimentConfig {
    pub fn problem(&self) -> crate::Result<Problem> {
        let missing = || crate::Error::Contract(format!("{} experiments need model, distribution and grid", self.kind.name()));
        let model = self.model.clone().ok_or_else(missing)?;
        let d = self.distribution.as_ref().ok_or_else(missing)?;
        let dist = DataDistribution::new(d.support.clone(), d.weights.clone())?;
        let grid = self.grid.as_ref().ok_or_else(missing)?.build()?;
        Ok(Problem { model, dist, grid })
    }
}

const TOP_LEVEL_KEYS: &[&str] = &[
    "kind",
    "seed",
    "model",
    "distribution",
    "grid",
    "ns",
    "reps",
    "delta_c",
    "epsilon",
    "kappa",
    "limit_reps",
    "lil_split",
    "lil_factor",
    "programs",
    "output_dir",
];

struct Ctx {
    diags: Vec<Diagnostic>,
}

impl Ctx {
    fn err(&mut self, path: &str, message: impl Into<String>) {
        self.diags.push(Diagnostic {
            path: path.to_string(),
            message: message.into(),
        });
    }

    fn number(&mut self, v: &Value, path: &str) -> Option<f64> {
        match v.as_f64() {
            Some(x) if x.is_finite() => Some(x),
            _ => {
                self.err(path, "expected a finite number");
                None
            }
        }
    }

    fn count(&mut self, v: &Value, path: &str) -> Option<usize> {
        match v.as_u64() {
            Some(x) => Some(x as usize),
            None => {
                self.err(path, "expected a nonnegative integer");
                None
            }
        }
    }

    fn vector(&mut self, v: &Value, path: &str) -> Option<Vec<f64>> {
        let Some(items) = v.as_array() else {
            self.err(path, "expected an array of numbers");
            return None;
        };
        let out: Vec<Option<f64>> = items
            .iter()
            .enumerate()
            .map(|(i, x)| self.number(x, &format!("{path}[{i}]")))
            .collect();
        out.into_iter().collect()
    }

    fn counts(&mut self, v: &Value, path: &str) -> Option<Vec<usize>> {
        let Some(items) = v.as_array() else {
            self.err(path, "expected an array of integers");
            return None;
        };
        let out: Vec<Option<usize>> = items
            .iter()
            .enumerate()
            .map(|(i, x)| self.count(x, &format!("{path}[{i}]")))
            .collect();
        out.into_iter().collect()
    }

    fn matrix(&mut self, v: &Value, path: &str) -> Option<Vec<Vec<f64>>> {
        let Some(rows) = v.as_array() else {
            self.err(path, "expected an array of points");
            return None;
        };
        let out: Vec<Option<Vec<f64>>> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| self.vector(r, &format!("{path}[{i}]")))
            .collect();
        out.into_iter().collect()
    }

    fn object<'v>(&mut self, v: &'v Value, path: &str) -> Option<&'v Map<String, Value>> {
        let o = v.as_object();
        if o.is_none() {
            self.err(path, "expected an object");
        }
        o
    }

    fn required<'v>(&mut self, obj: &'v Map<String, Value>, key: &str, path: &str) -> Option<&'v Value> {
        let v = obj.get(key);
        if v.is_none() {
            self.err(&join(path, key), "required field is missing");
        }
        v
    }

    fn unknown_keys(&mut self, obj: &Map<String, Value>, allowed: &[&str], path: &str) {
        for k in obj.keys() {
            if !allowed.contains(&k.as_str()) {
                self.err(&join(path, k), "unknown field");
            }
        }
    }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

/// Accepts a decimal (`0.5`), a string (`"1/2"`) or a pair (`[1, 2]`).
fn parse_rational(ctx: &mut Ctx, v: &Value, path: &str) -> Option<Rational> {
    let parsed = match v {
        Value::Number(_) => v
            .as_f64()
            .ok_or_else(|| "expected a number".to_string())
            .and_then(|p| Rational::from_decimal(p).map_err(|e| e.to_string())),
        Value::String(s) => match s.split_once('/') {
            Some((a, b)) => match (a.trim().parse::<u32>(), b.trim().parse::<u32>()) {
                (Ok(a), Ok(b)) => Rational::new(a, b).map_err(|e| e.to_string()),
                _ => Err(format!("cannot parse {s:?} as r/s")),
            },
            None => s
                .trim()
                .parse::<f64>()
                .map_err(|_| format!("cannot parse {s:?} as a rational"))
                .and_then(|p| Rational::from_decimal(p).map_err(|e| e.to_string())),
        },
        Value::Array(pair) if pair.len() == 2 => match (pair[0].as_u64(), pair[1].as_u64()) {
            (Some(a), Some(b)) if a <= u32::MAX as u64 && b <= u32::MAX as u64 => {
                Rational::new(a as u32, b as u32).map_err(|e| e.to_string())
            }
            _ => Err("expected two nonnegative integers [r, s]".to_string()),
        },
        _ => Err("expected a decimal, \"r/s\" or [r, s]".to_string()),
    };
    match parsed {
        Ok(r) => Some(r),
        Err(m) => {
            ctx.err(path, m);
            None
        }
    }
}

fn parse_model(ctx: &mut Ctx, v: &Value) -> Option<LossModel> {
    let path = "model";
    let obj = ctx.object(v, path)?;
    let family = ctx.required(obj, "family", path)?;
    let Some(family) = family.as_str() else {
        ctx.err("model.family", "expected a string");
        return None;
    };
    let field = |ctx: &mut Ctx, key: &str| -> Option<usize> {
        let v = ctx.required(obj, key, path)?;
        ctx.count(v, &join(path, key))
    };
    let (model, keys): (Option<LossModel>, &[&str]) = match family {
        "perceptron" => (
            field(ctx, "features").map(|features| LossModel::Perceptron { features }),
            &["family", "features"],
        ),
        "relu_net" => {
            let features = field(ctx, "features");
            let width = field(ctx, "width");
            (
                features
                    .zip(width)
                    .map(|(features, width)| LossModel::ReluNet { features, width }),
                &["family", "features", "width"],
            )
        }
        "threshold_reg" => {
            let regressors = field(ctx, "regressors");
            let contrast = match obj.get("contrast").map(|c| c.as_str()) {
                None => Some(Contrast::Square),
                Some(Some("square")) => Some(Contrast::Square),
                Some(Some("abs")) => Some(Contrast::Abs),
                Some(_) => {
                    ctx.err("model.contrast", "expected \"square\" or \"abs\"");
                    None
                }
            };
            (
                regressors
                    .zip(contrast)
                    .map(|(regressors, contrast)| LossModel::ThresholdReg {
                        regressors,
                        contrast,
                    }),
                &["family", "regressors", "contrast"],
            )
        }
        "lp_svr" => {
            let features = field(ctx, "features");
            let c = ctx
                .required(obj, "c", path)
                .and_then(|v| ctx.number(v, "model.c"));
            let lambda = ctx
                .required(obj, "lambda", path)
                .and_then(|v| ctx.number(v, "model.lambda"));
            let p = ctx
                .required(obj, "p", path)
                .and_then(|v| parse_rational(ctx, v, "model.p"));
            let model = match (features, c, lambda, p) {
                (Some(features), Some(c), Some(lambda), Some(p)) => Some(LossModel::LpSvr {
                    features,
                    c,
                    lambda,
                    p,
                }),
                _ => None,
            };
            (model, &["family", "features", "c", "lambda", "p"])
        }
        "quad_synthetic" => (
            field(ctx, "dim").map(|dim| LossModel::QuadSynthetic { dim }),
            &["family", "dim"],
        ),
        "gap_synthetic" => (Some(LossModel::GapSynthetic), &["family"]),
        other => {
            ctx.err("model.family", format!("unknown family {other:?}"));
            return None;
        }
    };
    ctx.unknown_keys(obj, keys, path);
    let model = model?;
    if let Err(e) = model.validate() {
        ctx.err(path, e.to_string());
        return None;
    }
    Some(model)
}

fn parse_distribution(ctx: &mut Ctx, v: &Value) -> Option<(DistributionSpec, DataDistribution)> {
    let path = "distribution";
    let obj = ctx.object(v, path)?;
    ctx.unknown_keys(obj, &["support", "weights"], path);
    let support = ctx
        .required(obj, "support", path)
        .and_then(|s| ctx.matrix(s, "distribution.support"))?;
    let dist = match obj.get("weights") {
        None => DataDistribution::uniform(support.clone()),
        Some(w) => {
            let w = ctx.vector(w, "distribution.weights")?;
            DataDistribution::new(support.clone(), w)
        }
    };
    match dist {
        Ok(d) => Some((
            DistributionSpec {
                support,
                weights: d.weights().to_vec(),
            },
            d,
        )),
        Err(e) => {
            ctx.err(path, e.to_string());
            None
        }
    }
}

fn parse_grid(ctx: &mut Ctx, v: &Value) -> Option<(GridSpec, ParamGrid)> {
    let path = "grid";
    let obj = ctx.object(v, path)?;
    let spec = if obj.contains_key("points") {
        ctx.unknown_keys(obj, &["points"], path);
        let points = ctx.matrix(&obj["points"], "grid.points")?;
        GridSpec::Points { points }
    } else {
        ctx.unknown_keys(obj, &["lower", "upper", "resolution"], path);
        let lower = ctx
            .required(obj, "lower", path)
            .and_then(|x| ctx.vector(x, "grid.lower"));
        let upper = ctx
            .required(obj, "upper", path)
            .and_then(|x| ctx.vector(x, "grid.upper"));
        let resolution = ctx
            .required(obj, "resolution", path)
            .and_then(|x| ctx.counts(x, "grid.resolution"));
        GridSpec::Box {
            lower: lower?,
            upper: upper?,
            resolution: resolution?,
        }
    };
    match spec.build() {
        Ok(g) => Some((spec, g)),
        Err(e) => {
            ctx.err(path, e.to_string());
            None
        }
    }
}

fn parse_program(ctx: &mut Ctx, v: &Value, path: &str) -> Option<ProgramSpec> {
    match serde_json::from_value::<ProgramSpec>(v.clone()) {
        Ok(p) => {
            if p.m < 1 {
                ctx.err(&join(path, "m"), "must be >= 1");
            }
            if p.t < 1 {
                ctx.err(&join(path, "t"), "must be >= 1");
            }
            if p.degree < 2 {
                ctx.err(&join(path, "degree"), "must be >= 2");
            }
            if let Some(c) = p.constant {
                if !(c > 0.0 && c.is_finite()) {
                    ctx.err(&join(path, "constant"), "must be positive");
                }
            }
            Some(p)
        }
        Err(e) => {
            ctx.err(path, e.to_string());
            None
        }
    }
}

/// Parses and cross-validates a JSON config.
pub fn validate_config(raw: &str) -> Result<ExperimentConfig, Vec<Diagnostic>> {
    match serde_json::from_str::<Value>(raw) {
        Ok(v) => validate_value(&v),
        Err(e) => Err(vec![Diagnostic {
            path: String::new(),
            message: format!("invalid JSON: {e}"),
        }]),
    }
}

/// Same as [`validate_config`] on an already parsed tree.
pub fn validate_value(raw: &Value) -> Result<ExperimentConfig, Vec<Diagnostic>> {
    let mut ctx = Ctx { diags: Vec::new() };
    let Some(root) = ctx.object(raw, "") else {
        return Err(ctx.diags);
    };
    ctx.unknown_keys(root, TOP_LEVEL_KEYS, "");

    let kind = match root.get("kind").map(|k| k.as_str().and_then(ExperimentKind::parse)) {
        None => {
            ctx.err("kind", "required field is missing");
            None
        }
        Some(None) => {
            ctx.err("kind", "expected one of transfer, rates, limit, lil, vcbounds");
            None
        }
        Some(k) => k,
    };
    let seed = match root.get("seed") {
        None => {
            ctx.err("seed", "required field is missing; every run needs a master seed");
            None
        }
        Some(s) => s.as_u64().or_else(|| {
            ctx.err("seed", "expected an unsigned 64-bit integer");
            None
        }),
    };

    let count_or = |ctx: &mut Ctx, key: &str, default: usize| -> Option<usize> {
        root.get(key).map_or(Some(default), |v| ctx.count(v, key))
    };
    let number_or = |ctx: &mut Ctx, key: &str, default: f64| -> Option<f64> {
        root.get(key).map_or(Some(default), |v| ctx.number(v, key))
    };

    let reps = count_or(&mut ctx, "reps", 200);
    if reps == Some(0) {
        ctx.err("reps", "must be >= 1");
    }
    let limit_reps = count_or(&mut ctx, "limit_reps", 10_000);
    if limit_reps == Some(0) {
        ctx.err("limit_reps", "must be >= 1");
    }
    let lil_split = count_or(&mut ctx, "lil_split", 1024);
    let lil_factor = number_or(&mut ctx, "lil_factor", 2.0);
    if lil_factor.is_some_and(|f| f <= 0.0) {
        ctx.err("lil_factor", "must be positive");
    }
    let delta_c = number_or(&mut ctx, "delta_c", 0.0);
    if delta_c.is_some_and(|c| c < 0.0) {
        ctx.err("delta_c", "the tolerance constant c in c/sqrt(n) must be >= 0");
    }
    let epsilon = number_or(&mut ctx, "epsilon", 0.0);
    if epsilon.is_some_and(|e| e < 0.0) {
        ctx.err("epsilon", "must be >= 0");
    }
    let kappa = match root.get("kappa") {
        None | Some(Value::Null) => Some(None),
        Some(v) => match ctx.number(v, "kappa") {
            Some(k) if k >= 1.0 => Some(Some(k)),
            Some(k) => {
                ctx.err(
                    "kappa",
                    format!("sharp-growth order must satisfy kappa >= 1, got {k}"),
                );
                None
            }
            None => None,
        },
    };

    let ns = match (root.get("ns"), kind) {
        (Some(v), _) => ctx.counts(v, "ns"),
        (None, Some(k)) => Some(k.default_ns()),
        (None, None) => None,
    };
    if let Some(ns) = &ns {
        if ns.is_empty() && kind.is_some_and(|k| k.needs_problem()) {
            ctx.err("ns", "must not be empty");
        }
        if ns.contains(&0) {
            ctx.err("ns", "sample sizes must be >= 1");
        }
        if ns.windows(2).any(|w| w[0] >= w[1]) {
            ctx.err("ns", "sample sizes must be strictly increasing");
        }
    }

    let output_dir = match root.get("output_dir") {
        None => Some(PathBuf::from("runs")),
        Some(Value::String(s)) if !s.is_empty() => Some(PathBuf::from(s)),
        Some(_) => {
            ctx.err("output_dir", "expected a nonempty path string");
            None
        }
    };

    let programs = match root.get("programs") {
        None => Some(Vec::new()),
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, p)| parse_program(&mut ctx, p, &format!("programs[{i}]")))
            .collect::<Vec<_>>()
            .into_iter()
            .collect(),
        Some(_) => {
            ctx.err("programs", "expected an array of program specs");
            None
        }
    };

    let needs_problem = kind.is_none_or(|k| k.needs_problem());
    let section = |ctx: &mut Ctx, key: &str| -> Option<&Value> {
        let v = root.get(key).filter(|v| !v.is_null());
        if v.is_none() && needs_problem {
            ctx.err(key, "required field is missing");
        }
        v
    };
    let model = section(&mut ctx, "model").and_then(|v| parse_model(&mut ctx, v));
    let dist = section(&mut ctx, "distribution").and_then(|v| parse_distribution(&mut ctx, v));
    let grid = section(&mut ctx, "grid").and_then(|v| parse_grid(&mut ctx, v));

    if let (Some(m), Some((_, d)), Some((_, g))) = (&model, &dist, &grid) {
        if g.dim() != m.param_dim() {
            ctx.err(
                "grid",
                format!("{} needs {}-dimensional parameters, grid has {}", m.family(), m.param_dim(), g.dim()),
            );
        }
        if d.dim() != m.data_dim() {
            ctx.err(
                "distribution.support",
                format!("{} needs {}-dimensional data points, support has {}", m.family(), m.data_dim(), d.dim()),
            );
        }
    }

    if let (Some(kind), Some(ns)) = (kind, &ns) {
        match kind {
            ExperimentKind::Limit => {
                if let Some((_, g)) = &grid {
                    if g.len() > MAX_GRID_POINTS {
                        ctx.err(
                            "grid",
                            format!("limit experiments support at most {MAX_GRID_POINTS} grid points, got {}", g.len()),
                        );
                    }
                }
            }
            ExperimentKind::Lil => {
                if let Some(split) = lil_split {
                    if !ns.iter().any(|&n| n <= split) || !ns.iter().any(|&n| n >= split) {
                        ctx.err("lil_split", "must leave sample sizes on both sides of the split");
                    }
                }
            }
            ExperimentKind::Vcbounds => {
                if programs.as_ref().is_some_and(Vec::is_empty) {
                    ctx.err("programs", "vcbounds experiments need at least one program");
                }
            }
            _ => {}
        }
    }
    if !ctx.diags.is_empty() {
        return Err(ctx.diags);
    }
    // Every field is Some once no diagnostic has been recorded.
    Ok(ExperimentConfig {
        kind: kind.unwrap(),
        seed: seed.unwrap(),
        model,
        distribution: dist.map(|(spec, _)| spec),
        grid: grid.map(|(spec, _)| spec),
        ns: ns.unwrap(),
        reps: reps.unwrap(),
        delta_c: delta_c.unwrap(),
        epsilon: epsilon.unwrap(),
        kappa: kappa.unwrap(),
        limit_reps: limit_reps.unwrap(),
        lil_split: lil_split.unwrap(),
        lil_factor: lil_factor.unwrap(),
        programs: programs.unwrap(),
        output_dir: output_dir.unwrap(),
    })
}

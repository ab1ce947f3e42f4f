//! Search-space grammar and random-search tuning.
//!
//! A leaf of an `opt_space` document is either a constant or a tagged array:
//! `["uniform", lo, hi]`, `["loguniform", lo, hi]`, `["int", lo, hi]`,
//! `["categorical", v...]`, `["$mlp_d_layers", n_min, n_max, w_min, w_max]`,
//! or any of the first four with a `?` prefix and a leading default value,
//! e.g. `["?uniform", 0.0, 0.0, 0.5]`.

mod config;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{Map, Value};

pub use config::{builtin_default, builtin_space, read_config_text, ModelConfig};

use crate::data::TaskType;
use crate::error::{Error, Result};
use crate::eval::validation_score;
use crate::methods::{Design, FitContext, MethodEntry, Params};

const MLP_D_LAYERS: &str = "$mlp_d_layers";

#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
    Int { lo: i64, hi: i64 },
    Categorical(Vec<Value>),
    /// `n` equal widths, `n` uniform in `[n_min, n_max]`, width log-uniform
    /// in `[w_min, w_max]` and rounded.
    MlpDLayers { n_min: i64, n_max: i64, w_min: i64, w_max: i64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpaceLeaf {
    Fixed(Value),
    Sample(Distribution),
    /// Emits `default` or a draw from `dist` with equal probability.
    Optional { default: Value, dist: Distribution },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub model_name: String,
    /// group name (`model`, `training`) -> hyperparameter -> leaf
    pub groups: BTreeMap<String, BTreeMap<String, SpaceLeaf>>,
}

fn space_err(path: &str, message: impl Into<String>) -> Error {
    Error::Space {
        path: path.to_string(),
        message: message.into(),
    }
}

fn number(path: &str, v: &Value) -> Result<f64> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| space_err(path, format!("expected a finite number, found {v}")))
}

fn integer(path: &str, v: &Value) -> Result<i64> {
    if let Some(i) = v.as_i64() {
        return Ok(i);
    }
    match v.as_f64() {
        Some(x) if x.fract() == 0.0 && x.abs() < 9e15 => Ok(x as i64),
        _ => Err(space_err(path, format!("expected an integer, found {v}"))),
    }
}

fn parse_distribution(path: &str, tag: &str, args: &[Value]) -> Result<Distribution> {
    let arity = |n: usize| -> Result<()> {
        if args.len() == n {
            Ok(())
        } else {
            Err(space_err(path, format!("`{tag}` takes {n} arguments, found {}", args.len())))
        }
    };
    match tag {
        "uniform" | "loguniform" => {
            arity(2)?;
            let (lo, hi) = (number(path, &args[0])?, number(path, &args[1])?);
            if lo > hi {
                return Err(space_err(path, format!("lower bound {lo} exceeds upper bound {hi}")));
            }
            if tag == "uniform" {
                Ok(Distribution::Uniform { lo, hi })
            } else if lo <= 0.0 {
                Err(space_err(path, format!("loguniform needs a positive lower bound, found {lo}")))
            } else {
                Ok(Distribution::LogUniform { lo, hi })
            }
        }
        "int" => {
            arity(2)?;
            let (lo, hi) = (integer(path, &args[0])?, integer(path, &args[1])?);
            if lo > hi {
                return Err(space_err(path, format!("lower bound {lo} exceeds upper bound {hi}")));
            }
            Ok(Distribution::Int { lo, hi })
        }
        "categorical" => {
            if args.is_empty() {
                return Err(space_err(path, "categorical needs at least one choice"));
            }
            Ok(Distribution::Categorical(args.to_vec()))
        }
        MLP_D_LAYERS => {
            arity(4)?;
            let v: Vec<i64> = args.iter().map(|a| integer(path, a)).collect::<Result<_>>()?;
            let (n_min, n_max, w_min, w_max) = (v[0], v[1], v[2], v[3]);
            if n_min < 0 || n_min > n_max || w_min < 1 || w_min > w_max {
                return Err(space_err(path, format!("invalid layer bounds {v:?}")));
            }
            Ok(Distribution::MlpDLayers { n_min, n_max, w_min, w_max })
        }
        _ => Err(space_err(path, format!("unknown distribution tag `{tag}`"))),
    }
}

fn parse_leaf(path: &str, v: &Value) -> Result<SpaceLeaf> {
    let Some((Value::String(tag), rest)) = v.as_array().and_then(|a| a.split_first()) else {
        return Ok(SpaceLeaf::Fixed(v.clone()));
    };
    if let Some(base) = tag.strip_prefix('?') {
        if base == MLP_D_LAYERS {
            return Err(space_err(path, "`$mlp_d_layers` cannot be optional"));
        }
        let (default, args) = rest
            .split_first()
            .ok_or_else(|| space_err(path, format!("`{tag}` needs a leading default value")))?;
        return Ok(SpaceLeaf::Optional {
            default: default.clone(),
            dist: parse_distribution(path, base, args)?,
        });
    }
    Ok(SpaceLeaf::Sample(parse_distribution(path, tag, rest)?))
}

fn f64_value(x: f64) -> Value {
    Value::from(x)
}

impl Distribution {
    fn tag(&self) -> &'static str {
        match self {
            Self::Uniform { .. } => "uniform",
            Self::LogUniform { .. } => "loguniform",
            Self::Int { .. } => "int",
            Self::Categorical(_) => "categorical",
            Self::MlpDLayers { .. } => MLP_D_LAYERS,
        }
    }

    fn args(&self) -> Vec<Value> {
        match self {
            Self::Uniform { lo, hi } | Self::LogUniform { lo, hi } => vec![f64_value(*lo), f64_value(*hi)],
            Self::Int { lo, hi } => vec![Value::from(*lo), Value::from(*hi)],
            Self::Categorical(v) => v.clone(),
            Self::MlpDLayers { n_min, n_max, w_min, w_max } => {
                [n_min, n_max, w_min, w_max].iter().map(|&&x| Value::from(x)).collect()
            }
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Value {
        match self {
            Self::Uniform { lo, hi } => f64_value(if lo == hi { *lo } else { rng.gen_range(*lo..*hi) }),
            Self::LogUniform { lo, hi } => f64_value(log_uniform(*lo, *hi, rng)),
            Self::Int { lo, hi } => Value::from(rng.gen_range(*lo..=*hi)),
            Self::Categorical(v) => v[rng.gen_range(0..v.len())].clone(),
            Self::MlpDLayers { n_min, n_max, w_min, w_max } => {
                let n = rng.gen_range(*n_min..=*n_max);
                let w = (log_uniform(*w_min as f64, *w_max as f64, rng).round() as i64).clamp(*w_min, *w_max);
                Value::Array((0..n).map(|_| Value::from(w)).collect())
            }
        }
    }
}

fn log_uniform(lo: f64, hi: f64, rng: &mut impl Rng) -> f64 {
    if lo == hi {
        return lo;
    }
    rng.gen_range(lo.ln()..hi.ln()).exp().clamp(lo, hi)
}

impl SpaceLeaf {
    fn to_value(&self) -> Value {
        match self {
            Self::Fixed(v) => v.clone(),
            Self::Sample(d) => {
                let mut a = vec![Value::from(d.tag())];
                a.extend(d.args());
                Value::Array(a)
            }
            Self::Optional { default, dist } => {
                let mut a = vec![Value::from(format!("?{}", dist.tag())), default.clone()];
                a.extend(dist.args());
                Value::Array(a)
            }
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> Value {
        match self {
            Self::Fixed(v) => v.clone(),
            Self::Sample(d) => d.sample(rng),
            Self::Optional { default, dist } => {
                if rng.gen_bool(0.5) {
                    default.clone()
                } else {
                    dist.sample(rng)
                }
            }
        }
    }
}

pub fn parse_space(text: &str) -> Result<SearchSpace> {
    SearchSpace::from_value(&serde_json::from_str(text)?)
}

impl SearchSpace {
    pub fn from_value(doc: &Value) -> Result<Self> {
        let (model_name, body) = config::unwrap_document(doc)?;
        let mut groups = BTreeMap::new();
        for (g, params) in body {
            let path = format!("{model_name}.{g}");
            let params = params
                .as_object()
                .ok_or_else(|| space_err(&path, "group must be an object"))?;
            let mut leaves = BTreeMap::new();
            for (k, v) in params {
                leaves.insert(k.clone(), parse_leaf(&format!("{path}.{k}"), v)?);
            }
            groups.insert(g.clone(), leaves);
        }
        Ok(Self { model_name, groups })
    }

    pub fn to_value(&self) -> Value {
        let body: Map<String, Value> = self
            .groups
            .iter()
            .map(|(g, leaves)| {
                let m: Map<String, Value> = leaves.iter().map(|(k, l)| (k.clone(), l.to_value())).collect();
                (g.clone(), Value::Object(m))
            })
            .collect();
        let mut top = Map::new();
        top.insert(self.model_name.clone(), Value::Object(body));
        Value::Object(top)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_value()).expect("values are serializable")
    }

    /// Draws every leaf into `base`, keeping `base`'s values for keys the
    /// space does not mention.
    pub fn sample_into(&self, base: &ModelConfig, seed: u64) -> ModelConfig {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = base.clone();
        for (g, leaves) in &self.groups {
            for (k, leaf) in leaves {
                let v = leaf.sample(&mut rng);
                match out.group_mut(g) {
                    Some(group) => {
                        group.insert(k.clone(), v);
                    }
                    None => out.set(k, v),
                }
            }
        }
        out
    }
}

/// One assignment drawn from `space`; deterministic per seed.
pub fn sample_trial(space: &SearchSpace, seed: u64) -> ModelConfig {
    space.sample_into(&ModelConfig::empty(&space.model_name), seed)
}

/// Seed used to draw trial `index` from a run seed.
pub fn trial_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub index: usize,
    pub assignment: ModelConfig,
    /// Validation accuracy or RMSE; `None` when the trial failed.
    pub score: Option<f64>,
    pub error: Option<String>,
    /// 1 is best; failed trials are unranked.
    pub rank: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub best: ModelConfig,
    pub best_index: usize,
    pub higher_is_better: bool,
    pub trials: Vec<TrialResult>,
}

impl TuneOutcome {
    /// Best score among trials `0..=k` for every `k`.
    pub fn best_prefix_scores(&self) -> Vec<Option<f64>> {
        let mut best: Option<f64> = None;
        self.trials
            .iter()
            .map(|t| {
                if let Some(s) = t.score {
                    if best.is_none_or(|b| better(s, b, self.higher_is_better)) {
                        best = Some(s);
                    }
                }
                best
            })
            .collect()
    }
}

fn better(a: f64, b: f64, higher: bool) -> bool {
    if higher {
        a > b
    } else {
        a < b
    }
}

#[derive(Debug, Clone)]
pub struct TuneRequest<'a> {
    pub entry: MethodEntry,
    pub default: &'a ModelConfig,
    pub space: &'a SearchSpace,
    /// Run-level settings applied on top of every trial (e.g. `max_epoch`).
    pub overrides: &'a Params,
    pub train: &'a Design,
    pub val: &'a Design,
    pub task: TaskType,
    pub n_trials: usize,
    pub seed: u64,
}

/// Random search. Trial 0 is the default configuration; trials `1..n` are
/// independent draws. Each trial is fitted on `train` and scored on `val`;
/// the earliest trial with the best score wins.
pub fn tune_hyper_parameters(req: &TuneRequest<'_>) -> Result<TuneOutcome> {
    if req.n_trials == 0 {
        return Err(Error::Argument("n_trials must be at least 1".into()));
    }
    let val = if req.val.is_empty() { req.train } else { req.val };
    let higher = req.task.is_classification();
    let mut trials: Vec<TrialResult> = (0..req.n_trials)
        .into_par_iter()
        .map(|index| {
            let seed = trial_seed(req.seed, index);
            let assignment = if index == 0 {
                req.default.clone()
            } else {
                req.space.sample_into(req.default, seed)
            };
            let mut params = assignment.flatten();
            params.extend(req.overrides.clone());
            let scored = (req.entry.build)(&params)
                .and_then(|m| m.fit(req.train, val, &FitContext { task: req.task, seed: req.seed }))
                .and_then(|model| model.predict(&val.x))
                .and_then(|pred| validation_score(&pred, &val.y, req.task))
                .and_then(|s| {
                    if s.is_finite() {
                        Ok(s)
                    } else {
                        Err(Error::Numerical(format!("validation score {s}")))
                    }
                });
            let (score, error) = match scored {
                Ok(s) => (Some(s), None),
                Err(e) => (None, Some(e.to_string())),
            };
            TrialResult {
                index,
                assignment,
                score,
                error,
                rank: None,
                seed,
            }
        })
        .collect();

    let mut ok: Vec<usize> = (0..trials.len()).filter(|&i| trials[i].score.is_some()).collect();
    if ok.is_empty() {
        return Err(Error::Tuning {
            log: trials
                .iter()
                .map(|t| format!("trial {}: {}", t.index, t.error.as_deref().unwrap_or("failed")))
                .collect(),
        });
    }
    ok.sort_by(|&a, &b| {
        let (sa, sb) = (trials[a].score.unwrap(), trials[b].score.unwrap());
        let o = sa.total_cmp(&sb);
        (if higher { o.reverse() } else { o }).then(a.cmp(&b))
    });
    for (r, &i) in ok.iter().enumerate() {
        trials[i].rank = Some(r + 1);
    }
    let best_index = ok[0];
    Ok(TuneOutcome {
        best: trials[best_index].assignment.clone(),
        best_index,
        higher_is_better: higher,
        trials,
    })
}

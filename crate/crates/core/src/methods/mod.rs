//! The fit/predict contract shared by every learner and the name registry
//! that maps `model_type` tokens to constructors.
//!
//! Adding a learner takes one [`Method`] implementation, one
//! [`Registry::register`] call (or an entry in [`Registry::builtin`]) and a
//! pair of JSON files under `configs/default/` and `configs/opt_space/`.

use std::collections::BTreeMap;
use std::fmt::{self, Debug};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::TaskType;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub mod dummy;
pub mod gbdt;
pub mod knn;
pub mod linear;
pub mod mlp;
pub mod tree;

/// Flat hyperparameter map: the `model` and `training` groups of a config
/// merged together, plus run-level settings such as `max_epoch`.
pub type Params = serde_json::Map<String, serde_json::Value>;

/// Fully numerical design matrix with labels (class index or target value).
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub x: Matrix,
    pub y: Vec<f64>,
}

impl Design {
    pub fn new(x: Matrix, y: Vec<f64>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::Argument(format!(
                "{} feature rows but {} labels",
                x.rows(),
                y.len()
            )));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FitContext {
    pub task: TaskType,
    pub seed: u64,
}

/// Training objective: cross-entropy for classification, squared error for
/// regression, with an optional L2 penalty on the weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    CrossEntropy { l2: f64 },
    SquaredError { l2: f64 },
}

impl LossKind {
    pub fn for_task(task: TaskType, l2: f64) -> Self {
        if task.is_classification() {
            Self::CrossEntropy { l2 }
        } else {
            Self::SquaredError { l2 }
        }
    }

    pub fn l2(self) -> f64 {
        match self {
            Self::CrossEntropy { l2 } | Self::SquaredError { l2 } => l2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Prediction {
    /// Per-class probabilities (rows sum to one) and their argmax.
    Classes { probs: Matrix, labels: Vec<usize> },
    Values(Vec<f64>),
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// In-place softmax with max subtraction.
pub fn softmax(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
}

impl Prediction {
    pub fn from_probs(probs: Matrix) -> Self {
        let labels = probs.iter_rows().map(argmax).collect();
        Self::Classes { probs, labels }
    }

    /// Softmax over per-class scores.
    pub fn from_scores(mut scores: Matrix) -> Self {
        for r in 0..scores.rows() {
            softmax(scores.row_mut(r));
        }
        Self::from_probs(scores)
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Classes { labels, .. } => labels.len(),
            Self::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> Option<&[f64]> {
        match self {
            Self::Values(v) => Some(v),
            Self::Classes { .. } => None,
        }
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match self {
            Self::Classes { labels, .. } => Some(labels),
            Self::Values(_) => None,
        }
    }

    pub fn probs(&self) -> Option<&Matrix> {
        match self {
            Self::Classes { probs, .. } => Some(probs),
            Self::Values(_) => None,
        }
    }
}

/// A learner configured with its hyperparameters.
pub trait Method: Send + Sync {
    fn name(&self) -> &str;

    /// Fits on `train`, using `val` only for early stopping. Never sees test rows.
    fn fit(&self, train: &Design, val: &Design, ctx: &FitContext) -> Result<Box<dyn Model>>;
}

/// A fitted model; immutable and safe to share across threads.
pub trait Model: Send + Sync + Debug {
    fn predict(&self, x: &Matrix) -> Result<Prediction>;

    /// Trainable parameter count, or total node count for tree models.
    fn size(&self) -> usize;

    /// Serialized fitted state; equal bytes mean bit-identical models.
    fn snapshot(&self) -> Vec<u8>;
}

pub(crate) fn snapshot_of<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("fitted state is always serializable")
}

/// Deserializes a method's parameter struct from the flat map. Keys the
/// struct does not know are ignored.
pub fn parse_params<T: DeserializeOwned>(method: &str, params: &Params) -> Result<T> {
    serde_json::from_value(serde_json::Value::Object(params.clone()))
        .map_err(|e| Error::Config(format!("bad hyperparameters for `{method}`: {e}")))
}

pub(crate) fn check_task(method: &str, support: TaskSupport, task: TaskType) -> Result<()> {
    if support.allows(task) {
        Ok(())
    } else {
        Err(Error::UnsupportedTask {
            method: method.to_string(),
            task: task.to_string(),
        })
    }
}

pub(crate) fn check_train(train: &Design, ctx: &FitContext) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Fit("training set is empty".into()));
    }
    if train.x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("training features contain non-finite values".into()));
    }
    if let Some(c) = ctx.task.n_classes() {
        if train.y.iter().any(|&y| y < 0.0 || y >= c as f64 || y.fract() != 0.0) {
            return Err(Error::Fit(format!("training labels must be class indices in 0..{c}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Classical,
    Deep,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Classical => "classical",
            Self::Deep => "deep",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskSupport {
    Any,
    Classification,
    Regression,
}

impl TaskSupport {
    pub fn allows(self, task: TaskType) -> bool {
        match self {
            Self::Any => true,
            Self::Classification => task.is_classification(),
            Self::Regression => task.is_regression(),
        }
    }
}

pub type Constructor = fn(&Params) -> Result<Box<dyn Method>>;

#[derive(Clone, Copy)]
pub struct MethodEntry {
    pub name: &'static str,
    pub family: Family,
    pub tasks: TaskSupport,
    pub build: Constructor,
}

impl Debug for MethodEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MethodEntry")
            .field("name", &self.name)
            .field("family", &self.family)
            .field("tasks", &self.tasks)
            .finish()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Registry {
    entries: BTreeMap<String, MethodEntry>,
}

impl Registry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        for entry in [
            dummy::ENTRY,
            knn::ENTRY,
            linear::NCM_ENTRY,
            linear::NAIVE_BAYES_ENTRY,
            linear::LINEAR_REGRESSION_ENTRY,
            linear::LOGREG_ENTRY,
            linear::SVM_ENTRY,
            tree::CART_ENTRY,
            tree::RANDOM_FOREST_ENTRY,
            gbdt::ENTRY,
            mlp::ENTRY,
        ] {
            r.register(entry);
        }
        r
    }

    /// Adds or replaces an entry.
    pub fn register(&mut self, entry: MethodEntry) {
        self.entries.insert(entry.name.to_string(), entry);
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn entries(&self) -> impl Iterator<Item = &MethodEntry> {
        self.entries.values()
    }

    pub fn get(&self, name: &str) -> Result<MethodEntry> {
        self.entries.get(name).copied().ok_or_else(|| Error::UnknownMethod {
            name: name.to_string(),
            available: self.names(),
        })
    }
}

/// Looks up a built-in method by its `model_type` token.
pub fn get_method(model_type: &str) -> Result<MethodEntry> {
    Registry::builtin().get(model_type)
}

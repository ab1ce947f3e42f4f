//! Greedy binary decision trees (CART) and bagged random forests.
//!
//! Splits send `x[feature] <= threshold` left; thresholds are midpoints
//! between consecutive distinct values. Among equally good splits the lowest
//! feature index and then the lowest threshold win.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    argmax, check_train, parse_params, snapshot_of, Design, Family, FitContext, Method, MethodEntry, Model,
    Prediction, TaskSupport,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const CART_ENTRY: MethodEntry = MethodEntry {
    name: "cart",
    family: Family::Classical,
    tasks: TaskSupport::Any,
    build: |p| Ok(Box::new(Cart::new(parse_params("cart", p)?)?)),
};

pub const RANDOM_FOREST_ENTRY: MethodEntry = MethodEntry {
    name: "random_forest",
    family: Family::Classical,
    tasks: TaskSupport::Any,
    build: |p| Ok(Box::new(RandomForest::new(parse_params("random_forest", p)?)?)),
};

const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Gini { n_classes: usize },
    SquaredError,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Class distribution for Gini trees, a single value otherwise.
    Leaf { value: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { .. } => return i,
            }
        }
    }

    pub fn predict_row(&self, x: &[f64]) -> &[f64] {
        match &self.nodes[self.leaf_index(x)] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!("leaf_index always ends on a leaf"),
        }
    }

    /// Replaces every leaf payload; used by boosting to install Newton steps.
    pub(crate) fn map_leaves(&mut self, mut f: impl FnMut(usize) -> Vec<f64>) {
        for (i, node) in self.nodes.iter_mut().enumerate() {
            if let Node::Leaf { value } = node {
                *value = f(i);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeConfig {
    pub criterion: Criterion,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
    /// Features examined per split; `None` examines all.
    pub max_features: Option<usize>,
}

/// Running sufficient statistics of a sample set.
#[derive(Debug, Clone)]
enum Stats {
    Classes { counts: Vec<f64>, n: f64 },
    Moments { sum: f64, sumsq: f64, n: f64 },
}

impl Stats {
    fn empty(criterion: Criterion) -> Self {
        match criterion {
            Criterion::Gini { n_classes } => Self::Classes {
                counts: vec![0.0; n_classes],
                n: 0.0,
            },
            Criterion::SquaredError => Self::Moments {
                sum: 0.0,
                sumsq: 0.0,
                n: 0.0,
            },
        }
    }

    fn add(&mut self, y: f64, sign: f64) {
        match self {
            Self::Classes { counts, n } => {
                counts[y as usize] += sign;
                *n += sign;
            }
            Self::Moments { sum, sumsq, n } => {
                *sum += sign * y;
                *sumsq += sign * y * y;
                *n += sign;
            }
        }
    }

    /// Size-weighted impurity: `n * gini` or the sum of squared errors.
    fn cost(&self) -> f64 {
        match self {
            Self::Classes { counts, n } => {
                if *n <= 0.0 {
                    0.0
                } else {
                    *n - counts.iter().map(|c| c * c).sum::<f64>() / n
                }
            }
            Self::Moments { sum, sumsq, n } => {
                if *n <= 0.0 {
                    0.0
                } else {
                    (sumsq - sum * sum / n).max(0.0)
                }
            }
        }
    }

    fn n(&self) -> f64 {
        match self {
            Self::Classes { n, .. } | Self::Moments { n, .. } => *n,
        }
    }

    fn leaf_value(&self) -> Vec<f64> {
        match self {
            Self::Classes { counts, n } => counts.iter().map(|c| c / n).collect(),
            Self::Moments { sum, n, .. } => vec![sum / n],
        }
    }
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    config: TreeConfig,
    nodes: Vec<Node>,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    left_count: usize,
}

impl<'a> Builder<'a> {
    /// `sorted[f]` lists the node's samples (row indices, repeats allowed)
    /// in ascending order of feature `f`.
    fn grow(&mut self, sorted: Vec<Vec<usize>>, depth: usize, rng: &mut Option<ChaCha8Rng>) -> usize {
        let id = self.nodes.len();
        let samples = &sorted[0];
        let mut stats = Stats::empty(self.config.criterion);
        for &i in samples {
            stats.add(self.y[i], 1.0);
        }
        self.nodes.push(Node::Leaf {
            value: stats.leaf_value(),
        });
        let n = samples.len();
        let depth_ok = self.config.max_depth.is_none_or(|m| depth < m);
        if !depth_ok || n < self.config.min_samples_split || n < 2 * self.config.min_samples_leaf {
            return id;
        }
        let Some(choice) = self.best_split(&sorted, &stats, rng) else {
            return id;
        };
        let d = self.x.cols();
        // row membership; a repeated row always lands on one side
        let goes_left = |i: usize| self.x.get(i, choice.feature) <= choice.threshold;
        let mut left = Vec::with_capacity(d);
        let mut right = Vec::with_capacity(d);
        for list in sorted {
            let (l, r): (Vec<usize>, Vec<usize>) = list.into_iter().partition(|&i| goes_left(i));
            left.push(l);
            right.push(r);
        }
        debug_assert_eq!(left[0].len(), choice.left_count);
        let l = self.grow(left, depth + 1, rng);
        let r = self.grow(right, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: choice.feature,
            threshold: choice.threshold,
            left: l,
            right: r,
        };
        id
    }

    fn best_split(&self, sorted: &[Vec<usize>], parent: &Stats, rng: &mut Option<ChaCha8Rng>) -> Option<SplitChoice> {
        let d = self.x.cols();
        let features: Vec<usize> = match (self.config.max_features, rng.as_mut()) {
            (Some(k), Some(rng)) if k < d => {
                let mut f = sample(rng, d, k).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        };
        let parent_cost = parent.cost();
        let min_leaf = self.config.min_samples_leaf.max(1);
        let mut best: Option<(f64, SplitChoice)> = None;
        for f in features {
            let order = &sorted[f];
            let n = order.len();
            let mut left = Stats::empty(self.config.criterion);
            let mut right = parent.clone();
            for pos in 1..n {
                let prev = order[pos - 1];
                left.add(self.y[prev], 1.0);
                right.add(self.y[prev], -1.0);
                let (a, b) = (self.x.get(prev, f), self.x.get(order[pos], f));
                if a == b || pos < min_leaf || n - pos < min_leaf {
                    continue;
                }
                let gain = parent_cost - left.cost() - right.cost();
                if gain > MIN_GAIN && best.as_ref().is_none_or(|(g, _)| gain > *g) {
                    let mut threshold = 0.5 * (a + b);
                    // midpoint can round up to `b` for adjacent floats
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some((
                        gain,
                        SplitChoice {
                            feature: f,
                            threshold,
                            left_count: pos,
                        },
                    ));
                }
            }
            debug_assert!((left.n() + 1.0 - n as f64).abs() < 1e-9 || n == 0);
        }
        best.map(|(_, c)| c)
    }
}

/// Grows one tree on `samples` (row indices into `x`, repeats allowed).
pub fn build_tree(
    x: &Matrix,
    y: &[f64],
    samples: &[usize],
    config: TreeConfig,
    rng: Option<ChaCha8Rng>,
) -> Result<Tree> {
    if config.max_depth == Some(0) {
        return Err(Error::Argument("max_depth must be at least 1".into()));
    }
    if samples.is_empty() {
        return Err(Error::Fit("cannot grow a tree on zero samples".into()));
    }
    let sorted: Vec<Vec<usize>> = (0..x.cols().max(1))
        .map(|f| {
            let mut s = samples.to_vec();
            if f < x.cols() {
                s.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)).then(a.cmp(&b)));
            }
            s
        })
        .collect();
    let mut builder = Builder {
        x,
        y,
        config,
        nodes: Vec::new(),
    };
    let mut rng = rng;
    builder.grow(sorted, 0, &mut rng);
    Ok(Tree { nodes: builder.nodes })
}

fn criterion_for(ctx: &FitContext) -> Criterion {
    match ctx.task.n_classes() {
        Some(n_classes) => Criterion::Gini { n_classes },
        None => Criterion::SquaredError,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CartParams {
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
}

impl Default for CartParams {
    fn default() -> Self {
        Self {
            max_depth: Some(8),
            min_samples_leaf: 1,
            min_samples_split: 2,
        }
    }
}

fn check_depth(max_depth: Option<usize>) -> Result<()> {
    if max_depth == Some(0) {
        return Err(Error::Argument("max_depth must be at least 1".into()));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Cart {
    params: CartParams,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeModel {
    n_features: usize,
    classification: bool,
    tree: Tree,
}

impl TreeModel {
    pub fn tree(&self) -> &Tree {
        &self.tree
    }
}

impl Cart {
    pub fn new(params: CartParams) -> Result<Self> {
        check_depth(params.max_depth)?;
        Ok(Self { params })
    }

    pub fn fit_model(&self, train: &Design, ctx: &FitContext) -> Result<TreeModel> {
        check_train(train, ctx)?;
        let samples: Vec<usize> = (0..train.len()).collect();
        let config = TreeConfig {
            criterion: criterion_for(ctx),
            max_depth: self.params.max_depth,
            min_samples_leaf: self.params.min_samples_leaf,
            min_samples_split: self.params.min_samples_split,
            max_features: None,
        };
        Ok(TreeModel {
            n_features: train.x.cols(),
            classification: ctx.task.is_classification(),
            tree: build_tree(&train.x, &train.y, &samples, config, None)?,
        })
    }
}

impl Method for Cart {
    fn name(&self) -> &str {
        "cart"
    }

    fn fit(&self, train: &Design, _val: &Design, ctx: &FitContext) -> Result<Box<dyn Model>> {
        Ok(Box::new(self.fit_model(train, ctx)?))
    }
}

impl Model for TreeModel {
    fn predict(&self, x: &Matrix) -> Result<Prediction> {
        x.check_cols(self.n_features)?;
        if self.classification {
            let rows: Vec<&[f64]> = x.iter_rows().map(|r| self.tree.predict_row(r)).collect();
            let c = rows.first().map_or(0, |r| r.len());
            let mut probs = Matrix::zeros(x.rows(), c);
            for (i, r) in rows.iter().enumerate() {
                probs.row_mut(i).copy_from_slice(r);
            }
            Ok(Prediction::from_probs(probs))
        } else {
            Ok(Prediction::Values(x.iter_rows().map(|r| self.tree.predict_row(r)[0]).collect()))
        }
    }

    fn size(&self) -> usize {
        self.tree.n_nodes()
    }

    fn snapshot(&self) -> Vec<u8> {
        snapshot_of(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features examined per split; `None` means `ceil(sqrt(d))` for
    /// classification and `ceil(d / 3)` for regression.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for RandomForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 1,
            max_features: None,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RandomForest {
    params: RandomForestParams,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForestModel {
    n_features: usize,
    n_classes: Option<usize>,
    trees: Vec<Tree>,
}

/// Per-tree RNG stream derived from the run seed and the tree index.
fn tree_seed(seed: u64, tree: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(tree as u64)
}

impl RandomForest {
    pub fn new(params: RandomForestParams) -> Result<Self> {
        check_depth(params.max_depth)?;
        if params.n_trees == 0 {
            return Err(Error::Argument("n_trees must be at least 1".into()));
        }
        Ok(Self { params })
    }

    pub fn fit_model(&self, train: &Design, ctx: &FitContext) -> Result<ForestModel> {
        check_train(train, ctx)?;
        let n = train.len();
        let d = train.x.cols();
        let max_features = self.params.max_features.unwrap_or_else(|| {
            if ctx.task.is_classification() {
                (d as f64).sqrt().ceil() as usize
            } else {
                d.div_ceil(3)
            }
        });
        let config = TreeConfig {
            criterion: criterion_for(ctx),
            max_depth: self.params.max_depth,
            min_samples_leaf: self.params.min_samples_leaf,
            min_samples_split: 2,
            max_features: Some(max_features.clamp(1, d.max(1))),
        };
        let trees = (0..self.params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(ctx.seed, t));
                let samples: Vec<usize> = if self.params.bootstrap {
                    (0..n).map(|_| rng.gen_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                build_tree(&train.x, &train.y, &samples, config, Some(rng))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ForestModel {
            n_features: d,
            n_classes: ctx.task.n_classes(),
            trees,
        })
    }
}

impl Method for RandomForest {
    fn name(&self) -> &str {
        "random_forest"
    }

    fn fit(&self, train: &Design, _val: &Design, ctx: &FitContext) -> Result<Box<dyn Model>> {
        Ok(Box::new(self.fit_model(train, ctx)?))
    }
}

impl ForestModel {
    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }
}

impl Model for ForestModel {
    /// Class probabilities are vote fractions over the trees.
    fn predict(&self, x: &Matrix) -> Result<Prediction> {
        x.check_cols(self.n_features)?;
        let t = self.trees.len() as f64;
        match self.n_classes {
            Some(c) => {
                let mut probs = Matrix::zeros(x.rows(), c);
                for (i, row) in x.iter_rows().enumerate() {
                    let out = probs.row_mut(i);
                    for tree in &self.trees {
                        out[argmax(tree.predict_row(row))] += 1.0;
                    }
                    out.iter_mut().for_each(|v| *v /= t);
                }
                Ok(Prediction::from_probs(probs))
            }
            None => Ok(Prediction::Values(
                x.iter_rows()
                    .map(|row| self.trees.iter().map(|tree| tree.predict_row(row)[0]).sum::<f64>() / t)
                    .collect(),
            )),
        }
    }

    fn size(&self) -> usize {
        self.trees.iter().map(Tree::n_nodes).sum()
    }

    fn snapshot(&self) -> Vec<u8> {
        snapshot_of(self)
    }
}

//! Gradient-boosted regression trees: squared error for regression, one
//! tree per class per round on the softmax cross-entropy gradient for
//! classification.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{build_tree, Criterion, Tree, TreeConfig};
use super::{
    check_train, parse_params, snapshot_of, Design, Family, FitContext, Method, MethodEntry, Model,
    Prediction, TaskSupport,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const ENTRY: MethodEntry = MethodEntry {
    name: "gbdt",
    family: Family::Classical,
    tasks: TaskSupport::Any,
    build: |p| Ok(Box::new(Gbdt::new(parse_params("gbdt", p)?)?)),
};

const PRIOR_FLOOR: f64 = 1e-12;
const HESSIAN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtParams {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Fraction of rows drawn without replacement for each round.
    pub subsample: f64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            learning_rate: 0.1,
            max_depth: 3,
            min_samples_leaf: 1,
            subsample: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Gbdt {
    params: GbdtParams,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GbdtModel {
    n_features: usize,
    classification: bool,
    init: Vec<f64>,
    learning_rate: f64,
    /// `rounds[r][k]` is the tree for output `k` in round `r`.
    rounds: Vec<Vec<Tree>>,
}

impl Gbdt {
    pub fn new(params: GbdtParams) -> Result<Self> {
        if params.max_depth < 1 {
            return Err(Error::Argument("max_depth must be at least 1".into()));
        }
        if !(params.learning_rate >= 0.0) {
            return Err(Error::Argument("learning_rate must be nonnegative".into()));
        }
        if !(params.subsample > 0.0 && params.subsample <= 1.0) {
            return Err(Error::Argument("subsample must lie in (0, 1]".into()));
        }
        Ok(Self { params })
    }

    pub fn fit_model(&self, train: &Design, ctx: &FitContext) -> Result<GbdtModel> {
        check_train(train, ctx)?;
        let n = train.len();
        let p = &self.params;
        let config = TreeConfig {
            criterion: Criterion::SquaredError,
            max_depth: Some(p.max_depth),
            min_samples_leaf: p.min_samples_leaf,
            min_samples_split: 2,
            max_features: None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
        let n_sub = ((n as f64 * p.subsample).round() as usize).clamp(1, n);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<usize> {
            if n_sub == n {
                (0..n).collect()
            } else {
                let mut s = sample(rng, n, n_sub).into_vec();
                s.sort_unstable();
                s
            }
        };

        let (init, k) = match ctx.task.n_classes() {
            None => (vec![train.y.iter().sum::<f64>() / n as f64], 1),
            Some(c) => {
                let mut prior = vec![0.0; c];
                for &y in &train.y {
                    prior[y as usize] += 1.0 / n as f64;
                }
                (prior.iter().map(|q| q.max(PRIOR_FLOOR).ln()).collect(), c)
            }
        };
        let mut raw = Matrix::zeros(n, k);
        for r in 0..n {
            raw.row_mut(r).copy_from_slice(&init);
        }
        let mut rounds = Vec::with_capacity(p.n_trees);
        let mut residual = vec![0.0; n];
        for _ in 0..p.n_trees {
            let samples = draw(&mut rng);
            let mut round = Vec::with_capacity(k);
            if k == 1 && ctx.task.is_regression() {
                for i in 0..n {
                    residual[i] = train.y[i] - raw.get(i, 0);
                }
                let tree = build_tree(&train.x, &residual, &samples, config, None)?;
                for i in 0..n {
                    let v = tree.predict_row(train.x.row(i))[0];
                    raw.set(i, 0, raw.get(i, 0) + p.learning_rate * v);
                }
                round.push(tree);
            } else {
                let mut probs = raw.clone();
                for r in 0..n {
                    super::softmax(probs.row_mut(r));
                }
                let scale = (k as f64 - 1.0) / k as f64;
                let mut updates = Vec::with_capacity(k);
                for class in 0..k {
                    for i in 0..n {
                        let target = f64::from(train.y[i] as usize == class);
                        residual[i] = target - probs.get(i, class);
                    }
                    let mut tree = build_tree(&train.x, &residual, &samples, config, None)?;
                    // Newton step per leaf over the round's samples
                    let mut num = vec![0.0; tree.n_nodes()];
                    let mut den = vec![0.0; tree.n_nodes()];
                    for &i in &samples {
                        let leaf = tree.leaf_index(train.x.row(i));
                        let r = residual[i];
                        num[leaf] += r;
                        den[leaf] += r.abs() * (1.0 - r.abs());
                    }
                    tree.map_leaves(|leaf| vec![scale * num[leaf] / den[leaf].max(HESSIAN_FLOOR)]);
                    let update: Vec<f64> = (0..n).map(|i| tree.predict_row(train.x.row(i))[0]).collect();
                    updates.push(update);
                    round.push(tree);
                }
                for (class, update) in updates.iter().enumerate() {
                    for i in 0..n {
                        raw.set(i, class, raw.get(i, class) + p.learning_rate * update[i]);
                    }
                }
            }
            rounds.push(round);
        }
        Ok(GbdtModel {
            n_features: train.x.cols(),
            classification: ctx.task.is_classification(),
            init,
            learning_rate: p.learning_rate,
            rounds,
        })
    }
}

impl Method for Gbdt {
    fn name(&self) -> &str {
        "gbdt"
    }

    fn fit(&self, train: &Design, _val: &Design, ctx: &FitContext) -> Result<Box<dyn Model>> {
        Ok(Box::new(self.fit_model(train, ctx)?))
    }
}

impl GbdtModel {
    pub fn init(&self) -> &[f64] {
        &self.init
    }

    fn raw_scores(&self, x: &Matrix) -> Matrix {
        let k = self.init.len();
        let mut raw = Matrix::zeros(x.rows(), k);
        for (i, row) in x.iter_rows().enumerate() {
            let out = raw.row_mut(i);
            out.copy_from_slice(&self.init);
            for round in &self.rounds {
                for (o, tree) in out.iter_mut().zip(round) {
                    *o += self.learning_rate * tree.predict_row(row)[0];
                }
            }
        }
        raw
    }
}

impl Model for GbdtModel {
    fn predict(&self, x: &Matrix) -> Result<Prediction> {
        x.check_cols(self.n_features)?;
        let raw = self.raw_scores(x);
        if self.classification {
            Ok(Prediction::from_scores(raw))
        } else {
            Ok(Prediction::Values(raw.into_vec()))
        }
    }

    fn size(&self) -> usize {
        self.rounds.iter().flatten().map(Tree::n_nodes).sum()
    }

    fn snapshot(&self) -> Vec<u8> {
        snapshot_of(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TaskType;

    fn sine() -> Design {
        let x: Vec<[f64; 1]> = (0..200).map(|i| [i as f64 * 2.0 * std::f64::consts::PI / 200.0]).collect();
        let y = x.iter().map(|r| r[0].sin()).collect();
        Design::new(Matrix::from_rows(&x).unwrap(), y).unwrap()
    }

    #[test]
    fn fits_a_sine_curve() {
        let d = sine();
        let ctx = FitContext { task: TaskType::Regression, seed: 0 };
        let m = Gbdt::new(GbdtParams::default()).unwrap().fit_model(&d, &ctx).unwrap();
        let p = m.predict(&d.x).unwrap();
        let mse = p.values().unwrap().iter().zip(&d.y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 200.0;
        assert!(mse.sqrt() < 0.1, "rmse {}", mse.sqrt());
    }

    #[test]
    fn zero_learning_rate_predicts_the_initial_constant() {
        let d = sine();
        let ctx = FitContext { task: TaskType::Regression, seed: 0 };
        let m = Gbdt::new(GbdtParams {
            learning_rate: 0.0,
            n_trees: 5,
            ..GbdtParams::default()
        })
        .unwrap()
        .fit_model(&d, &ctx)
        .unwrap();
        let mean = d.y.iter().sum::<f64>() / 200.0;
        assert!(m.predict(&d.x).unwrap().values().unwrap().iter().all(|&v| v == mean));
    }

    #[test]
    fn classifies_with_softmax_probabilities() {
        let x: Vec<[f64; 1]> = (0..90).map(|i| [i as f64]).collect();
        let y: Vec<f64> = (0..90).map(|i| (i / 30) as f64).collect();
        let d = Design::new(Matrix::from_rows(&x).unwrap(), y.clone()).unwrap();
        let ctx = FitContext { task: TaskType::Multiclass(3), seed: 0 };
        let m = Gbdt::new(GbdtParams {
            n_trees: 20,
            ..GbdtParams::default()
        })
        .unwrap()
        .fit_model(&d, &ctx)
        .unwrap();
        let p = m.predict(&d.x).unwrap();
        let labels: Vec<f64> = p.labels().unwrap().iter().map(|&l| l as f64).collect();
        assert_eq!(labels, y);
        for row in p.probs().unwrap().iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert_eq!(m.init().len(), 3);
    }

    #[test]
    fn subsampling_is_seed_deterministic() {
        let d = sine();
        let g = Gbdt::new(GbdtParams {
            n_trees: 10,
            subsample: 0.5,
            ..GbdtParams::default()
        })
        .unwrap();
        let ctx = FitContext { task: TaskType::Regression, seed: 11 };
        assert_eq!(g.fit_model(&d, &ctx).unwrap().snapshot(), g.fit_model(&d, &ctx).unwrap().snapshot());
    }

    #[test]
    fn invalid_depth_rejected() {
        assert!(Gbdt::new(GbdtParams {
            max_depth: 0,
            ..GbdtParams::default()
        })
        .is_err());
    }
}

//! k-nearest neighbours with Euclidean distance.

use serde::{Deserialize, Serialize};

use super::{
    argmax, check_train, parse_params, snapshot_of, Design, Family, FitContext, Method, MethodEntry, Model, Params,
    Prediction, TaskSupport,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const ENTRY: MethodEntry = MethodEntry {
    name: "knn",
    family: Family::Classical,
    tasks: TaskSupport::Any,
    build,
};

fn build(params: &Params) -> Result<Box<dyn Method>> {
    Ok(Box::new(Knn::new(parse_params("knn", params)?)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnParams {
    pub n_neighbors: usize,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self { n_neighbors: 5 }
    }
}

#[derive(Debug, Clone)]
pub struct Knn {
    params: KnnParams,
}

impl Knn {
    pub fn new(params: KnnParams) -> Self {
        Self { params }
    }

    pub fn fit_model(&self, train: &Design, ctx: &FitContext) -> Result<KnnModel> {
        check_train(train, ctx)?;
        let k = self.params.n_neighbors;
        if k == 0 || k > train.len() {
            return Err(Error::Argument(format!(
                "n_neighbors = {k} must lie in 1..={} (training rows)",
                train.len()
            )));
        }
        Ok(KnnModel {
            k,
            n_classes: ctx.task.n_classes(),
            x: train.x.clone(),
            y: train.y.clone(),
        })
    }
}

impl Method for Knn {
    fn name(&self) -> &str {
        "knn"
    }

    fn fit(&self, train: &Design, _val: &Design, ctx: &FitContext) -> Result<Box<dyn Model>> {
        Ok(Box::new(self.fit_model(train, ctx)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KnnModel {
    k: usize,
    n_classes: Option<usize>,
    x: Matrix,
    y: Vec<f64>,
}

impl KnnModel {
    /// Indices of the `k` nearest training rows; equal distances keep the
    /// lower training index first.
    pub fn neighbors(&self, query: &[f64]) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = self
            .x
            .iter_rows()
            .enumerate()
            .map(|(i, row)| {
                let dist: f64 = row.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
                (dist, i)
            })
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < d.len() {
            d.select_nth_unstable_by(self.k - 1, cmp);
            d.truncate(self.k);
        }
        d.sort_by(cmp);
        d.into_iter().map(|(_, i)| i).collect()
    }
}

impl Model for KnnModel {
    fn predict(&self, x: &Matrix) -> Result<Prediction> {
        x.check_cols(self.x.cols())?;
        match self.n_classes {
            Some(c) => {
                let mut probs = Matrix::zeros(x.rows(), c);
                for (r, q) in x.iter_rows().enumerate() {
                    let row = probs.row_mut(r);
                    for i in self.neighbors(q) {
                        row[self.y[i] as usize] += 1.0;
                    }
                    row.iter_mut().for_each(|v| *v /= self.k as f64);
                }
                let labels = probs.iter_rows().map(argmax).collect();
                Ok(Prediction::Classes { probs, labels })
            }
            None => Ok(Prediction::Values(
                x.iter_rows()
                    .map(|q| self.neighbors(q).iter().map(|&i| self.y[i]).sum::<f64>() / self.k as f64)
                    .collect(),
            )),
        }
    }

    /// Stored training values.
    fn size(&self) -> usize {
        self.x.rows() * self.x.cols()
    }

    fn snapshot(&self) -> Vec<u8> {
        snapshot_of(self)
    }
}

//! Constant baseline: majority class with empirical class frequencies, or
//! the training mean for regression.

use serde::Serialize;

use super::{check_train, snapshot_of, Design, FitContext, Family, Method, MethodEntry, Model, Params, Prediction, TaskSupport};
use crate::error::Result;
use crate::matrix::Matrix;

pub const ENTRY: MethodEntry = MethodEntry {
    name: "dummy",
    family: Family::Classical,
    tasks: TaskSupport::Any,
    build,
};

pub fn build(_params: &Params) -> Result<Box<dyn Method>> {
    Ok(Box::new(Dummy))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Dummy;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum DummyModel {
    Classes(Vec<f64>),
    Mean(f64),
}

impl Dummy {
    pub fn fit_model(&self, train: &Design, ctx: &FitContext) -> Result<DummyModel> {
        check_train(train, ctx)?;
        let n = train.len() as f64;
        Ok(match ctx.task.n_classes() {
            Some(c) => {
                let mut freq = vec![0.0; c];
                for &y in &train.y {
                    freq[y as usize] += 1.0;
                }
                freq.iter_mut().for_each(|f| *f /= n);
                DummyModel::Classes(freq)
            }
            None => DummyModel::Mean(train.y.iter().sum::<f64>() / n),
        })
    }
}

impl Method for Dummy {
    fn name(&self) -> &str {
        "dummy"
    }

    fn fit(&self, train: &Design, _val: &Design, ctx: &FitContext) -> Result<Box<dyn Model>> {
        Ok(Box::new(self.fit_model(train, ctx)?))
    }
}

impl Model for DummyModel {
    fn predict(&self, x: &Matrix) -> Result<Prediction> {
        Ok(match self {
            Self::Classes(freq) => {
                let mut probs = Matrix::zeros(x.rows(), freq.len());
                for r in 0..x.rows() {
                    probs.row_mut(r).copy_from_slice(freq);
                }
                Prediction::from_probs(probs)
            }
            Self::Mean(m) => Prediction::Values(vec![*m; x.rows()]),
        })
    }

    fn size(&self) -> usize {
        match self {
            Self::Classes(f) => f.len(),
            Self::Mean(_) => 1,
        }
    }

    fn snapshot(&self) -> Vec<u8> {
        snapshot_of(self)
    }
}

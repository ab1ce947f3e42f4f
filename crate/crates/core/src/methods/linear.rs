//! Centroid, Gaussian naive Bayes and linear learners.

use serde::{Deserialize, Serialize};

use super::{
    check_task, check_train, parse_params, snapshot_of, softmax, Design, Family, FitContext, LossKind,
    Method, MethodEntry, Model, Prediction, TaskSupport,
};
use crate::error::{Error, Result};
use crate::linalg::cholesky_solve;
use crate::matrix::Matrix;

pub const NCM_ENTRY: MethodEntry = MethodEntry {
    name: "ncm",
    family: Family::Classical,
    tasks: TaskSupport::Classification,
    build: |_| Ok(Box::new(Ncm)),
};

pub const NAIVE_BAYES_ENTRY: MethodEntry = MethodEntry {
    name: "naive_bayes",
    family: Family::Classical,
    tasks: TaskSupport::Classification,
    build: |_| Ok(Box::new(GaussianNb)),
};

pub const LINEAR_REGRESSION_ENTRY: MethodEntry = MethodEntry {
    name: "linear_regression",
    family: Family::Classical,
    tasks: TaskSupport::Regression,
    build: |p| Ok(Box::new(LinearRegression::new(parse_params("linear_regression", p)?))),
};

pub const LOGREG_ENTRY: MethodEntry = MethodEntry {
    name: "logreg",
    family: Family::Classical,
    tasks: TaskSupport::Classification,
    build: |p| Ok(Box::new(LogisticRegression::new(parse_params("logreg", p)?))),
};

pub const SVM_ENTRY: MethodEntry = MethodEntry {
    name: "svm",
    family: Family::Classical,
    tasks: TaskSupport::Any,
    build: |p| Ok(Box::new(LinearSvm::new(parse_params("svm", p)?))),
};

/// Affine map `x -> W x + b` with `W` stored row-major as `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Linear {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Linear {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn apply(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), self.outputs);
        for (r, row) in x.iter_rows().enumerate() {
            for (o, v) in out.row_mut(r).iter_mut().enumerate() {
                let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                *v = self.bias[o] + w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        out
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Nearest class centroid.
#[derive(Debug, Clone, Copy, Default)]
pub struct Ncm;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NcmModel {
    centroids: Matrix,
    present: Vec<bool>,
}

impl Ncm {
    pub fn fit_model(&self, train: &Design, ctx: &FitContext) -> Result<NcmModel> {
        check_task("ncm", NCM_ENTRY.tasks, ctx.task)?;
        check_train(train, ctx)?;
        let c = ctx.task.n_classes().unwrap_or(0);
        let d = train.x.cols();
        let mut centroids = Matrix::zeros(c, d);
        let mut counts = vec![0usize; c];
        for (row, &y) in train.x.iter_rows().zip(&train.y) {
            let k = y as usize;
            counts[k] += 1;
            for (s, v) in centroids.row_mut(k).iter_mut().zip(row) {
                *s += v;
            }
        }
        for (k, &n) in counts.iter().enumerate() {
            if n > 0 {
                centroids.row_mut(k).iter_mut().for_each(|s| *s /= n as f64);
            }
        }
        Ok(NcmModel {
            centroids,
            present: counts.iter().map(|&n| n > 0).collect(),
        })
    }
}

impl Method for Ncm {
    fn name(&self) -> &str {
        "ncm"
    }

    fn fit(&self, train: &Design, _val: &Design, ctx: &FitContext) -> Result<Box<dyn Model>> {
        Ok(Box::new(self.fit_model(train, ctx)?))
    }
}

impl Model for NcmModel {
    /// Probabilities are a softmax over negative squared centroid distances.
    fn predict(&self, x: &Matrix) -> Result<Prediction> {
        x.check_cols(self.centroids.cols())?;
        let c = self.centroids.rows();
        let mut scores = Matrix::zeros(x.rows(), c);
        for (r, q) in x.iter_rows().enumerate() {
            for (k, s) in scores.row_mut(r).iter_mut().enumerate() {
                *s = if self.present[k] {
                    -self.centroids.row(k).iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                } else {
                    f64::NEG_INFINITY
                };
            }
        }
        Ok(Prediction::from_scores(scores))
    }

    fn size(&self) -> usize {
        self.centroids.rows() * self.centroids.cols()
    }

    fn snapshot(&self) -> Vec<u8> {
        snapshot_of(self)
    }
}

const NB_VAR_FLOOR: f64 = 1e-9;

/// Gaussian naive Bayes scored in the log domain.
#[derive(Debug, Clone, Copy, Default)]
pub struct GaussianNb;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianNbModel {
    log_prior: Vec<f64>,
    means: Matrix,
    vars: Matrix,
}

impl GaussianNb {
    pub fn fit_model(&self, train: &Design, ctx: &FitContext) -> Result<GaussianNbModel> {
        check_task("naive_bayes", NAIVE_BAYES_ENTRY.tasks, ctx.task)?;
        check_train(train, ctx)?;
        let c = ctx.task.n_classes().unwrap_or(0);
        let d = train.x.cols();
        let mut counts = vec![0.0; c];
        let mut means = Matrix::zeros(c, d);
        let mut vars = Matrix::zeros(c, d);
        for (row, &y) in train.x.iter_rows().zip(&train.y) {
            let k = y as usize;
            counts[k] += 1.0;
            for (s, v) in means.row_mut(k).iter_mut().zip(row) {
                *s += v;
            }
        }
        for k in 0..c {
            if counts[k] > 0.0 {
                means.row_mut(k).iter_mut().for_each(|s| *s /= counts[k]);
            }
        }
        for (row, &y) in train.x.iter_rows().zip(&train.y) {
            let k = y as usize;
            let mu = means.row(k).to_vec();
            for ((s, v), m) in vars.row_mut(k).iter_mut().zip(row).zip(&mu) {
                *s += (v - m) * (v - m);
            }
        }
        for k in 0..c {
            let n = counts[k];
            vars.row_mut(k)
                .iter_mut()
                .for_each(|s| *s = if n > 0.0 { *s / n } else { 0.0 }.max(NB_VAR_FLOOR));
        }
        let total = train.len() as f64;
        Ok(GaussianNbModel {
            log_prior: counts.iter().map(|&n| (n / total).ln()).collect(),
            means,
            vars,
        })
    }
}

impl Method for GaussianNb {
    fn name(&self) -> &str {
        "naive_bayes"
    }

    fn fit(&self, train: &Design, _val: &Design, ctx: &FitContext) -> Result<Box<dyn Model>> {
        Ok(Box::new(self.fit_model(train, ctx)?))
    }
}

impl Model for GaussianNbModel {
    fn predict(&self, x: &Matrix) -> Result<Prediction> {
        x.check_cols(self.means.cols())?;
        let c = self.log_prior.len();
        let mut scores = Matrix::zeros(x.rows(), c);
        for (r, q) in x.iter_rows().enumerate() {
            for (k, s) in scores.row_mut(r).iter_mut().enumerate() {
                *s = self.log_prior[k]
                    + q.iter()
                        .zip(self.means.row(k))
                        .zip(self.vars.row(k))
                        .map(|((v, m), var)| -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (v - m).powi(2) / var))
                        .sum::<f64>();
            }
        }
        Ok(Prediction::from_scores(scores))
    }

    fn size(&self) -> usize {
        2 * self.means.rows() * self.means.cols() + self.log_prior.len()
    }

    fn snapshot(&self) -> Vec<u8> {
        snapshot_of(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearRegressionParams {
    pub l2: f64,
}

impl Default for LinearRegressionParams {
    fn default() -> Self {
        Self { l2: 1e-6 }
    }
}

/// Ridge regression through the centered normal equations.
#[derive(Debug, Clone)]
pub struct LinearRegression {
    params: LinearRegressionParams,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearRegressionModel {
    coef: Vec<f64>,
    intercept: f64,
}

impl LinearRegressionModel {
    pub fn coef(&self) -> &[f64] {
        &self.coef
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }
}

impl LinearRegression {
    pub fn new(params: LinearRegressionParams) -> Self {
        Self { params }
    }

    pub fn fit_model(&self, train: &Design, ctx: &FitContext) -> Result<LinearRegressionModel> {
        check_task("linear_regression", LINEAR_REGRESSION_ENTRY.tasks, ctx.task)?;
        check_train(train, ctx)?;
        let l2 = self.params.l2;
        if !(l2 >= 0.0) {
            return Err(Error::Argument(format!("l2 must be nonnegative, got {l2}")));
        }
        let n = train.len() as f64;
        let d = train.x.cols();
        let x_mean: Vec<f64> = (0..d).map(|c| train.x.column(c).iter().sum::<f64>() / n).collect();
        let y_mean = train.y.iter().sum::<f64>() / n;
        let mut gram = vec![0.0; d * d];
        let mut rhs = vec![0.0; d];
        let mut centered = vec![0.0; d];
        for (row, &y) in train.x.iter_rows().zip(&train.y) {
            for (c, v) in centered.iter_mut().enumerate() {
                *v = row[c] - x_mean[c];
            }
            let yc = y - y_mean;
            for i in 0..d {
                rhs[i] += centered[i] * yc;
                for j in 0..=i {
                    gram[i * d + j] += centered[i] * centered[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                gram[j * d + i] = gram[i * d + j];
            }
            gram[i * d + i] += l2;
        }
        let coef = cholesky_solve(&gram, &rhs, d)?;
        let intercept = y_mean - coef.iter().zip(&x_mean).map(|(w, m)| w * m).sum::<f64>();
        Ok(LinearRegressionModel { coef, intercept })
    }
}

impl Method for LinearRegression {
    fn name(&self) -> &str {
        "linear_regression"
    }

    fn fit(&self, train: &Design, _val: &Design, ctx: &FitContext) -> Result<Box<dyn Model>> {
        Ok(Box::new(self.fit_model(train, ctx)?))
    }
}

impl Model for LinearRegressionModel {
    fn predict(&self, x: &Matrix) -> Result<Prediction> {
        x.check_cols(self.coef.len())?;
        Ok(Prediction::Values(
            x.iter_rows()
                .map(|r| self.intercept + r.iter().zip(&self.coef).map(|(a, b)| a * b).sum::<f64>())
                .collect(),
        ))
    }

    fn size(&self) -> usize {
        self.coef.len() + 1
    }

    fn snapshot(&self) -> Vec<u8> {
        snapshot_of(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradientDescentParams {
    pub l2: f64,
    pub lr: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for GradientDescentParams {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            lr: 0.1,
            max_iter: 1000,
            tol: 1e-6,
        }
    }
}

impl GradientDescentParams {
    fn validate(&self) -> Result<()> {
        if !(self.l2 >= 0.0) || !(self.lr > 0.0) || !(self.tol >= 0.0) {
            return Err(Error::Argument(format!(
                "invalid gradient-descent settings: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Full-batch gradient descent on a linear model. `output_grad` receives the
/// model outputs for every row and writes `d loss_i / d output` into its
/// second argument, returning the mean data loss. The L2 penalty on the
/// weights is added here. A step that increases the objective is retried
/// with half the learning rate.
fn gradient_descent<F>(
    x: &Matrix,
    outputs: usize,
    loss: LossKind,
    params: &GradientDescentParams,
    output_grad: F,
) -> Result<Linear>
where
    F: Fn(&Matrix, &mut Matrix) -> f64,
{
    let n = x.rows() as f64;
    let d = x.cols();
    let l2 = loss.l2();
    let mut model = Linear::zeros(d, outputs);
    let mut grad_out = Matrix::zeros(x.rows(), outputs);
    let objective = |m: &Linear, g: &mut Matrix| {
        let data = output_grad(&m.apply(x), g);
        data + 0.5 * l2 * m.weights.iter().map(|w| w * w).sum::<f64>()
    };
    let mut lr = params.lr;
    let mut current = objective(&model, &mut grad_out);
    for _ in 0..params.max_iter {
        let mut gw = vec![0.0; d * outputs];
        let mut gb = vec![0.0; outputs];
        for (row, g) in x.iter_rows().zip(grad_out.iter_rows()) {
            for o in 0..outputs {
                gb[o] += g[o];
                let w = &mut gw[o * d..(o + 1) * d];
                for (acc, v) in w.iter_mut().zip(row) {
                    *acc += g[o] * v;
                }
            }
        }
        for (g, w) in gw.iter_mut().zip(&model.weights) {
            *g = *g / n + l2 * w;
        }
        gb.iter_mut().for_each(|g| *g /= n);
        let norm = gw.iter().chain(&gb).map(|g| g * g).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::Numerical("gradient became non-finite".into()));
        }
        if norm < params.tol {
            break;
        }
        let mut next_grad = Matrix::zeros(x.rows(), outputs);
        loop {
            let mut next = model.clone();
            next.weights.iter_mut().zip(&gw).for_each(|(w, g)| *w -= lr * g);
            next.bias.iter_mut().zip(&gb).for_each(|(b, g)| *b -= lr * g);
            let value = objective(&next, &mut next_grad);
            if value <= current || lr < 1e-12 {
                model = next;
                current = value;
                grad_out = next_grad;
                break;
            }
            lr *= 0.5;
        }
    }
    Ok(model)
}

/// Multinomial logistic regression.
#[derive(Debug, Clone)]
pub struct LogisticRegression {
    params: GradientDescentParams,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearClassifier {
    linear: Linear,
}

impl LogisticRegression {
    pub fn new(params: GradientDescentParams) -> Self {
        Self { params }
    }

    pub fn fit_model(&self, train: &Design, ctx: &FitContext) -> Result<LinearClassifier> {
        check_task("logreg", LOGREG_ENTRY.tasks, ctx.task)?;
        check_train(train, ctx)?;
        self.params.validate()?;
        let c = ctx.task.n_classes().unwrap_or(0);
        let y: Vec<usize> = train.y.iter().map(|&v| v as usize).collect();
        let linear = gradient_descent(
            &train.x,
            c,
            LossKind::CrossEntropy { l2: self.params.l2 },
            &self.params,
            |scores, grad| {
                let mut total = 0.0;
                for r in 0..scores.rows() {
                    let g = grad.row_mut(r);
                    g.copy_from_slice(scores.row(r));
                    softmax(g);
                    total -= g[y[r]].max(1e-300).ln();
                    g[y[r]] -= 1.0;
                }
                total / scores.rows() as f64
            },
        )?;
        Ok(LinearClassifier { linear })
    }
}

impl Method for LogisticRegression {
    fn name(&self) -> &str {
        "logreg"
    }

    fn fit(&self, train: &Design, _val: &Design, ctx: &FitContext) -> Result<Box<dyn Model>> {
        Ok(Box::new(self.fit_model(train, ctx)?))
    }
}

impl Model for LinearClassifier {
    fn predict(&self, x: &Matrix) -> Result<Prediction> {
        x.check_cols(self.linear.inputs)?;
        Ok(Prediction::from_scores(self.linear.apply(x)))
    }

    fn size(&self) -> usize {
        self.linear.n_params()
    }

    fn snapshot(&self) -> Vec<u8> {
        snapshot_of(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    #[serde(flatten)]
    pub gd: GradientDescentParams,
    /// Insensitive-zone half width for regression.
    pub epsilon: f64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            gd: GradientDescentParams::default(),
            epsilon: 0.0,
        }
    }
}

/// Linear SVM with squared hinge loss, one-vs-rest for classes; squared
/// epsilon-insensitive loss for regression.
#[derive(Debug, Clone)]
pub struct LinearSvm {
    params: SvmParams,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum SvmModel {
    Classifier(LinearClassifier),
    Regressor(Linear),
}

impl LinearSvm {
    pub fn new(params: SvmParams) -> Self {
        Self { params }
    }

    pub fn fit_model(&self, train: &Design, ctx: &FitContext) -> Result<SvmModel> {
        check_train(train, ctx)?;
        self.params.gd.validate()?;
        let l2 = self.params.gd.l2;
        match ctx.task.n_classes() {
            Some(c) => {
                let y: Vec<usize> = train.y.iter().map(|&v| v as usize).collect();
                let linear = gradient_descent(
                    &train.x,
                    c,
                    LossKind::CrossEntropy { l2 },
                    &self.params.gd,
                    |scores, grad| {
                        let mut total = 0.0;
                        for r in 0..scores.rows() {
                            for k in 0..c {
                                let t = if y[r] == k { 1.0 } else { -1.0 };
                                let slack = (1.0 - t * scores.get(r, k)).max(0.0);
                                total += slack * slack;
                                grad.set(r, k, -2.0 * t * slack);
                            }
                        }
                        total / scores.rows() as f64
                    },
                )?;
                Ok(SvmModel::Classifier(LinearClassifier { linear }))
            }
            None => {
                let eps = self.params.epsilon;
                let linear = gradient_descent(
                    &train.x,
                    1,
                    LossKind::SquaredError { l2 },
                    &self.params.gd,
                    |out, grad| {
                        let mut total = 0.0;
                        for r in 0..out.rows() {
                            let diff = out.get(r, 0) - train.y[r];
                            let slack = (diff.abs() - eps).max(0.0);
                            total += slack * slack;
                            grad.set(r, 0, 2.0 * diff.signum() * slack);
                        }
                        total / out.rows() as f64
                    },
                )?;
                Ok(SvmModel::Regressor(linear))
            }
        }
    }
}

impl Method for LinearSvm {
    fn name(&self) -> &str {
        "svm"
    }

    fn fit(&self, train: &Design, _val: &Design, ctx: &FitContext) -> Result<Box<dyn Model>> {
        Ok(Box::new(self.fit_model(train, ctx)?))
    }
}

impl Model for SvmModel {
    /// Class probabilities are a softmax over the one-vs-rest margins.
    fn predict(&self, x: &Matrix) -> Result<Prediction> {
        match self {
            Self::Classifier(c) => c.predict(x),
            Self::Regressor(l) => {
                x.check_cols(l.inputs)?;
                Ok(Prediction::Values(l.apply(x).into_vec()))
            }
        }
    }

    fn size(&self) -> usize {
        match self {
            Self::Classifier(c) => c.size(),
            Self::Regressor(l) => l.n_params(),
        }
    }

    fn snapshot(&self) -> Vec<u8> {
        snapshot_of(self)
    }
}

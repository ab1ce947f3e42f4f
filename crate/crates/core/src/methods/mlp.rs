//! Multi-layer perceptron: `[linear -> ReLU -> dropout]*` followed by a
//! linear head, trained with mini-batch adaptive-moment steps, decoupled
//! weight decay and early stopping on the validation metric.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    argmax, check_train, parse_params, snapshot_of, softmax, Design, Family, FitContext, Method, MethodEntry, Model,
    Prediction, TaskSupport,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::preprocess::mean_std;

pub const ENTRY: MethodEntry = MethodEntry {
    name: "mlp",
    family: Family::Deep,
    tasks: TaskSupport::Any,
    build: |p| Ok(Box::new(Mlp::new(parse_params("mlp", p)?)?)),
};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpParams {
    pub d_layers: Vec<usize>,
    pub dropout: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epoch: usize,
    pub batch_size: usize,
    pub patience: usize,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            d_layers: vec![384, 384],
            dropout: 0.1,
            lr: 3e-4,
            weight_decay: 1e-5,
            max_epoch: 200,
            batch_size: 256,
            patience: 20,
        }
    }
}

/// Fully connected layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dense {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    fn init(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(-bound..=bound)).collect::<Vec<_>>();
        let weights = draw(inputs * outputs);
        let bias = draw(outputs);
        Self {
            inputs,
            outputs,
            weights,
            bias,
        }
    }

    fn forward(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), self.outputs);
        for (r, row) in x.iter_rows().enumerate() {
            let o = out.row_mut(r);
            for (j, v) in o.iter_mut().enumerate() {
                let w = &self.weights[j * self.inputs..(j + 1) * self.inputs];
                *v = self.bias[j] + w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Head {
    /// One logit per class, softmax cross-entropy.
    Softmax(usize),
    /// One output, mean squared error.
    Regression,
}

impl Head {
    fn outputs(self) -> usize {
        match self {
            Self::Softmax(c) => c,
            Self::Regression => 1,
        }
    }
}

/// Training targets for one batch.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    Classes(&'a [usize]),
    Values(&'a [f64]),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Network {
    layers: Vec<Dense>,
    head: Head,
}

/// Per-layer gradients, same layout as the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.bias) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

/// Dropout applied during a forward pass; `keep` masks are drawn from `rng`.
pub struct DropoutCtx<'r> {
    pub p: f64,
    pub rng: &'r mut ChaCha8Rng,
}

impl Network {
    pub fn new(inputs: usize, hidden: &[usize], head: Head, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut width = inputs;
        for &h in hidden {
            layers.push(Dense::init(width, h, rng));
            width = h;
        }
        layers.push(Dense::init(width, head.outputs(), rng));
        Self { layers, head }
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.n_params(), "parameter vector length");
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[at..at + nb]);
            at += nb;
        }
    }

    /// Raw head outputs with dropout disabled.
    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut a = x.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            a = l.forward(&a);
            if i < last {
                a.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        a
    }

    /// Mean batch loss and its exact gradient by backpropagation.
    pub fn loss_and_gradient(
        &self,
        x: &Matrix,
        targets: Targets<'_>,
        mut dropout: Option<DropoutCtx<'_>>,
    ) -> (f64, Gradients) {
        let last = self.layers.len() - 1;
        // inputs[l] feeds layer l; keep[l] is the post-ReLU multiplier of hidden layer l
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut keep: Vec<Vec<f64>> = Vec::with_capacity(last);
        let mut a = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let z = l.forward(&a);
            inputs.push(a);
            a = z;
            if i < last {
                let mut mult = vec![0.0; a.as_slice().len()];
                let drop = dropout.as_mut().filter(|d| d.p > 0.0);
                let scale = drop.as_ref().map_or(1.0, |d| 1.0 / (1.0 - d.p));
                let mut drop = drop;
                for (v, m) in a.as_mut_slice().iter_mut().zip(mult.iter_mut()) {
                    let kept = match drop.as_mut() {
                        Some(d) => d.rng.gen::<f64>() >= d.p,
                        None => true,
                    };
                    *m = if *v > 0.0 && kept { scale } else { 0.0 };
                    *v *= *m;
                }
                keep.push(mult);
            }
        }
        let out = a;
        let b = out.rows() as f64;
        let mut delta = out.clone();
        let loss = match targets {
            Targets::Classes(y) => {
                let mut total = 0.0;
                for r in 0..out.rows() {
                    let row = delta.row_mut(r);
                    softmax(row);
                    total -= row[y[r]].max(1e-300).ln();
                    row[y[r]] -= 1.0;
                    row.iter_mut().for_each(|v| *v /= b);
                }
                total / b
            }
            Targets::Values(y) => {
                let mut total = 0.0;
                for r in 0..out.rows() {
                    let diff = out.get(r, 0) - y[r];
                    total += diff * diff;
                    delta.set(r, 0, 2.0 * diff / b);
                }
                total / b
            }
        };

        let mut gw = vec![Vec::new(); self.layers.len()];
        let mut gb = vec![Vec::new(); self.layers.len()];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &inputs[l];
            let mut dw = vec![0.0; layer.weights.len()];
            let mut db = vec![0.0; layer.outputs];
            for (d_row, in_row) in delta.iter_rows().zip(input.iter_rows()) {
                for (j, &dj) in d_row.iter().enumerate() {
                    if dj == 0.0 {
                        continue;
                    }
                    db[j] += dj;
                    let w = &mut dw[j * layer.inputs..(j + 1) * layer.inputs];
                    for (acc, v) in w.iter_mut().zip(in_row) {
                        *acc += dj * v;
                    }
                }
            }
            gw[l] = dw;
            gb[l] = db;
            if l > 0 {
                let mut prev = Matrix::zeros(delta.rows(), layer.inputs);
                for r in 0..delta.rows() {
                    let p = prev.row_mut(r);
                    for (j, &dj) in delta.row(r).iter().enumerate() {
                        if dj == 0.0 {
                            continue;
                        }
                        let w = &layer.weights[j * layer.inputs..(j + 1) * layer.inputs];
                        for (acc, wv) in p.iter_mut().zip(w) {
                            *acc += dj * wv;
                        }
                    }
                }
                let mask = &keep[l - 1];
                for (v, m) in prev.as_mut_slice().iter_mut().zip(mask) {
                    *v *= m;
                }
                delta = prev;
            }
        }
        (loss, Gradients { weights: gw, bias: gb })
    }
}

/// First and second moment estimates for one parameter buffer.
#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// One bias-corrected step at iteration `t`; `decay` is applied
    /// multiplicatively before the step.
    fn step(&mut self, param: &mut [f64], grad: &[f64], lr: f64, decay: f64, t: i32) {
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for i in 0..param.len() {
            let g = grad[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            param[i] *= 1.0 - lr * decay;
            param[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    params: MlpParams,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MlpModel {
    network: Network,
    /// Target standardization for regression heads.
    target_mean: f64,
    target_std: f64,
    /// Validation metric after every completed epoch (accuracy or RMSE).
    val_history: Vec<f64>,
    best_epoch: usize,
}

impl Mlp {
    pub fn new(params: MlpParams) -> Result<Self> {
        if !(0.0..1.0).contains(&params.dropout) {
            return Err(Error::Argument(format!("dropout must lie in [0, 1), got {}", params.dropout)));
        }
        if !(params.lr > 0.0) || !(params.weight_decay >= 0.0) {
            return Err(Error::Argument("lr must be positive and weight_decay nonnegative".into()));
        }
        if params.batch_size == 0 || params.max_epoch == 0 {
            return Err(Error::Argument("batch_size and max_epoch must be positive".into()));
        }
        if params.d_layers.contains(&0) {
            return Err(Error::Argument("hidden layer widths must be positive".into()));
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn fit_model(&self, train: &Design, val: &Design, ctx: &FitContext) -> Result<MlpModel> {
        check_train(train, ctx)?;
        let p = &self.params;
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
        let head = match ctx.task.n_classes() {
            Some(c) => Head::Softmax(c),
            None => Head::Regression,
        };
        let (target_mean, target_std) = match head {
            Head::Regression => {
                let (m, s) = mean_std(&train.y);
                (m, if s < 1e-12 { 1.0 } else { s })
            }
            Head::Softmax(_) => (0.0, 1.0),
        };
        let classes: Vec<usize> = train.y.iter().map(|&y| y as usize).collect();
        let scaled: Vec<f64> = train.y.iter().map(|&y| (y - target_mean) / target_std).collect();
        let val = if val.is_empty() { train } else { val };

        let mut model = MlpModel {
            network: Network::new(train.x.cols(), &p.d_layers, head, &mut rng),
            target_mean,
            target_std,
            val_history: Vec::new(),
            best_epoch: 0,
        };
        let mut moments: Vec<(Moments, Moments)> = model
            .network
            .layers
            .iter()
            .map(|l| (Moments::new(l.weights.len()), Moments::new(l.bias.len())))
            .collect();
        let mut best = model.network.clone();
        let mut best_score: Option<f64> = None;
        let mut stale = 0;
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut t = 0i32;
        for epoch in 0..p.max_epoch {
            order.shuffle(&mut rng);
            for batch in order.chunks(p.batch_size) {
                let xb = train.x.select_rows(batch);
                let yc: Vec<usize>;
                let yv: Vec<f64>;
                let targets = match head {
                    Head::Softmax(_) => {
                        yc = batch.iter().map(|&i| classes[i]).collect();
                        Targets::Classes(&yc)
                    }
                    Head::Regression => {
                        yv = batch.iter().map(|&i| scaled[i]).collect();
                        Targets::Values(&yv)
                    }
                };
                let (loss, grads) = model.network.loss_and_gradient(
                    &xb,
                    targets,
                    Some(DropoutCtx { p: p.dropout, rng: &mut rng }),
                );
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch, loss });
                }
                t += 1;
                for ((layer, (mw, mb)), (gw, gb)) in model
                    .network
                    .layers
                    .iter_mut()
                    .zip(moments.iter_mut())
                    .zip(grads.weights.iter().zip(&grads.bias))
                {
                    mw.step(&mut layer.weights, gw, p.lr, p.weight_decay, t);
                    mb.step(&mut layer.bias, gb, p.lr, 0.0, t);
                }
            }
            let score = model.validation_score(val);
            if !score.is_finite() {
                return Err(Error::Divergence { epoch, loss: score });
            }
            model.val_history.push(score);
            let improved = best_score.is_none_or(|b| match head {
                Head::Softmax(_) => score > b,
                Head::Regression => score < b,
            });
            if improved {
                best_score = Some(score);
                best = model.network.clone();
                model.best_epoch = epoch;
                stale = 0;
            } else {
                stale += 1;
                if stale >= p.patience {
                    break;
                }
            }
        }
        model.network = best;
        Ok(model)
    }
}

impl MlpModel {
    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn val_history(&self) -> &[f64] {
        &self.val_history
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    /// Best validation metric observed; the restored weights achieve it.
    pub fn best_val_score(&self) -> f64 {
        self.val_history[self.best_epoch]
    }

    /// Accuracy for classification heads, RMSE in target units otherwise.
    pub fn validation_score(&self, val: &Design) -> f64 {
        let out = self.network.forward(&val.x);
        match self.network.head {
            Head::Softmax(_) => {
                let hits = out
                    .iter_rows()
                    .zip(&val.y)
                    .filter(|(row, &y)| argmax(row) == y as usize)
                    .count();
                hits as f64 / val.len() as f64
            }
            Head::Regression => {
                let se: f64 = out
                    .as_slice()
                    .iter()
                    .zip(&val.y)
                    .map(|(o, y)| (o * self.target_std + self.target_mean - y).powi(2))
                    .sum();
                (se / val.len() as f64).sqrt()
            }
        }
    }
}

impl Method for Mlp {
    fn name(&self) -> &str {
        "mlp"
    }

    fn fit(&self, train: &Design, val: &Design, ctx: &FitContext) -> Result<Box<dyn Model>> {
        Ok(Box::new(self.fit_model(train, val, ctx)?))
    }
}

impl Model for MlpModel {
    fn predict(&self, x: &Matrix) -> Result<Prediction> {
        x.check_cols(self.network.layers[0].inputs)?;
        let out = self.network.forward(x);
        Ok(match self.network.head {
            Head::Softmax(_) => Prediction::from_scores(out),
            Head::Regression => Prediction::Values(
                out.into_vec()
                    .into_iter()
                    .map(|o| o * self.target_std + self.target_mean)
                    .collect(),
            ),
        })
    }

    fn size(&self) -> usize {
        self.network.n_params()
    }

    fn snapshot(&self) -> Vec<u8> {
        snapshot_of(self)
    }
}

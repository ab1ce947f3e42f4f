//! Numerical feature encodings: quantile or target-aware binning combined
//! with one of four codecs (bin index, unary, Johnson, piecewise-linear).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TaskType;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::preprocess::{quantile_sorted, sorted_copy, token_enum};

pub const DEFAULT_N_BINS: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinScheme {
    Quantile,
    Target,
}

/// Strictly increasing boundaries `b_0 < ... < b_B` describing `B` bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinEdges {
    edges: Vec<f64>,
    scheme: BinScheme,
}

impl BinEdges {
    pub fn new(edges: Vec<f64>, scheme: BinScheme) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::Argument("bin edges need at least two boundaries".into()));
        }
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Argument(format!(
                "bin edges must be finite and strictly increasing: {edges:?}"
            )));
        }
        Ok(Self { edges, scheme })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn scheme(&self) -> BinScheme {
        self.scheme
    }

    pub fn n_bins(&self) -> usize {
        self.edges.len() - 1
    }
}

fn check_column(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Fit("cannot compute bins of an empty column".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("cannot compute bins of a column with non-finite values".into()));
    }
    Ok(())
}

fn single_bin(value: f64, scheme: BinScheme) -> BinEdges {
    BinEdges {
        edges: vec![value, value + 1.0],
        scheme,
    }
}

/// Edges at the empirical `k / n_bins` quantiles with duplicates collapsed.
/// A column with fewer than two distinct values yields one bin.
pub fn compute_quantile_bins(train_col: &[f64], n_bins: usize) -> Result<BinEdges> {
    if n_bins < 2 {
        return Err(Error::Argument(format!("n_bins must be at least 2, got {n_bins}")));
    }
    check_column(train_col)?;
    let sorted = sorted_copy(train_col);
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    if min == max {
        return Ok(single_bin(min, BinScheme::Quantile));
    }
    let mut edges: Vec<f64> = (0..=n_bins)
        .map(|k| quantile_sorted(&sorted, k as f64 / n_bins as f64))
        .collect();
    edges.dedup();
    BinEdges::new(edges, BinScheme::Quantile)
}

/// Split candidate for one leaf of the single-feature tree, over the
/// sorted range `start..end`.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    start: usize,
    end: usize,
    pos: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // max-heap on gain, ties to the leftmost leaf
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain
            .total_cmp(&other.gain)
            .then(other.start.cmp(&self.start))
    }
}

/// Prefix statistics of targets in sorted-feature order.
enum Prefix {
    Regression { sum: Vec<f64>, sumsq: Vec<f64> },
    Classes { counts: Vec<Vec<f64>>, n_classes: usize },
}

impl Prefix {
    fn new(targets: &[f64], task: TaskType) -> Self {
        match task.n_classes() {
            None => {
                let mut sum = vec![0.0];
                let mut sumsq = vec![0.0];
                for &y in targets {
                    sum.push(sum.last().unwrap() + y);
                    sumsq.push(sumsq.last().unwrap() + y * y);
                }
                Self::Regression { sum, sumsq }
            }
            Some(c) => {
                let mut counts = vec![vec![0.0; c]];
                for &y in targets {
                    let mut next = counts.last().unwrap().clone();
                    next[y as usize] += 1.0;
                    counts.push(next);
                }
                Self::Classes { counts, n_classes: c }
            }
        }
    }

    /// Size-weighted impurity of `start..end`: squared error or `n * gini`.
    fn cost(&self, start: usize, end: usize) -> f64 {
        let n = (end - start) as f64;
        if n == 0.0 {
            return 0.0;
        }
        match self {
            Self::Regression { sum, sumsq } => {
                let s = sum[end] - sum[start];
                let sq = sumsq[end] - sumsq[start];
                (sq - s * s / n).max(0.0)
            }
            Self::Classes { counts, n_classes } => {
                let sum_p2: f64 = (0..*n_classes)
                    .map(|k| {
                        let c = counts[end][k] - counts[start][k];
                        c * c
                    })
                    .sum::<f64>()
                    / (n * n);
                n * (1.0 - sum_p2)
            }
        }
    }
}

fn best_split(xs: &[f64], prefix: &Prefix, start: usize, end: usize, min_leaf: usize) -> Option<Candidate> {
    let parent = prefix.cost(start, end);
    let mut best: Option<Candidate> = None;
    let lo = start + min_leaf;
    let hi = end.checked_sub(min_leaf)?;
    for pos in lo.max(start + 1)..=hi.min(end - 1) {
        if xs[pos - 1] == xs[pos] {
            continue;
        }
        let gain = parent - prefix.cost(start, pos) - prefix.cost(pos, end);
        if gain > 1e-12 && best.is_none_or(|b| gain > b.gain) {
            best = Some(Candidate { gain, start, end, pos });
        }
    }
    best
}

/// Edges from the thresholds of a greedy single-feature CART grown best-first
/// up to `n_bins` leaves. Falls back to quantile bins for constant targets.
pub fn compute_target_bins(
    train_col: &[f64],
    targets: &[f64],
    task: TaskType,
    n_bins: usize,
) -> Result<BinEdges> {
    if n_bins < 2 {
        return Err(Error::Argument(format!("n_bins must be at least 2, got {n_bins}")));
    }
    if train_col.len() != targets.len() {
        return Err(Error::Argument(format!(
            "feature has {} rows but targets have {}",
            train_col.len(),
            targets.len()
        )));
    }
    check_column(train_col)?;
    if targets.iter().all(|&t| t == targets[0]) {
        return compute_quantile_bins(train_col, n_bins);
    }
    let mut order: Vec<usize> = (0..train_col.len()).collect();
    order.sort_by(|&a, &b| train_col[a].total_cmp(&train_col[b]));
    let xs: Vec<f64> = order.iter().map(|&i| train_col[i]).collect();
    let ys: Vec<f64> = order.iter().map(|&i| targets[i]).collect();
    let (min, max) = (xs[0], xs[xs.len() - 1]);
    if min == max {
        return Ok(single_bin(min, BinScheme::Target));
    }
    let prefix = Prefix::new(&ys, task);
    let min_leaf = (xs.len() / (4 * n_bins)).max(1);

    let mut heap = BinaryHeap::new();
    heap.extend(best_split(&xs, &prefix, 0, xs.len(), min_leaf));
    let mut thresholds = Vec::new();
    let mut leaves = 1;
    while leaves < n_bins {
        let Some(c) = heap.pop() else { break };
        thresholds.push(0.5 * (xs[c.pos - 1] + xs[c.pos]));
        leaves += 1;
        heap.extend(best_split(&xs, &prefix, c.start, c.pos, min_leaf));
        heap.extend(best_split(&xs, &prefix, c.pos, c.end, min_leaf));
    }
    thresholds.sort_by(f64::total_cmp);
    let mut edges = Vec::with_capacity(thresholds.len() + 2);
    edges.push(min);
    edges.extend(thresholds);
    edges.push(max);
    edges.dedup();
    BinEdges::new(edges, BinScheme::Target)
}

fn check_finite(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Encode(format!("cannot encode non-finite value {x}")))
    }
}

/// `k` with `b_k <= x < b_{k+1}`, clamped to `0..B`.
pub fn encode_bin_index(edges: &BinEdges, x: f64) -> Result<usize> {
    check_finite(x)?;
    let e = &edges.edges;
    // number of interior boundaries <= x
    let k = e[1..e.len() - 1].partition_point(|&b| b <= x);
    Ok(k)
}

/// Thermometer code of width `B - 1`.
pub fn encode_unary(edges: &BinEdges, x: f64) -> Result<Vec<bool>> {
    let k = encode_bin_index(edges, x)?;
    Ok((0..edges.n_bins() - 1).map(|i| i < k).collect())
}

/// Johnson counter state `k` over `ceil(B / 2)` bits.
pub fn johnson_code(state: usize, width: usize) -> Vec<bool> {
    if state <= width {
        (0..width).map(|i| i < state).collect()
    } else {
        (0..width).map(|i| i >= state - width).collect()
    }
}

pub fn johnson_width(n_bins: usize) -> usize {
    n_bins.div_ceil(2)
}

pub fn encode_johnson(edges: &BinEdges, x: f64) -> Result<Vec<bool>> {
    let k = encode_bin_index(edges, x)?;
    Ok(johnson_code(k, johnson_width(edges.n_bins())))
}

/// Piecewise-linear encoding of width `B`. Interior components are clipped to
/// `[0, 1]`; the first and last extrapolate linearly.
pub fn encode_ple(edges: &BinEdges, x: f64) -> Result<Vec<f64>> {
    check_finite(x)?;
    let e = &edges.edges;
    let b = edges.n_bins();
    Ok((1..=b)
        .map(|t| {
            let v = (x - e[t - 1]) / (e[t] - e[t - 1]);
            let lo = if t == 1 { f64::NEG_INFINITY } else { 0.0 };
            let hi = if t == b { f64::INFINITY } else { 1.0 };
            v.clamp(lo, hi)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NumCodec {
    BinIndex,
    Unary,
    Johnson,
    Ple,
}

impl NumCodec {
    pub fn width(self, n_bins: usize) -> usize {
        match self {
            Self::BinIndex => 1,
            Self::Unary => n_bins - 1,
            Self::Johnson => johnson_width(n_bins),
            Self::Ple => n_bins,
        }
    }

    fn encode_into(self, edges: &BinEdges, x: f64, out: &mut Vec<f64>) -> Result<()> {
        let bits = |b: Vec<bool>| b.into_iter().map(|v| if v { 1.0 } else { 0.0 });
        match self {
            Self::BinIndex => out.push(encode_bin_index(edges, x)? as f64),
            Self::Unary => out.extend(bits(encode_unary(edges, x)?)),
            Self::Johnson => out.extend(bits(encode_johnson(edges, x)?)),
            Self::Ple => out.extend(encode_ple(edges, x)?),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NumPolicy {
    None,
    QBins,
    TBins,
    QUnary,
    TUnary,
    QJohnson,
    TJohnson,
    QPle,
    TPle,
}
token_enum!(NumPolicy {
    None => "none",
    QBins => "Q_bins",
    TBins => "T_bins",
    QUnary => "Q_Unary",
    TUnary => "T_Unary",
    QJohnson => "Q_Johnson",
    TJohnson => "T_Johnson",
    QPle => "Q_PLE",
    TPle => "T_PLE",
});

impl NumPolicy {
    pub fn scheme(self) -> Option<BinScheme> {
        use NumPolicy::*;
        match self {
            None => Option::None,
            QBins | QUnary | QJohnson | QPle => Some(BinScheme::Quantile),
            TBins | TUnary | TJohnson | TPle => Some(BinScheme::Target),
        }
    }

    pub fn codec(self) -> Option<NumCodec> {
        use NumPolicy::*;
        match self {
            None => Option::None,
            QBins | TBins => Some(NumCodec::BinIndex),
            QUnary | TUnary => Some(NumCodec::Unary),
            QJohnson | TJohnson => Some(NumCodec::Johnson),
            QPle | TPle => Some(NumCodec::Ple),
        }
    }
}

/// Per-feature bin edges plus the codec applied to each feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedNumEncoder {
    policy: NumPolicy,
    n_features: usize,
    edges: Vec<BinEdges>,
}

impl FittedNumEncoder {
    pub fn fit(
        policy: NumPolicy,
        train: &Matrix,
        targets: &[f64],
        task: TaskType,
        n_bins: usize,
    ) -> Result<Self> {
        let edges = match policy.scheme() {
            None => Vec::new(),
            Some(scheme) => (0..train.cols())
                .into_par_iter()
                .map(|c| {
                    let col = train.column(c);
                    match scheme {
                        BinScheme::Quantile => compute_quantile_bins(&col, n_bins),
                        BinScheme::Target => compute_target_bins(&col, targets, task, n_bins),
                    }
                })
                .collect::<Result<Vec<_>>>()?,
        };
        Ok(Self {
            policy,
            n_features: train.cols(),
            edges,
        })
    }

    pub fn policy(&self) -> NumPolicy {
        self.policy
    }

    pub fn edges(&self) -> &[BinEdges] {
        &self.edges
    }

    pub fn output_width(&self) -> usize {
        match self.policy.codec() {
            None => self.n_features,
            Some(codec) => self.edges.iter().map(|e| codec.width(e.n_bins())).sum(),
        }
    }

    pub fn transform(&self, rows: &Matrix) -> Result<Matrix> {
        rows.check_cols(self.n_features)?;
        let Some(codec) = self.policy.codec() else {
            return Ok(rows.clone());
        };
        let width = self.output_width();
        let mut data = Vec::with_capacity(rows.rows() * width);
        for row in rows.iter_rows() {
            for (x, edges) in row.iter().zip(&self.edges) {
                codec.encode_into(edges, *x, &mut data)?;
            }
        }
        Matrix::from_vec(rows.rows(), width, data)
    }
}

//! Categorical encodings: ordinal, one-hot, binary code, hashing, smoothed
//! target means, leave-one-out means and ordered (prefix) target statistics.
//!
//! Index-style encoders reserve slot `K` for tokens unseen during fitting.
//! Target-style encoders emit the global target mean for unseen tokens and
//! expand multiclass targets one-vs-rest into one column per class.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::TaskType;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::preprocess::token_enum;

pub const DEFAULT_SMOOTHING: f64 = 10.0;
pub const CATBOOST_PRIOR_WEIGHT: f64 = 1.0;
pub const DEFAULT_HASH_BUCKETS: usize = 8;

/// Distinct training tokens in first-appearance order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub fn fit<S: AsRef<str>>(tokens: &[S]) -> Self {
        let mut vocab = Self {
            tokens: Vec::new(),
            index: BTreeMap::new(),
        };
        for t in tokens {
            let t = t.as_ref();
            if !vocab.index.contains_key(t) {
                vocab.index.insert(t.to_string(), vocab.tokens.len());
                vocab.tokens.push(t.to_string());
            }
        }
        vocab
    }

    /// Number of seen tokens; `len()` is also the unseen slot.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

pub fn encode_ordinal(vocab: &Vocabulary, token: &str) -> usize {
    vocab.index.get(token).copied().unwrap_or(vocab.len())
}

pub fn encode_onehot(vocab: &Vocabulary, token: &str) -> Vec<bool> {
    let k = encode_ordinal(vocab, token);
    (0..=vocab.len()).map(|i| i == k).collect()
}

/// Bits needed for indices `0..=K`, at least one.
pub fn binary_width(k: usize) -> usize {
    ((usize::BITS - k.leading_zeros()) as usize).max(1)
}

/// Big-endian base-2 digits of `index` over `width` bits.
pub fn binary_digits(index: usize, width: usize) -> Vec<bool> {
    (0..width).rev().map(|b| (index >> b) & 1 == 1).collect()
}

pub fn encode_binarycode(vocab: &Vocabulary, token: &str) -> Vec<bool> {
    binary_digits(encode_ordinal(vocab, token), binary_width(vocab.len()))
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over the UTF-8 bytes of `token`.
pub fn fnv1a64(token: &str) -> u64 {
    token.bytes().fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

pub fn hash_bucket(token: &str, n_buckets: usize) -> usize {
    (fnv1a64(token) % n_buckets as u64) as usize
}

pub fn encode_hash(token: &str, n_buckets: usize) -> Vec<bool> {
    let b = hash_bucket(token, n_buckets);
    (0..n_buckets).map(|i| i == b).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub count: f64,
    pub sum: f64,
}

/// Per-category target count and sum for one target column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    categories: BTreeMap<String, CategoryStats>,
    prior: f64,
    smoothing: f64,
}

pub fn fit_target_encoding<S: AsRef<str>>(tokens: &[S], targets: &[f64], m: f64) -> Result<TargetStats> {
    if tokens.is_empty() {
        return Err(Error::Fit("cannot fit target statistics on an empty column".into()));
    }
    if tokens.len() != targets.len() {
        return Err(Error::Argument(format!(
            "{} tokens but {} targets",
            tokens.len(),
            targets.len()
        )));
    }
    if !(m >= 0.0) {
        return Err(Error::Argument(format!("smoothing must be nonnegative, got {m}")));
    }
    let mut categories: BTreeMap<String, CategoryStats> = BTreeMap::new();
    for (t, &y) in tokens.iter().zip(targets) {
        let s = categories
            .entry(t.as_ref().to_string())
            .or_insert(CategoryStats { count: 0.0, sum: 0.0 });
        s.count += 1.0;
        s.sum += y;
    }
    let prior = targets.iter().sum::<f64>() / targets.len() as f64;
    Ok(TargetStats {
        categories,
        prior,
        smoothing: m,
    })
}

impl TargetStats {
    pub fn prior(&self) -> f64 {
        self.prior
    }

    pub fn category(&self, token: &str) -> Option<CategoryStats> {
        self.categories.get(token).copied()
    }
}

/// `(count * mean + m * P) / (count + m)`; unseen tokens give `P`.
pub fn encode_target(stats: &TargetStats, token: &str) -> f64 {
    match stats.category(token) {
        Some(s) if s.count + stats.smoothing > 0.0 => {
            (s.sum + stats.smoothing * stats.prior) / (s.count + stats.smoothing)
        }
        _ => stats.prior,
    }
}

/// Training rows pass their own target, which is excluded from the mean.
pub fn encode_leave_one_out(stats: &TargetStats, token: &str, own_target: Option<f64>) -> f64 {
    match (stats.category(token), own_target) {
        (None, _) => stats.prior,
        (Some(s), Some(y)) => {
            if s.count <= 1.0 {
                stats.prior
            } else {
                (s.sum - y) / (s.count - 1.0)
            }
        }
        (Some(s), None) => s.sum / s.count,
    }
}

/// Ordered target statistic for one row given the same-category prefix
/// aggregated before it in the permutation.
pub fn encode_catboost_ordered(prefix_sum: f64, prefix_count: f64, prior: f64) -> f64 {
    (prefix_sum + CATBOOST_PRIOR_WEIGHT * prior) / (prefix_count + CATBOOST_PRIOR_WEIGHT)
}

/// Ordered statistics of every training row. `permutation[i]` is the row
/// visited at position `i`; the result is indexed by row.
pub fn catboost_train_encodings<S: AsRef<str>>(
    tokens: &[S],
    targets: &[f64],
    permutation: &[usize],
    prior: f64,
) -> Vec<f64> {
    let mut running: BTreeMap<&str, CategoryStats> = BTreeMap::new();
    let mut out = vec![0.0; tokens.len()];
    for &row in permutation {
        let s = running
            .entry(tokens[row].as_ref())
            .or_insert(CategoryStats { count: 0.0, sum: 0.0 });
        out[row] = encode_catboost_ordered(s.sum, s.count, prior);
        s.count += 1.0;
        s.sum += targets[row];
    }
    out
}

/// Full-training ordered statistic used for rows outside the training set.
pub fn encode_catboost_inference(stats: &TargetStats, token: &str) -> f64 {
    match stats.category(token) {
        Some(s) => encode_catboost_ordered(s.sum, s.count, stats.prior),
        None => stats.prior,
    }
}

pub fn seeded_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    p
}

/// Target columns for target-style encoders: the label itself for binclass
/// and regression, one indicator column per class for multiclass.
pub fn target_columns(labels: &[f64], task: TaskType) -> Vec<Vec<f64>> {
    match task {
        TaskType::Multiclass(c) => (0..c)
            .map(|k| labels.iter().map(|&y| f64::from(y as usize == k)).collect())
            .collect(),
        _ => vec![labels.to_vec()],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CatPolicy {
    Ordinal,
    OneHot,
    Binary,
    Hash,
    Target,
    Loo,
    CatBoost,
}
token_enum!(CatPolicy {
    Ordinal => "ordinal",
    OneHot => "onehot",
    Binary => "binary",
    Hash => "hash",
    Target => "target",
    Loo => "loo",
    CatBoost => "catboost",
});

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum FeatureEncoder {
    Vocab(Vocabulary),
    Hash,
    Stats(Vec<TargetStats>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatEncoderConfig {
    pub smoothing: f64,
    pub n_buckets: usize,
    pub seed: u64,
}

impl Default for CatEncoderConfig {
    fn default() -> Self {
        Self {
            smoothing: DEFAULT_SMOOTHING,
            n_buckets: DEFAULT_HASH_BUCKETS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedCatEncoder {
    policy: CatPolicy,
    n_buckets: usize,
    features: Vec<FeatureEncoder>,
}

fn push_bits(out: &mut Vec<f64>, bits: Vec<bool>) {
    out.extend(bits.into_iter().map(|b| if b { 1.0 } else { 0.0 }));
}

impl FittedCatEncoder {
    /// Fits on imputed training tokens and returns the training rows encoded
    /// in the same pass (leave-one-out and ordered statistics depend on row
    /// identity, so training rows are never re-encoded through `transform`).
    pub fn fit_transform(
        policy: CatPolicy,
        train: &[Vec<String>],
        labels: &[f64],
        task: TaskType,
        config: &CatEncoderConfig,
    ) -> Result<(Self, Matrix)> {
        if config.n_buckets < 2 {
            return Err(Error::Argument("hash encoding needs at least 2 buckets".into()));
        }
        let n_cat = train.first().map_or(0, Vec::len);
        let targets = target_columns(labels, task);
        let permutation = seeded_permutation(train.len(), config.seed);
        let mut features = Vec::with_capacity(n_cat);
        let mut train_blocks: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n_cat);
        for c in 0..n_cat {
            let column: Vec<&str> = train.iter().map(|r| r[c].as_str()).collect();
            let feature = match policy {
                CatPolicy::Ordinal | CatPolicy::OneHot | CatPolicy::Binary => {
                    FeatureEncoder::Vocab(Vocabulary::fit(&column))
                }
                CatPolicy::Hash => FeatureEncoder::Hash,
                CatPolicy::Target | CatPolicy::Loo | CatPolicy::CatBoost => FeatureEncoder::Stats(
                    targets
                        .iter()
                        .map(|t| fit_target_encoding(&column, t, config.smoothing))
                        .collect::<Result<_>>()?,
                ),
            };
            // per-row encodings of this feature for the training rows
            let block: Vec<Vec<f64>> = match (&feature, policy) {
                (FeatureEncoder::Stats(stats), CatPolicy::Loo) => (0..train.len())
                    .map(|i| {
                        stats
                            .iter()
                            .zip(&targets)
                            .map(|(s, t)| encode_leave_one_out(s, column[i], Some(t[i])))
                            .collect()
                    })
                    .collect(),
                (FeatureEncoder::Stats(stats), CatPolicy::CatBoost) => {
                    let per_target: Vec<Vec<f64>> = stats
                        .iter()
                        .zip(&targets)
                        .map(|(s, t)| catboost_train_encodings(&column, t, &permutation, s.prior()))
                        .collect();
                    (0..train.len())
                        .map(|i| per_target.iter().map(|v| v[i]).collect())
                        .collect()
                }
                _ => column
                    .iter()
                    .map(|tok| {
                        let mut out = Vec::new();
                        encode_feature(&feature, policy, config.n_buckets, tok, &mut out);
                        out
                    })
                    .collect(),
            };
            features.push(feature);
            train_blocks.push(block);
        }
        let fitted = Self {
            policy,
            n_buckets: config.n_buckets,
            features,
        };
        let width = fitted.output_width();
        let mut data = Vec::with_capacity(train.len() * width);
        for i in 0..train.len() {
            for block in &train_blocks {
                data.extend_from_slice(&block[i]);
            }
        }
        let matrix = Matrix::from_vec(train.len(), width, data)?;
        Ok((fitted, matrix))
    }

    pub fn policy(&self) -> CatPolicy {
        self.policy
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn feature_width(&self, feature: usize) -> usize {
        match &self.features[feature] {
            FeatureEncoder::Vocab(v) => match self.policy {
                CatPolicy::OneHot => v.len() + 1,
                CatPolicy::Binary => binary_width(v.len()),
                _ => 1,
            },
            FeatureEncoder::Hash => self.n_buckets,
            FeatureEncoder::Stats(s) => s.len(),
        }
    }

    pub fn output_width(&self) -> usize {
        (0..self.features.len()).map(|f| self.feature_width(f)).sum()
    }

    /// Encodes rows outside the training set.
    pub fn transform(&self, rows: &[Vec<String>]) -> Result<Matrix> {
        let width = self.output_width();
        let mut data = Vec::with_capacity(rows.len() * width);
        for row in rows {
            if row.len() != self.features.len() {
                return Err(Error::Shape {
                    expected: self.features.len(),
                    actual: row.len(),
                });
            }
            for (feature, tok) in self.features.iter().zip(row) {
                encode_feature(feature, self.policy, self.n_buckets, tok, &mut data);
            }
        }
        Matrix::from_vec(rows.len(), width, data)
    }
}

fn encode_feature(feature: &FeatureEncoder, policy: CatPolicy, n_buckets: usize, tok: &str, out: &mut Vec<f64>) {
    match feature {
        FeatureEncoder::Vocab(v) => match policy {
            CatPolicy::OneHot => push_bits(out, encode_onehot(v, tok)),
            CatPolicy::Binary => push_bits(out, encode_binarycode(v, tok)),
            _ => out.push(encode_ordinal(v, tok) as f64),
        },
        FeatureEncoder::Hash => push_bits(out, encode_hash(tok, n_buckets)),
        FeatureEncoder::Stats(stats) => out.extend(stats.iter().map(|s| match policy {
            CatPolicy::Loo => encode_leave_one_out(s, tok, None),
            CatPolicy::CatBoost => encode_catboost_inference(s, tok),
            _ => encode_target(s, tok),
        })),
    }
}

//! Missing-value imputation and per-column normalization. Everything here is
//! fitted on training rows only and is a pure function of its input afterwards.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::CatRow;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Fill token used by [`CatNanPolicy::Constant`].
pub const NAN_TOKEN: &str = "__nan__";

const STD_FLOOR: f64 = 1e-12;
const QUANTILE_REFS: usize = 1000;
const CDF_BOUND: f64 = 1e-7;
const LAMBDA_RANGE: (f64, f64) = (-5.0, 5.0);
const GOLDEN_MAX_ITERS: usize = 200;
const GOLDEN_TOL: f64 = 1e-6;

macro_rules! token_enum {
    ($name:ident { $($variant:ident => $token:literal),+ $(,)? }) => {
        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn token(self) -> &'static str {
                match self { $($name::$variant => $token),+ }
            }
        }

        impl ::std::str::FromStr for $name {
            type Err = $crate::error::Error;

            fn from_str(s: &str) -> ::std::result::Result<Self, Self::Err> {
                match s {
                    $($token => Ok($name::$variant),)+
                    _ => Err($crate::error::Error::Argument(format!(
                        "invalid {} `{}`; valid tokens: {}",
                        stringify!($name),
                        s,
                        [$($token),+].join(", ")
                    ))),
                }
            }
        }

        impl ::std::fmt::Display for $name {
            fn fmt(&self, f: &mut ::std::fmt::Formatter<'_>) -> ::std::fmt::Result {
                f.write_str(self.token())
            }
        }
    };
}
pub(crate) use token_enum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NumNanPolicy {
    Mean,
    Median,
}
token_enum!(NumNanPolicy { Mean => "mean", Median => "median" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CatNanPolicy {
    MostFrequent,
    Constant,
}
token_enum!(CatNanPolicy { MostFrequent => "most_frequent", Constant => "constant" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    Standard,
    MinMax,
    Quantile,
    MaxAbs,
    Power,
    Robust,
}
token_enum!(Normalization {
    Standard => "standard",
    MinMax => "minmax",
    Quantile => "quantile",
    MaxAbs => "maxabs",
    Power => "power",
    Robust => "robust",
});

/// Linear-interpolation quantile of an ascending, non-empty slice.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

pub(crate) fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedImputer {
    num_fill: Vec<f64>,
    cat_fill: Vec<String>,
}

pub fn fit_imputer(
    train_num: &Matrix,
    train_cat: &[CatRow],
    num_policy: NumNanPolicy,
    cat_policy: CatNanPolicy,
) -> Result<FittedImputer> {
    let num_fill = (0..train_num.cols())
        .map(|c| {
            let observed: Vec<f64> = train_num.column(c).into_iter().filter(|v| !v.is_nan()).collect();
            if observed.is_empty() {
                return Err(Error::Fit(format!(
                    "numerical column {c} has no observed training values"
                )));
            }
            Ok(match num_policy {
                NumNanPolicy::Mean => observed.iter().sum::<f64>() / observed.len() as f64,
                NumNanPolicy::Median => quantile_sorted(&sorted_copy(&observed), 0.5),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n_cat = train_cat.first().map_or(0, Vec::len);
    let cat_fill = (0..n_cat)
        .map(|c| match cat_policy {
            CatNanPolicy::Constant => Ok(NAN_TOKEN.to_string()),
            CatNanPolicy::MostFrequent => most_frequent(train_cat.iter().filter_map(|r| r[c].as_deref()))
                .ok_or_else(|| {
                    Error::Fit(format!(
                        "categorical column {c} has no observed training values"
                    ))
                }),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FittedImputer { num_fill, cat_fill })
}

/// Mode of a token stream; ties go to the token seen first.
fn most_frequent<'a>(tokens: impl Iterator<Item = &'a str>) -> Option<String> {
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    for (pos, t) in tokens.enumerate() {
        counts.entry(t).or_insert((0, pos)).0 += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
        .map(|(t, _)| t.to_string())
}

impl FittedImputer {
    pub fn num_fill(&self) -> &[f64] {
        &self.num_fill
    }

    pub fn cat_fill(&self) -> &[String] {
        &self.cat_fill
    }

    pub fn transform_num(&self, rows: &Matrix) -> Result<Matrix> {
        rows.check_cols(self.num_fill.len())?;
        let mut out = rows.clone();
        for r in 0..out.rows() {
            for (v, &fill) in out.row_mut(r).iter_mut().zip(&self.num_fill) {
                if v.is_nan() {
                    *v = fill;
                }
            }
        }
        Ok(out)
    }

    pub fn transform_cat(&self, rows: &[CatRow]) -> Result<Vec<Vec<String>>> {
        rows.iter()
            .map(|r| {
                if r.len() != self.cat_fill.len() {
                    return Err(Error::Shape {
                        expected: self.cat_fill.len(),
                        actual: r.len(),
                    });
                }
                Ok(r.iter()
                    .zip(&self.cat_fill)
                    .map(|(v, fill)| v.clone().unwrap_or_else(|| fill.clone()))
                    .collect())
            })
            .collect()
    }
}

/// Fitted per-column map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnScaler {
    /// `(x - shift) / scale`
    Affine { shift: f64, scale: f64 },
    /// Empirical CDF through reference quantiles, then probit.
    Quantile { refs: Vec<f64> },
    /// Yeo-Johnson with exponent `lambda`, then standard scaling.
    Power { lambda: f64, mean: f64, std: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedNormalizer {
    kind: Normalization,
    columns: Vec<ColumnScaler>,
}

pub fn fit_normalizer(train_num: &Matrix, kind: Normalization) -> Result<FittedNormalizer> {
    if let Some(pos) = train_num.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::Fit(format!(
            "non-finite value at row {}, column {} while fitting {kind} normalization",
            pos / train_num.cols().max(1),
            pos % train_num.cols().max(1)
        )));
    }
    if train_num.rows() == 0 && train_num.cols() > 0 {
        return Err(Error::Fit("cannot fit a normalizer on zero rows".into()));
    }
    let columns = (0..train_num.cols())
        .into_par_iter()
        .map(|c| fit_column(&train_num.column(c), kind))
        .collect();
    Ok(FittedNormalizer { kind, columns })
}

fn fit_column(col: &[f64], kind: Normalization) -> ColumnScaler {
    let nonzero = |s: f64| if s.abs() < STD_FLOOR { 1.0 } else { s };
    match kind {
        Normalization::Standard => {
            let (mean, std) = mean_std(col);
            ColumnScaler::Affine {
                shift: mean,
                scale: nonzero(std),
            }
        }
        Normalization::MinMax => {
            let min = col.iter().copied().fold(f64::INFINITY, f64::min);
            let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            ColumnScaler::Affine {
                shift: min,
                scale: if max > min { max - min } else { 1.0 },
            }
        }
        Normalization::MaxAbs => {
            let m = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            ColumnScaler::Affine {
                shift: 0.0,
                scale: if m > 0.0 { m } else { 1.0 },
            }
        }
        Normalization::Robust => {
            let sorted = sorted_copy(col);
            let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
            ColumnScaler::Affine {
                shift: quantile_sorted(&sorted, 0.5),
                scale: if iqr > 0.0 { iqr } else { 1.0 },
            }
        }
        Normalization::Quantile => {
            let sorted = sorted_copy(col);
            let n_refs = sorted.len().min(QUANTILE_REFS);
            let refs = if n_refs == 1 {
                vec![sorted[0]]
            } else {
                (0..n_refs)
                    .map(|j| quantile_sorted(&sorted, j as f64 / (n_refs - 1) as f64))
                    .collect()
            };
            ColumnScaler::Quantile { refs }
        }
        Normalization::Power => {
            let lambda = fit_yeo_johnson_lambda(col);
            let transformed: Vec<f64> = col.iter().map(|&x| yeo_johnson(x, lambda)).collect();
            let (mean, std) = mean_std(&transformed);
            ColumnScaler::Power {
                lambda,
                mean,
                std: nonzero(std),
            }
        }
    }
}

impl ColumnScaler {
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Self::Affine { shift, scale } => (x - shift) / scale,
            Self::Quantile { refs } => probit(empirical_cdf(refs, x).clamp(CDF_BOUND, 1.0 - CDF_BOUND)),
            Self::Power { lambda, mean, std } => (yeo_johnson(x, *lambda) - mean) / std,
        }
    }
}

impl FittedNormalizer {
    pub fn kind(&self) -> Normalization {
        self.kind
    }

    pub fn columns(&self) -> &[ColumnScaler] {
        &self.columns
    }

    pub fn transform(&self, rows: &Matrix) -> Result<Matrix> {
        rows.check_cols(self.columns.len())?;
        let mut out = rows.clone();
        for r in 0..out.rows() {
            for (v, scaler) in out.row_mut(r).iter_mut().zip(&self.columns) {
                *v = scaler.apply(*v);
            }
        }
        Ok(out)
    }
}

/// CDF level of `x` against equally spaced reference quantiles. Values equal
/// to a run of tied references share the midpoint of that run's levels.
fn empirical_cdf(refs: &[f64], x: f64) -> f64 {
    let n = refs.len();
    if n == 1 {
        return 0.5;
    }
    let level = |j: usize| j as f64 / (n - 1) as f64;
    // first index with refs[j] >= x, and one past the last index with refs[j] <= x
    let lo = refs.partition_point(|&r| r < x);
    let hi = refs.partition_point(|&r| r <= x);
    if lo < hi {
        return 0.5 * (level(lo) + level(hi - 1));
    }
    if lo == 0 {
        return 0.0;
    }
    if lo == n {
        return 1.0;
    }
    let (a, b) = (lo - 1, lo);
    level(a) + (x - refs[a]) / (refs[b] - refs[a]) * (level(b) - level(a))
}

fn probit(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

pub fn yeo_johnson(x: f64, lambda: f64) -> f64 {
    const EPS: f64 = 1e-12;
    if x >= 0.0 {
        if lambda.abs() < EPS {
            x.ln_1p()
        } else {
            ((x + 1.0).powf(lambda) - 1.0) / lambda
        }
    } else if (lambda - 2.0).abs() < EPS {
        -(-x).ln_1p()
    } else {
        -((1.0 - x).powf(2.0 - lambda) - 1.0) / (2.0 - lambda)
    }
}

/// Gaussian profile log-likelihood of a Yeo-Johnson exponent. Returns
/// negative infinity when the transformed column has no spread.
pub fn yeo_johnson_log_likelihood(col: &[f64], lambda: f64) -> f64 {
    let n = col.len() as f64;
    let transformed: Vec<f64> = col.iter().map(|&x| yeo_johnson(x, lambda)).collect();
    let (_, std) = mean_std(&transformed);
    let var = std * std;
    if !(var > 0.0) || !var.is_finite() {
        return f64::NEG_INFINITY;
    }
    let jacobian: f64 = col.iter().map(|&x| x.signum() * x.abs().ln_1p()).sum();
    -0.5 * n * var.ln() + (lambda - 1.0) * jacobian
}

/// Maximizes the profile likelihood over `[-5, 5]`: a unit grid locates the
/// bracket, golden-section search refines inside it.
pub fn fit_yeo_johnson_lambda(col: &[f64]) -> f64 {
    let ll = |l: f64| {
        let v = yeo_johnson_log_likelihood(col, l);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let (lo, hi) = LAMBDA_RANGE;
    let grid: Vec<f64> = (lo as i32..=hi as i32).map(f64::from).collect();
    let scores: Vec<f64> = grid.iter().map(|&l| ll(l)).collect();
    let (best_i, &best_score) = scores
        .iter()
        .enumerate()
        .fold((0, &f64::NEG_INFINITY), |acc, (i, s)| if *s > *acc.1 { (i, s) } else { acc });
    if best_score == f64::NEG_INFINITY {
        return 1.0;
    }
    let mut best = (grid[best_i], best_score);
    let mut a = grid[best_i.saturating_sub(1)];
    let mut b = grid[(best_i + 1).min(grid.len() - 1)];

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = ll(c);
    let mut fd = ll(d);
    for _ in 0..GOLDEN_MAX_ITERS {
        if (b - a).abs() < GOLDEN_TOL {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = ll(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = ll(d);
        }
        for (l, f) in [(c, fc), (d, fd)] {
            if f > best.1 {
                best = (l, f);
            }
        }
    }
    best.0
}

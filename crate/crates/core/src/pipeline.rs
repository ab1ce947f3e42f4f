//! Fits the preprocessing chain on training rows and produces the numerical
//! design matrices every learner consumes.
//!
//! Order: impute, normalize, encode numerical features; impute, encode
//! categorical features; concatenate. Ordinal category indices are
//! standardized with training statistics so distance- and gradient-based
//! learners see them on the same scale as numerical columns.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Part, Table, TaskType};
use crate::encode_cat::{CatEncoderConfig, CatPolicy, FittedCatEncoder};
use crate::encode_num::{FittedNumEncoder, NumPolicy, DEFAULT_N_BINS};
use crate::error::Result;
use crate::matrix::Matrix;
use crate::methods::Design;
use crate::preprocess::{
    fit_imputer, fit_normalizer, mean_std, CatNanPolicy, FittedImputer, FittedNormalizer, Normalization, NumNanPolicy,
};

const STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub normalization: Normalization,
    pub num_nan_policy: NumNanPolicy,
    pub cat_nan_policy: CatNanPolicy,
    pub num_policy: NumPolicy,
    pub cat_policy: CatPolicy,
    pub n_bins: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            normalization: Normalization::Standard,
            num_nan_policy: NumNanPolicy::Mean,
            cat_nan_policy: CatNanPolicy::MostFrequent,
            num_policy: NumPolicy::None,
            cat_policy: CatPolicy::OneHot,
            n_bins: DEFAULT_N_BINS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Preprocessor {
    imputer: FittedImputer,
    normalizer: FittedNormalizer,
    num_encoder: FittedNumEncoder,
    cat_encoder: FittedCatEncoder,
    /// (mean, std) per ordinal column; empty for other categorical policies.
    ordinal_scale: Vec<(f64, f64)>,
}

impl Preprocessor {
    /// Fits on `train` and returns the encoded training rows.
    pub fn fit(train: &Table, task: TaskType, config: &PreprocessConfig, seed: u64) -> Result<(Self, Matrix)> {
        let imputer = fit_imputer(&train.num, &train.cat, config.num_nan_policy, config.cat_nan_policy)?;
        let num = imputer.transform_num(&train.num)?;
        let normalizer = fit_normalizer(&num, config.normalization)?;
        let num = normalizer.transform(&num)?;
        let num_encoder = FittedNumEncoder::fit(config.num_policy, &num, &train.labels, task, config.n_bins)?;
        let num = num_encoder.transform(&num)?;

        let cat = imputer.transform_cat(&train.cat)?;
        let cat_config = CatEncoderConfig {
            seed,
            ..CatEncoderConfig::default()
        };
        let (cat_encoder, mut cat_x) =
            FittedCatEncoder::fit_transform(config.cat_policy, &cat, &train.labels, task, &cat_config)?;
        let ordinal_scale = if config.cat_policy == CatPolicy::Ordinal {
            (0..cat_x.cols())
                .map(|c| {
                    let (m, s) = mean_std(&cat_x.column(c));
                    (m, if s < STD_FLOOR { 1.0 } else { s })
                })
                .collect()
        } else {
            Vec::new()
        };
        let pre = Self {
            imputer,
            normalizer,
            num_encoder,
            cat_encoder,
            ordinal_scale,
        };
        pre.scale_ordinal(&mut cat_x);
        Ok((pre, num.hstack(&cat_x)?))
    }

    fn scale_ordinal(&self, cat_x: &mut Matrix) {
        if self.ordinal_scale.is_empty() {
            return;
        }
        for r in 0..cat_x.rows() {
            for (v, (m, s)) in cat_x.row_mut(r).iter_mut().zip(&self.ordinal_scale) {
                *v = (*v - m) / s;
            }
        }
    }

    /// Encodes rows that were not part of the fit.
    pub fn transform(&self, rows: &Table) -> Result<Matrix> {
        let num = self.imputer.transform_num(&rows.num)?;
        let num = self.normalizer.transform(&num)?;
        let num = self.num_encoder.transform(&num)?;
        let cat = self.imputer.transform_cat(&rows.cat)?;
        let mut cat_x = self.cat_encoder.transform(&cat)?;
        self.scale_ordinal(&mut cat_x);
        num.hstack(&cat_x)
    }

    pub fn output_width(&self) -> usize {
        self.num_encoder.output_width() + self.cat_encoder.output_width()
    }
}

/// Design matrices for the three partitions of one dataset.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Design,
    pub val: Design,
    pub test: Design,
    pub preprocessor: Preprocessor,
}

/// Fits preprocessing on the training partition only; val and test rows are
/// transformed afterwards and never influence any fitted statistic.
pub fn prepare(dataset: &Dataset, config: &PreprocessConfig, seed: u64) -> Result<Prepared> {
    let train_rows = dataset.part(Part::Train);
    let (preprocessor, train_x) = Preprocessor::fit(&train_rows, dataset.task(), config, seed)?;
    let encode = |part: Part| -> Result<Design> {
        let rows = dataset.part(part);
        let x = if rows.is_empty() {
            Matrix::zeros(0, preprocessor.output_width())
        } else {
            preprocessor.transform(&rows)?
        };
        Design::new(x, rows.labels)
    };
    let val = encode(Part::Val)?;
    let test = encode(Part::Test)?;
    Ok(Prepared {
        train: Design::new(train_x, train_rows.labels)?,
        val,
        test,
        preprocessor,
    })
}

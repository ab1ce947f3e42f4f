//! Tabular learning toolbox: dataset loading, missing-value handling,
//! normalization, numerical and categorical encodings, a registry of
//! learners behind one fit/predict contract, random-search tuning and
//! rank-based multi-seed evaluation.

pub mod data;
pub mod encode_cat;
pub mod encode_num;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod matrix;
pub mod methods;
pub mod pipeline;
pub mod preprocess;
pub mod tune;

pub use data::{load_dataset, split_holdout, Dataset, DatasetInfo, TaskType};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use methods::{get_method, Method, Prediction, Registry};

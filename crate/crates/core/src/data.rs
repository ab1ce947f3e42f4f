//! Dataset model, on-disk format and train/val/test splitting.
//!
//! A dataset lives in one directory holding `info.json` plus `train.csv`,
//! `val.csv` (optional) and `test.csv`. Each CSV has a header row and lists
//! the numerical columns first, then the categorical columns, then one label
//! column. Empty cells (and `nan` in numerical columns) are missing values.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Missing categorical cells are `None`.
pub type CatRow = Vec<Option<String>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskType {
    Binclass,
    /// Carries the class count, always at least 3.
    Multiclass(usize),
    Regression,
}

impl TaskType {
    pub fn multiclass(n_classes: usize) -> Result<Self> {
        if n_classes < 3 {
            return Err(Error::Schema(format!(
                "multiclass task needs at least 3 classes, got {n_classes}"
            )));
        }
        Ok(Self::Multiclass(n_classes))
    }

    pub fn n_classes(self) -> Option<usize> {
        match self {
            Self::Binclass => Some(2),
            Self::Multiclass(c) => Some(c),
            Self::Regression => None,
        }
    }

    pub fn is_classification(self) -> bool {
        !matches!(self, Self::Regression)
    }

    pub fn is_regression(self) -> bool {
        matches!(self, Self::Regression)
    }

    pub fn token(self) -> &'static str {
        match self {
            Self::Binclass => "binclass",
            Self::Multiclass(_) => "multiclass",
            Self::Regression => "regression",
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Numerical,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetInfo {
    pub name: String,
    pub task: TaskType,
    pub n_num_features: usize,
    pub n_cat_features: usize,
}

impl DatasetInfo {
    pub fn class_count(&self) -> Option<usize> {
        self.task.n_classes()
    }

    pub fn n_features(&self) -> usize {
        self.n_num_features + self.n_cat_features
    }

    pub fn column_kind(&self, column: usize) -> Option<ColumnKind> {
        if column < self.n_num_features {
            Some(ColumnKind::Numerical)
        } else if column < self.n_features() {
            Some(ColumnKind::Categorical)
        } else {
            None
        }
    }
}

/// `info.json` as stored on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct InfoFile {
    task_type: String,
    n_num_features: usize,
    n_cat_features: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Train,
    Val,
    Test,
}

/// Partition of row indices. The three sets are disjoint and cover `0..N`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn indices(&self, part: Part) -> &[usize] {
        match part {
            Part::Train => &self.train,
            Part::Val => &self.val,
            Part::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A subset of rows with both feature blocks and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub num: Matrix,
    pub cat: Vec<CatRow>,
    pub labels: Vec<f64>,
}

impl Table {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_cat(&self) -> usize {
        self.cat.first().map_or(0, Vec::len)
    }
}

/// The full table: every row of every partition, with the partition recorded
/// in `split`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    num: Matrix,
    cat: Vec<CatRow>,
    n_cat: usize,
    labels: Vec<f64>,
    task: TaskType,
    split: Split,
}

impl Dataset {
    /// Checks every structural invariant before building the dataset.
    pub fn new(
        num: Matrix,
        cat: Vec<CatRow>,
        n_cat: usize,
        labels: Vec<f64>,
        task: TaskType,
        split: Split,
    ) -> Result<Self> {
        let n = labels.len();
        if num.rows() != n || cat.len() != n {
            return Err(Error::Schema(format!(
                "block row counts differ: {} numerical, {} categorical, {} labels",
                num.rows(),
                cat.len(),
                n
            )));
        }
        if let Some(bad) = cat.iter().position(|r| r.len() != n_cat) {
            return Err(Error::Schema(format!(
                "categorical row {bad} has {} cells, expected {n_cat}",
                cat[bad].len()
            )));
        }
        let mut seen = vec![false; n];
        for &i in split.train.iter().chain(&split.val).chain(&split.test) {
            if i >= n || seen[i] {
                return Err(Error::Schema(format!(
                    "split index {i} is out of range or assigned twice"
                )));
            }
            seen[i] = true;
        }
        if split.len() != n {
            return Err(Error::Schema(format!(
                "split covers {} rows of {n}",
                split.len()
            )));
        }
        for (i, &y) in labels.iter().enumerate() {
            check_label(task, y).map_err(|m| Error::Schema(format!("label of row {i}: {m}")))?;
        }
        Ok(Self {
            num,
            cat,
            n_cat,
            labels,
            task,
            split,
        })
    }

    pub fn task(&self) -> TaskType {
        self.task
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_num(&self) -> usize {
        self.num.cols()
    }

    pub fn n_cat(&self) -> usize {
        self.n_cat
    }

    pub fn num(&self) -> &Matrix {
        &self.num
    }

    pub fn cat(&self) -> &[CatRow] {
        &self.cat
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn rows(&self, indices: &[usize]) -> Table {
        Table {
            num: self.num.select_rows(indices),
            cat: indices.iter().map(|&i| self.cat[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn part(&self, part: Part) -> Table {
        self.rows(self.split.indices(part))
    }

    /// Replaces the split; used after deriving a validation partition.
    pub fn with_split(self, split: Split) -> Result<Self> {
        Self::new(self.num, self.cat, self.n_cat, self.labels, self.task, split)
    }

    /// Mutable access to one row's cells and label. The caller is
    /// responsible for keeping labels valid for the task.
    pub fn row_mut(&mut self, row: usize) -> (&mut [f64], &mut CatRow, &mut f64) {
        (
            self.num.row_mut(row),
            &mut self.cat[row],
            &mut self.labels[row],
        )
    }
}

fn check_label(task: TaskType, y: f64) -> std::result::Result<(), String> {
    match task.n_classes() {
        None if !y.is_finite() => Err(format!("regression label {y} is not finite")),
        None => Ok(()),
        Some(c) => {
            if y.fract() != 0.0 || y < 0.0 || y >= c as f64 {
                Err(format!("class label {y} outside 0..{c}"))
            } else {
                Ok(())
            }
        }
    }
}

fn parse_info(path: &Path, name: &str) -> Result<DatasetInfo> {
    let text = fs::read_to_string(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let raw: InfoFile = serde_json::from_str(&text).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let task = match raw.task_type.as_str() {
        "binclass" => {
            if let Some(c) = raw.n_classes.filter(|&c| c != 2) {
                return Err(Error::Schema(format!("binclass task declares {c} classes")));
            }
            TaskType::Binclass
        }
        // A missing class count is inferred from the labels after loading.
        "multiclass" => TaskType::Multiclass(raw.n_classes.unwrap_or(0)),
        "regression" => TaskType::Regression,
        other => {
            return Err(Error::Schema(format!(
                "unknown task_type `{other}` (expected binclass, multiclass or regression)"
            )))
        }
    };
    Ok(DatasetInfo {
        name: raw.name.unwrap_or_else(|| name.to_string()),
        task,
        n_num_features: raw.n_num_features,
        n_cat_features: raw.n_cat_features,
    })
}

fn is_missing_num(cell: &str) -> bool {
    cell.is_empty() || cell.eq_ignore_ascii_case("nan")
}

struct RawPart {
    num: Vec<f64>,
    cat: Vec<CatRow>,
    labels: Vec<f64>,
}

fn read_part(path: &Path, info: &DatasetInfo) -> Result<RawPart> {
    let file_name = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Load {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let headers = reader.headers()?.clone();
    let expected = info.n_features() + 1;
    if headers.len() != expected {
        return Err(Error::Schema(format!(
            "{file_name} has {} columns but info declares {} numerical + {} categorical + 1 label",
            headers.len(),
            info.n_num_features,
            info.n_cat_features
        )));
    }
    let mut out = RawPart {
        num: Vec::new(),
        cat: Vec::new(),
        labels: Vec::new(),
    };
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != expected {
            return Err(Error::Schema(format!(
                "{file_name} row {row} has {} cells, expected {expected}",
                record.len()
            )));
        }
        let parse_err = |c: usize, message: String| Error::Parse {
            file: file_name.clone(),
            row,
            column: headers[c].to_string(),
            message,
        };
        for c in 0..info.n_num_features {
            let cell = record[c].trim();
            let v = if is_missing_num(cell) {
                f64::NAN
            } else {
                cell.parse::<f64>()
                    .map_err(|_| parse_err(c, format!("`{cell}` is not a number")))?
            };
            out.num.push(v);
        }
        let cat = (info.n_num_features..info.n_features())
            .map(|c| {
                let cell = &record[c];
                (!cell.is_empty()).then(|| cell.to_string())
            })
            .collect();
        out.cat.push(cat);
        let lc = info.n_features();
        let cell = record[lc].trim();
        let y = if info.task.is_classification() {
            cell.parse::<usize>()
                .map_err(|_| parse_err(lc, format!("`{cell}` is not a class index")))?
                as f64
        } else {
            let y = cell
                .parse::<f64>()
                .map_err(|_| parse_err(lc, format!("`{cell}` is not a number")))?;
            if !y.is_finite() {
                return Err(parse_err(lc, "regression label must be finite".into()));
            }
            y
        };
        out.labels.push(y);
    }
    Ok(out)
}

/// Loads `<path>/<name>/`. `val.csv` may be absent, in which case the
/// returned dataset has an empty validation partition (see [`split_holdout`]).
pub fn load_dataset(path: impl AsRef<Path>, name: &str) -> Result<(Dataset, DatasetInfo)> {
    let dir = path.as_ref().join(name);
    if !dir.is_dir() {
        return Err(Error::Load {
            path: dir,
            message: "dataset directory does not exist".into(),
        });
    }
    let mut info = parse_info(&dir.join("info.json"), name)?;
    let required = |f: &str| -> Result<PathBuf> {
        let p = dir.join(f);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::Load {
                path: p,
                message: "file not found".into(),
            })
        }
    };
    let train = read_part(&required("train.csv")?, &info)?;
    let val_path = dir.join("val.csv");
    let val = if val_path.is_file() {
        Some(read_part(&val_path, &info)?)
    } else {
        None
    };
    let test = read_part(&required("test.csv")?, &info)?;

    let mut num = Vec::new();
    let mut cat = Vec::new();
    let mut labels = Vec::new();
    let mut split = Split::default();
    for (part, target) in [
        (Some(train), &mut split.train),
        (val, &mut split.val),
        (Some(test), &mut split.test),
    ] {
        let Some(part) = part else { continue };
        let start = labels.len();
        target.extend(start..start + part.labels.len());
        num.extend(part.num);
        cat.extend(part.cat);
        labels.extend(part.labels);
    }

    if info.task == TaskType::Multiclass(0) {
        let max = labels.iter().fold(0.0f64, |m, &y| m.max(y));
        info.task = TaskType::multiclass(max as usize + 1)?;
    } else if let TaskType::Multiclass(c) = info.task {
        info.task = TaskType::multiclass(c)?;
    }
    let num = Matrix::from_vec(labels.len(), info.n_num_features, num)?;
    let dataset = Dataset::new(num, cat, info.n_cat_features, labels, info.task, split)?;
    Ok((dataset, info))
}

fn write_part(path: &Path, dataset: &Dataset, info: &DatasetInfo, rows: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..info.n_num_features).map(|i| format!("num_{i}")).collect();
    header.extend((0..info.n_cat_features).map(|i| format!("cat_{i}")));
    header.push("label".into());
    w.write_record(&header)?;
    for &r in rows {
        let mut rec: Vec<String> = dataset
            .num
            .row(r)
            .iter()
            .map(|v| if v.is_nan() { String::new() } else { v.to_string() })
            .collect();
        rec.extend(dataset.cat[r].iter().map(|c| c.clone().unwrap_or_default()));
        rec.push(dataset.labels[r].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `dataset` into `<path>/<info.name>/` in the format read by
/// [`load_dataset`]. `val.csv` is omitted when the validation partition is empty.
pub fn save_dataset(dataset: &Dataset, info: &DatasetInfo, path: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = path.as_ref().join(&info.name);
    fs::create_dir_all(&dir)?;
    let raw = InfoFile {
        task_type: info.task.token().to_string(),
        n_num_features: info.n_num_features,
        n_cat_features: info.n_cat_features,
        n_classes: match info.task {
            TaskType::Multiclass(c) => Some(c),
            _ => None,
        },
        name: Some(info.name.clone()),
    };
    fs::write(dir.join("info.json"), serde_json::to_string_pretty(&raw)?)?;
    write_part(&dir.join("train.csv"), dataset, info, &dataset.split.train)?;
    if !dataset.split.val.is_empty() {
        write_part(&dir.join("val.csv"), dataset, info, &dataset.split.val)?;
    }
    write_part(&dir.join("test.csv"), dataset, info, &dataset.split.test)?;
    Ok(dir)
}

/// Moves a seeded random fraction of the training rows into the validation
/// partition. Classification splits are stratified: every class with at
/// least two training rows contributes at least one validation row.
pub fn split_holdout(dataset: &Dataset, val_fraction: f64, seed: u64) -> Result<Dataset> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "val_fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    if !dataset.split.val.is_empty() {
        return Err(Error::Argument(
            "dataset already has a validation partition".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<usize>> = match dataset.task.n_classes() {
        Some(c) => {
            let mut g = vec![Vec::new(); c];
            for &i in &dataset.split.train {
                g[dataset.labels[i] as usize].push(i);
            }
            g
        }
        None => vec![dataset.split.train.clone()],
    };
    let mut train = Vec::new();
    let mut val = Vec::new();
    for mut group in groups {
        group.shuffle(&mut rng);
        let n = group.len();
        let mut n_val = (n as f64 * val_fraction).round() as usize;
        if n >= 2 {
            n_val = n_val.clamp(1, n - 1);
        } else {
            n_val = 0;
        }
        val.extend_from_slice(&group[..n_val]);
        train.extend_from_slice(&group[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    let split = Split {
        train,
        val,
        test: dataset.split.test.clone(),
    };
    dataset.clone().with_split(split)
}

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tabkit::data::{save_dataset, Split};
use tabkit::{Dataset, DatasetInfo, Matrix, TaskType};

pub const N_NUM: usize = 4;
pub const N_CAT: usize = 2;
const LEVELS: usize = 4;
const MISSING: f64 = 0.02;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Mixed numerical/categorical table with a nonlinear signal. Rows are
/// split 60/20/20 into train/val/test.
pub fn synthetic(task: TaskType, n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let effects: Vec<Vec<f64>> = (0..N_CAT).map(|_| (0..LEVELS).map(|_| normal(&mut rng)).collect()).collect();
    let mut num = Vec::with_capacity(n * N_NUM);
    let mut cat = Vec::with_capacity(n);
    let mut signal = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..N_NUM).map(|_| normal(&mut rng)).collect();
        let levels: Vec<usize> = (0..N_CAT).map(|_| rng.gen_range(0..LEVELS)).collect();
        let mut f = (2.0 * x[0]).sin() + x[1] * x[2] + 0.5 * x[3];
        for (c, &l) in levels.iter().enumerate() {
            f += effects[c][l];
        }
        signal.push(f + 0.3 * normal(&mut rng));
        for v in x {
            num.push(if rng.gen_bool(MISSING) { f64::NAN } else { v });
        }
        cat.push(
            levels
                .iter()
                .map(|l| (!rng.gen_bool(MISSING)).then(|| format!("level_{l}")))
                .collect(),
        );
    }
    let labels: Vec<f64> = match task {
        TaskType::Regression => signal,
        _ => {
            let c = task.n_classes().unwrap();
            let mut sorted = signal.clone();
            sorted.sort_by(f64::total_cmp);
            let cuts: Vec<f64> = (1..c).map(|k| sorted[k * n / c]).collect();
            signal.iter().map(|s| cuts.iter().filter(|&&t| *s >= t).count() as f64).collect()
        }
    };
    let (a, b) = (n * 6 / 10, n * 8 / 10);
    let split = Split {
        train: (0..a).collect(),
        val: (a..b).collect(),
        test: (b..n).collect(),
    };
    Dataset::new(Matrix::from_vec(n, N_NUM, num).unwrap(), cat, N_CAT, labels, task, split).unwrap()
}

pub fn info(name: &str, task: TaskType) -> DatasetInfo {
    DatasetInfo {
        name: name.to_string(),
        task,
        n_num_features: N_NUM,
        n_cat_features: N_CAT,
    }
}

/// Writes a synthetic dataset under `root/name`.
pub fn write_synthetic(root: &Path, name: &str, task: TaskType, n: usize, seed: u64) -> PathBuf {
    save_dataset(&synthetic(task, n, seed), &info(name, task), root).unwrap()
}

pub fn tabkit(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tabkit"))
        .args(args)
        .current_dir(cwd)
        .env_remove("TALENT_DATA")
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

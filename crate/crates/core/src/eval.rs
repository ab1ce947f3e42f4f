//! Metrics, the multi-seed protocol, average-rank comparison and the report
//! files (`results.csv`, `ranks.csv`, `rank_vs_time.svg`).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TaskType};
use crate::error::{Error, Result};
use crate::methods::{FitContext, MethodEntry, Model, Params, Prediction};
use crate::pipeline::{prepare, PreprocessConfig};

const PROB_CLIP: f64 = 1e-15;
const ROW_SUM_TOL: f64 = 1e-6;
/// Stand-in for an unbounded negative R2 (constant targets, imperfect fit).
pub const R2_SENTINEL: f64 = -1e12;

pub const CLASSIFICATION_METRICS: [&str; 6] = ["accuracy", "avg_recall", "avg_precision", "f1", "logloss", "auc"];
pub const REGRESSION_METRICS: [&str; 3] = ["mae", "rmse", "r2"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MetricSet {
    Classification {
        accuracy: f64,
        avg_recall: f64,
        avg_precision: f64,
        f1: f64,
        logloss: f64,
        auc: f64,
    },
    Regression {
        mae: f64,
        rmse: f64,
        r2: f64,
    },
}

impl MetricSet {
    pub fn names(&self) -> &'static [&'static str] {
        match self {
            Self::Classification { .. } => &CLASSIFICATION_METRICS,
            Self::Regression { .. } => &REGRESSION_METRICS,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match *self {
            Self::Classification {
                accuracy,
                avg_recall,
                avg_precision,
                f1,
                logloss,
                auc,
            } => vec![accuracy, avg_recall, avg_precision, f1, logloss, auc],
            Self::Regression { mae, rmse, r2 } => vec![mae, rmse, r2],
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names().iter().position(|n| *n == name).map(|i| self.values()[i])
    }

    fn from_named(values: &BTreeMap<&str, f64>) -> Option<Self> {
        let g = |k: &str| values.get(k).copied();
        if let (Some(mae), Some(rmse), Some(r2)) = (g("mae"), g("rmse"), g("r2")) {
            return Some(Self::Regression { mae, rmse, r2 });
        }
        Some(Self::Classification {
            accuracy: g("accuracy")?,
            avg_recall: g("avg_recall")?,
            avg_precision: g("avg_precision")?,
            f1: g("f1")?,
            logloss: g("logloss")?,
            auc: g("auc")?,
        })
    }

    /// The ranked metric: accuracy (higher is better) or RMSE (lower is better).
    pub fn ranking_score(&self) -> f64 {
        match *self {
            Self::Classification { accuracy, .. } => accuracy,
            Self::Regression { rmse, .. } => rmse,
        }
    }

    pub fn higher_is_better(&self) -> bool {
        matches!(self, Self::Classification { .. })
    }
}

/// Accuracy for classification, RMSE for regression; used for tuning and
/// early stopping.
pub fn validation_score(pred: &Prediction, truth: &[f64], task: TaskType) -> Result<f64> {
    Ok(compute_metrics(pred, truth, task)?.ranking_score())
}

pub fn compute_metrics(pred: &Prediction, truth: &[f64], task: TaskType) -> Result<MetricSet> {
    if pred.len() != truth.len() {
        return Err(Error::Metric(format!(
            "{} predictions for {} targets",
            pred.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Metric("no rows to score".into()));
    }
    match (pred, task.n_classes()) {
        (Prediction::Classes { probs, labels }, Some(c)) => {
            if probs.cols() != c {
                return Err(Error::Metric(format!("{} probability columns for {c} classes", probs.cols())));
            }
            for (r, row) in probs.iter_rows().enumerate() {
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::Metric(format!("probability row {r} sums to {s}")));
                }
            }
            let y: Vec<usize> = truth.iter().map(|&t| t as usize).collect();
            if y.iter().any(|&t| t >= c) {
                return Err(Error::Metric(format!("target outside 0..{c}")));
            }
            let (avg_recall, avg_precision, f1) = macro_prf(labels, &y, c);
            let logloss = y
                .iter()
                .enumerate()
                .map(|(i, &t)| -probs.get(i, t).clamp(PROB_CLIP, 1.0 - PROB_CLIP).ln())
                .sum::<f64>()
                / y.len() as f64;
            let auc = if c == 2 {
                let pos: Vec<bool> = y.iter().map(|&t| t == 1).collect();
                binary_auc(&probs.column(1), &pos).unwrap_or(0.5)
            } else {
                let per_class: Vec<f64> = (0..c)
                    .filter_map(|k| {
                        let pos: Vec<bool> = y.iter().map(|&t| t == k).collect();
                        binary_auc(&probs.column(k), &pos)
                    })
                    .collect();
                if per_class.is_empty() {
                    0.5
                } else {
                    per_class.iter().sum::<f64>() / per_class.len() as f64
                }
            };
            Ok(MetricSet::Classification {
                accuracy: accuracy(labels, &y),
                avg_recall,
                avg_precision,
                f1,
                logloss,
                auc,
            })
        }
        (Prediction::Values(v), None) => {
            let n = v.len() as f64;
            let mae = v.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
            let ss_res: f64 = v.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
            let mean = truth.iter().sum::<f64>() / n;
            let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
            let r2 = if ss_tot > 0.0 {
                1.0 - ss_res / ss_tot
            } else if ss_res == 0.0 {
                0.0
            } else {
                R2_SENTINEL
            };
            Ok(MetricSet::Regression {
                mae,
                rmse: (ss_res / n).sqrt(),
                r2,
            })
        }
        _ => Err(Error::Metric(format!("prediction kind does not match task {task}"))),
    }
}

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64
}

/// Macro recall, precision and F1 over the classes that occur in either the
/// truth or the predictions; empty denominators count as 0.
fn macro_prf(pred: &[usize], truth: &[usize], c: usize) -> (f64, f64, f64) {
    let mut tp = vec![0usize; c];
    let mut n_pred = vec![0usize; c];
    let mut n_true = vec![0usize; c];
    for (&p, &t) in pred.iter().zip(truth) {
        n_pred[p] += 1;
        n_true[t] += 1;
        if p == t {
            tp[p] += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let present: Vec<usize> = (0..c).filter(|&k| n_pred[k] + n_true[k] > 0).collect();
    let (mut r, mut p, mut f) = (0.0, 0.0, 0.0);
    for &k in &present {
        let rk = ratio(tp[k], n_true[k]);
        let pk = ratio(tp[k], n_pred[k]);
        r += rk;
        p += pk;
        f += if rk + pk > 0.0 { 2.0 * pk * rk / (pk + rk) } else { 0.0 };
    }
    let m = present.len() as f64;
    (r / m, p / m, f / m)
}

/// Mann-Whitney statistic with average ranks for ties. `None` when one of
/// the two groups is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let ranks = average_ranks(scores, false);
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let n_pos = n_pos as f64;
    Some((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg as f64))
}

/// 1-based ranks with ties sharing their average rank. With `descending`,
/// the largest value gets rank 1.
pub fn average_ranks(values: &[f64], descending: bool) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let o = values[a].total_cmp(&values[b]);
        if descending {
            o.reverse()
        } else {
            o
        }
    });
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub method: String,
    pub seed: u64,
    pub metrics: MetricSet,
    pub time_s: f64,
    pub size: usize,
}

/// Everything needed to train and score one method on one dataset.
#[derive(Debug, Clone)]
pub struct RunSpec<'a> {
    pub entry: MethodEntry,
    pub params: &'a Params,
    pub preprocess: PreprocessConfig,
    pub dataset_name: &'a str,
    pub dataset: &'a Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedSummary {
    pub n_ok: usize,
    pub n_failed: usize,
    /// Per metric over successful seeds (population standard deviation).
    pub metrics: BTreeMap<String, MeanStd>,
    pub time_s: MeanStd,
}

#[derive(Debug)]
pub struct SeedRuns {
    pub records: Vec<RunRecord>,
    /// `(seed, message)` for each seed that failed.
    pub failed: Vec<(u64, String)>,
    pub summary: SeedSummary,
}

/// Preprocesses, fits on train (val for early stopping) and scores on test
/// for one seed.
pub fn run_once(spec: &RunSpec<'_>, seed: u64) -> Result<(RunRecord, Box<dyn Model>)> {
    let task = spec.dataset.task();
    if !spec.entry.tasks.allows(task) {
        return Err(Error::UnsupportedTask {
            method: spec.entry.name.to_string(),
            task: task.to_string(),
        });
    }
    let prepared = prepare(spec.dataset, &spec.preprocess, seed)?;
    let method = (spec.entry.build)(spec.params)?;
    let start = Instant::now();
    let model = method.fit(&prepared.train, &prepared.val, &FitContext { task, seed })?;
    let time_s = start.elapsed().as_secs_f64();
    let pred = model.predict(&prepared.test.x)?;
    let metrics = compute_metrics(&pred, &prepared.test.y, task)?;
    Ok((
        RunRecord {
            dataset: spec.dataset_name.to_string(),
            method: spec.entry.name.to_string(),
            seed,
            metrics,
            time_s,
            size: model.size(),
        },
        model,
    ))
}

/// Runs seeds `0..seed_num`. A failing seed is logged and skipped.
pub fn run_seeds(spec: &RunSpec<'_>, seed_num: u64) -> Result<SeedRuns> {
    if seed_num == 0 {
        return Err(Error::Argument("seed_num must be at least 1".into()));
    }
    let mut records = Vec::new();
    let mut failed = Vec::new();
    for seed in 0..seed_num {
        match run_once(spec, seed) {
            Ok((record, _)) => records.push(record),
            Err(e) => failed.push((seed, e.to_string())),
        }
    }
    let summary = summarize(&records, failed.len());
    Ok(SeedRuns {
        records,
        failed,
        summary,
    })
}

fn mean_std(values: &[f64]) -> MeanStd {
    if values.is_empty() {
        return MeanStd {
            mean: f64::NAN,
            std: f64::NAN,
        };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

pub fn summarize(records: &[RunRecord], n_failed: usize) -> SeedSummary {
    let mut metrics = BTreeMap::new();
    if let Some(first) = records.first() {
        for (i, name) in first.metrics.names().iter().enumerate() {
            let vals: Vec<f64> = records.iter().map(|r| r.metrics.values()[i]).collect();
            metrics.insert(name.to_string(), mean_std(&vals));
        }
    }
    let times: Vec<f64> = records.iter().map(|r| r.time_s).collect();
    SeedSummary {
        n_ok: records.len(),
        n_failed,
        metrics,
        time_s: mean_std(&times),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub mean_rank: f64,
    pub mean_time_s: f64,
    pub mean_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankTable {
    pub datasets: Vec<String>,
    pub methods: Vec<String>,
    /// `ranks[d][m]`: rank of method `m` on dataset `d`; 1 is best.
    pub ranks: Vec<Vec<f64>>,
    pub summary: Vec<MethodSummary>,
}

impl RankTable {
    pub fn mean_rank(&self, method: &str) -> Option<f64> {
        self.summary.iter().find(|s| s.method == method).map(|s| s.mean_rank)
    }
}

/// Per dataset, methods are ranked on their seed-averaged ranking metric
/// (ties share the average rank); ranks are then averaged across datasets,
/// pooling all task types.
pub fn rank_methods(records: &[RunRecord]) -> Result<RankTable> {
    if records.is_empty() {
        return Err(Error::Rank("no records to rank".into()));
    }
    let datasets: Vec<String> = records.iter().map(|r| r.dataset.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let methods: Vec<String> = records.iter().map(|r| r.method.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    // (dataset, method) -> (score sum, time sum, size sum, count, higher_is_better)
    let mut cells: BTreeMap<(&str, &str), (f64, f64, f64, usize, bool)> = BTreeMap::new();
    for r in records {
        let c = cells
            .entry((&r.dataset, &r.method))
            .or_insert((0.0, 0.0, 0.0, 0, r.metrics.higher_is_better()));
        c.0 += r.metrics.ranking_score();
        c.1 += r.time_s;
        c.2 += r.size as f64;
        c.3 += 1;
    }
    let mut ranks = Vec::with_capacity(datasets.len());
    for d in &datasets {
        let mut scores = Vec::with_capacity(methods.len());
        let mut higher = None;
        for m in &methods {
            let c = cells
                .get(&(d.as_str(), m.as_str()))
                .ok_or_else(|| Error::Rank(format!("missing result for method `{m}` on dataset `{d}`")))?;
            if *higher.get_or_insert(c.4) != c.4 {
                return Err(Error::Rank(format!("dataset `{d}` mixes classification and regression results")));
            }
            scores.push(c.0 / c.3 as f64);
        }
        ranks.push(average_ranks(&scores, higher.unwrap_or(true)));
    }
    let summary = methods
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let mean_rank = ranks.iter().map(|r| r[j]).sum::<f64>() / datasets.len() as f64;
            let (mut t, mut s, mut n) = (0.0, 0.0, 0usize);
            for d in &datasets {
                let c = cells[&(d.as_str(), m.as_str())];
                t += c.1;
                s += c.2;
                n += c.3;
            }
            MethodSummary {
                method: m.clone(),
                mean_rank,
                mean_time_s: t / n as f64,
                mean_size: s / n as f64,
            }
        })
        .collect();
    Ok(RankTable {
        datasets,
        methods,
        ranks,
        summary,
    })
}

/// Metric columns present in `records`, classification metrics first.
fn metric_columns(records: &[RunRecord]) -> Vec<&'static str> {
    let cls = records.iter().any(|r| r.metrics.higher_is_better());
    let reg = records.iter().any(|r| !r.metrics.higher_is_better());
    let mut cols = Vec::new();
    if cls {
        cols.extend(CLASSIFICATION_METRICS);
    }
    if reg {
        cols.extend(REGRESSION_METRICS);
    }
    cols
}

pub fn write_results(records: &[RunRecord], path: &Path) -> Result<()> {
    let metrics = metric_columns(records);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["dataset", "method", "seed"];
    header.extend(&metrics);
    header.extend(["time_s", "size"]);
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.dataset.clone(), r.method.clone(), r.seed.to_string()];
        for m in &metrics {
            row.push(r.metrics.get(m).map(|v| v.to_string()).unwrap_or_default());
        }
        row.push(r.time_s.to_string());
        row.push(r.size.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<RunRecord>> {
    let mut rd = csv::Reader::from_path(path)?;
    let header = rd.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| Error::Metric(format!("results file lacks column `{name}`")));
    let (d, m, s, t, z) = (need("dataset")?, need("method")?, need("seed")?, need("time_s")?, need("size")?);
    let parse_f = |v: &str| -> Result<f64> { v.parse().map_err(|_| Error::Metric(format!("bad number `{v}`"))) };
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row?;
        let mut named = BTreeMap::new();
        for name in CLASSIFICATION_METRICS.iter().chain(&REGRESSION_METRICS) {
            if let Some(i) = col(name) {
                if !row[i].is_empty() {
                    named.insert(*name, parse_f(&row[i])?);
                }
            }
        }
        out.push(RunRecord {
            dataset: row[d].to_string(),
            method: row[m].to_string(),
            seed: row[s].parse().map_err(|_| Error::Metric(format!("bad seed `{}`", &row[s])))?,
            metrics: MetricSet::from_named(&named).ok_or_else(|| Error::Metric("incomplete metric row".into()))?,
            time_s: parse_f(&row[t])?,
            size: row[z].parse().map_err(|_| Error::Metric(format!("bad size `{}`", &row[z])))?,
        });
    }
    Ok(out)
}

pub fn write_ranks(table: &RankTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "mean_rank", "mean_time_s", "mean_size"])?;
    for s in &table.summary {
        w.write_record([
            s.method.clone(),
            s.mean_rank.to_string(),
            s.mean_time_s.to_string(),
            s.mean_size.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Mean rank (y, best at the top) against mean training time (x, log
/// scale); circle radius grows with the square root of model size.
pub fn render_rank_plot(table: &RankTable) -> String {
    const W: f64 = 720.0;
    const H: f64 = 480.0;
    const PAD: f64 = 70.0;
    const R_MIN: f64 = 4.0;
    const R_MAX: f64 = 30.0;
    let log_t: Vec<f64> = table.summary.iter().map(|s| s.mean_time_s.max(1e-6).log10()).collect();
    let (t_lo, t_hi) = bounds(&log_t);
    let ranks: Vec<f64> = table.summary.iter().map(|s| s.mean_rank).collect();
    let (r_lo, r_hi) = bounds(&ranks);
    let max_size = table.summary.iter().map(|s| s.mean_size).fold(0.0, f64::max);
    let sx = |v: f64| PAD + (v - t_lo) / (t_hi - t_lo) * (W - 2.0 * PAD);
    let sy = |v: f64| PAD + (v - r_lo) / (r_hi - r_lo) * (H - 2.0 * PAD);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<line x1="{PAD}" y1="{y}" x2="{x2}" y2="{y}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{y}" stroke="black"/>"#,
        y = H - PAD,
        x2 = W - PAD
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">mean training time (s, log scale): {:.3e} .. {:.3e}</text>"#,
        W / 2.0,
        H - PAD / 3.0,
        10f64.powf(t_lo),
        10f64.powf(t_hi)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{x}" y="{y}" transform="rotate(-90 {x} {y})" text-anchor="middle">mean rank (lower is better): {r_lo:.2} .. {r_hi:.2}</text>"#,
        x = PAD / 3.0,
        y = H / 2.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{PAD}" y="{}">circle area ~ model size (trees: node count; others: parameter count)</text>"#,
        PAD / 2.0
    );
    for (s, lt) in table.summary.iter().zip(&log_t) {
        let r = if max_size > 0.0 {
            R_MIN + (R_MAX - R_MIN) * (s.mean_size / max_size).sqrt()
        } else {
            R_MIN
        };
        let (cx, cy) = (sx(*lt), sy(s.mean_rank));
        let _ = writeln!(
            svg,
            r##"<circle cx="{cx:.2}" cy="{cy:.2}" r="{r:.2}" fill="#4c72b0" fill-opacity="0.5" stroke="#4c72b0"/><text x="{:.2}" y="{:.2}">{} ({:.2})</text>"##,
            cx + r + 3.0,
            cy + 4.0,
            escape(&s.method),
            s.mean_rank
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Padded min/max so single points and flat ranges still get an axis.
fn bounds(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.1).max(0.5);
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub results: PathBuf,
    pub ranks: PathBuf,
    pub plot: PathBuf,
}

pub fn emit_report(table: &RankTable, records: &[RunRecord], dir: &Path) -> Result<ReportPaths> {
    fs::create_dir_all(dir)?;
    let paths = ReportPaths {
        results: dir.join("results.csv"),
        ranks: dir.join("ranks.csv"),
        plot: dir.join("rank_vs_time.svg"),
    };
    write_results(records, &paths.results)?;
    write_ranks(table, &paths.ranks)?;
    fs::write(&paths.plot, render_rank_plot(table))?;
    Ok(paths)
}

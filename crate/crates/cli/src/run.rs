use std::path::Path;

use serde_json::Value;
use tabkit::eval::{emit_report, rank_methods, run_seeds, RunSpec};
use tabkit::methods::{Family, Params};
use tabkit::pipeline::{prepare, PreprocessConfig};
use tabkit::tune::{parse_space, read_config_text, tune_hyper_parameters, ModelConfig, TuneRequest};
use tabkit::{get_method, load_dataset, split_holdout, Error, Result};

use crate::RunArgs;

/// Held out from train when a dataset ships without `val.csv`.
const VAL_FRACTION: f64 = 0.2;
const CONFIG_DIR: &str = "configs";

/// Command-line values that override the configuration file.
fn overrides(args: &RunArgs) -> Params {
    let mut p = Params::new();
    if let Some(e) = args.max_epoch {
        p.insert("max_epoch".into(), Value::from(e));
    }
    if let Some(b) = args.batch_size {
        p.insert("batch_size".into(), Value::from(b));
    }
    p
}

pub fn execute(family: Family, args: &RunArgs) -> Result<()> {
    let entry = get_method(&args.model_type)?;
    if entry.family != family {
        return Err(Error::Family {
            name: entry.name.to_string(),
            expected: family.to_string(),
        });
    }
    if args.seed_num == 0 {
        return Err(Error::Argument("seed_num must be at least 1".into()));
    }

    let (mut dataset, info) = load_dataset(&args.dataset_path, &args.dataset)?;
    if !entry.tasks.allows(dataset.task()) {
        return Err(Error::UnsupportedTask {
            method: entry.name.to_string(),
            task: dataset.task().to_string(),
        });
    }
    if dataset.split().val.is_empty() {
        dataset = split_holdout(&dataset, VAL_FRACTION, 0)?;
    }

    let config_dir = Path::new(CONFIG_DIR);
    let config_dir = config_dir.is_dir().then_some(config_dir);
    let mut config = ModelConfig::parse(&read_config_text(config_dir, "default", entry.name)?)?;
    let cli = overrides(args);
    for (k, v) in &cli {
        config.set(k, v.clone());
    }
    let preprocess = PreprocessConfig {
        normalization: args.normalization,
        num_nan_policy: args.num_nan_policy,
        cat_nan_policy: args.cat_nan_policy,
        num_policy: args.num_policy,
        cat_policy: args.cat_policy,
        ..PreprocessConfig::default()
    };

    if args.tune {
        let space = parse_space(&read_config_text(config_dir, "opt_space", entry.name)?)?;
        let prepared = prepare(&dataset, &preprocess, 0)?;
        let outcome = tune_hyper_parameters(&TuneRequest {
            entry,
            default: &config,
            space: &space,
            overrides: &cli,
            train: &prepared.train,
            val: &prepared.val,
            task: dataset.task(),
            n_trials: args.n_trials,
            seed: 0,
        })?;
        for t in outcome.trials.iter().filter(|t| t.error.is_some()) {
            eprintln!("trial {} failed: {}", t.index, t.error.as_deref().unwrap_or_default());
        }
        let best = &outcome.trials[outcome.best_index];
        println!(
            "tuning: best trial {} of {} (validation {:.6}): {}",
            best.index,
            outcome.trials.len(),
            best.score.unwrap_or(f64::NAN),
            serde_json::to_string(&outcome.best.to_value()).unwrap_or_default()
        );
        config = outcome.best;
    }

    println!("config: {}", serde_json::to_string(&config.to_value()).unwrap_or_default());
    let params = config.flatten();
    let runs = run_seeds(
        &RunSpec {
            entry,
            params: &params,
            preprocess,
            dataset_name: &info.name,
            dataset: &dataset,
        },
        args.seed_num,
    )?;
    for (seed, msg) in &runs.failed {
        eprintln!("seed {seed} failed: {msg}");
    }
    if runs.records.is_empty() {
        return Err(Error::Fit(format!("all {} seeds failed", args.seed_num)));
    }
    println!(
        "{} on {} ({} seeds, {} failed)",
        entry.name, info.name, runs.summary.n_ok, runs.summary.n_failed
    );
    for (name, ms) in &runs.summary.metrics {
        println!("  {name:<14} {:.6} +- {:.6}", ms.mean, ms.std);
    }
    println!("  {:<14} {:.6} +- {:.6}", "time_s", runs.summary.time_s.mean, runs.summary.time_s.std);

    let table = rank_methods(&runs.records)?;
    let paths = emit_report(&table, &runs.records, &args.output_dir)?;
    println!("wrote {}", paths.results.display());
    Ok(())
}

mod support;

use std::fs;

use serde_json::Value;
use support::{stderr, stdout, tabkit, write_synthetic};
use tabkit::TaskType;

fn config_line(out: &str) -> Value {
    let line = out.lines().find_map(|l| l.strip_prefix("config: ")).expect("config line");
    serde_json::from_str(line).unwrap()
}

fn time_free(csv: &str) -> String {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let t = header.iter().position(|h| *h == "time_s").unwrap();
    csv.lines()
        .map(|l| l.split(',').enumerate().filter(|(i, _)| *i != t).map(|(_, f)| f).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn knn_smoke_run_writes_one_row_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic(&dir.path().join("data"), "demo", TaskType::Multiclass(3), 150, 1);
    let o = tabkit(&["classical", "--model_type", "knn", "--dataset", "demo", "--seed_num", "3"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let results = fs::read_to_string(dir.path().join("results/results.csv")).unwrap();
    assert_eq!(results.lines().count(), 4);
    assert!(results.starts_with("dataset,method,seed,accuracy,"));
    assert!(dir.path().join("results/ranks.csv").is_file());
    assert!(dir.path().join("results/rank_vs_time.svg").is_file());
}

#[test]
fn mlp_uses_listed_defaults_and_cli_epoch_wins() {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic(&dir.path().join("data"), "demo", TaskType::Binclass, 120, 2);
    let o = tabkit(
        &["deep", "--model_type", "mlp", "--dataset", "demo", "--seed_num", "1", "--max_epoch", "3"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let c = config_line(&stdout(&o));
    assert_eq!(c["mlp"]["model"]["d_layers"], serde_json::json!([384, 384]));
    assert_eq!(c["mlp"]["model"]["dropout"], 0.1);
    assert_eq!(c["mlp"]["training"]["lr"], 3e-4);
    assert_eq!(c["mlp"]["training"]["max_epoch"], 3);
}

#[test]
fn configs_directory_in_working_dir_is_preferred() {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic(&dir.path().join("data"), "demo", TaskType::Binclass, 120, 3);
    fs::create_dir_all(dir.path().join("configs/default")).unwrap();
    fs::write(dir.path().join("configs/default/knn.json"), r#"{"knn": {"model": {"n_neighbors": 7}}}"#).unwrap();
    let o = tabkit(&["classical", "--model_type", "knn", "--dataset", "demo", "--seed_num", "1"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(config_line(&stdout(&o))["knn"]["model"]["n_neighbors"], 7);
}

#[test]
fn unknown_normalization_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = tabkit(
        &["classical", "--model_type", "knn", "--dataset", "demo", "--normalization", "zscore"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("zscore"));
}

#[test]
fn missing_dataset_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = tabkit(&["classical", "--model_type", "knn", "--dataset", "nowhere"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("nowhere"), "{}", stderr(&o));
}

#[test]
fn family_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic(&dir.path().join("data"), "demo", TaskType::Binclass, 60, 4);
    let o = tabkit(&["classical", "--model_type", "mlp", "--dataset", "demo"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("mlp"));
    let o = tabkit(&["deep", "--model_type", "knn", "--dataset", "demo"], dir.path());
    assert!(!o.status.success());
}

#[test]
fn regression_only_method_rejects_classification() {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic(&dir.path().join("data"), "demo", TaskType::Multiclass(3), 60, 5);
    let o = tabkit(&["classical", "--model_type", "linear_regression", "--dataset", "demo"], dir.path());
    assert!(!o.status.success());
}

#[test]
fn single_trial_tuning_matches_untuned_run() {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic(&dir.path().join("data"), "demo", TaskType::Regression, 150, 6);
    let mut texts = Vec::new();
    for tune in ["True", "False"] {
        let out = format!("out_{tune}");
        let o = tabkit(
            &[
                "classical", "--model_type", "cart", "--dataset", "demo", "--seed_num", "2", "--tune", tune, "--n_trials",
                "1", "--output_dir", &out,
            ],
            dir.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
        texts.push(time_free(&fs::read_to_string(dir.path().join(out).join("results.csv")).unwrap()));
    }
    assert_eq!(texts[0], texts[1]);
}

//! End-to-end checks of the `krf` binary: exit codes, artifact wiring and
//! reproducibility.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn krf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_krf"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn krf")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const SMALL_CONFIG: &str = r#"
seed = 5

[simulate]
length_m = 150.0
records_per_ring = 2
nonworking_fraction = 0.05

[train]
n_trees = 12
max_depth = 6
min_samples_leaf = 2

[fusion]
window = 8
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    "config.toml".to_string()
}

#[test]
fn full_pipeline_produces_all_artifacts() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    for command in [
        "simulate",
        "preprocess",
        "fit-variogram",
        "train",
        "predict",
        "evaluate",
        "importance",
    ] {
        let out = krf(dir.path(), &[command, "--config", &config]);
        assert_ok(&out, command);
    }
    for artifact in [
        "telemetry.csv",
        "strata.csv",
        "truth.csv",
        "borehole.csv",
        "dataset.csv",
        "variogram.toml",
        "forest.json",
        "predictions.csv",
        "metrics.txt",
        "importance.csv",
    ] {
        assert!(dir.path().join(artifact).exists(), "{artifact} missing");
    }
    let metrics = std::fs::read_to_string(dir.path().join("metrics.txt")).unwrap();
    assert!(metrics.starts_with("# seed = 5\n"));
    assert!(metrics.contains("accuracy = "));
    assert!(metrics.contains("[confusion]"));
    assert!(metrics.contains("[per_class]"));
    assert!(metrics.contains("[pr_curve_micro]"));

    let importance = std::fs::read_to_string(dir.path().join("importance.csv")).unwrap();
    let sum: f64 = importance
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("feature"))
        .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((sum - 1.0).abs() < 1e-9, "importance sums to {sum}");
}

#[test]
fn predict_without_a_model_names_the_missing_artifact() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    assert_ok(&krf(dir.path(), &["simulate", "--config", &config]), "simulate");
    assert_ok(&krf(dir.path(), &["preprocess", "--config", &config]), "preprocess");
    let out = krf(dir.path(), &["predict", "--config", &config]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.lines().count() == 1 && stderr.starts_with("error: "),
        "diagnostic is not a single line: {stderr}"
    );
    assert!(stderr.contains("forest.json"), "missing artifact unnamed: {stderr}");
}

#[test]
fn unknown_commands_print_usage_and_exit_two() {
    let dir = TempDir::new().unwrap();
    let out = krf(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("Usage"), "no usage text: {stderr}");
}

#[test]
fn commands_do_not_mutate_their_inputs() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    assert_ok(&krf(dir.path(), &["simulate", "--config", &config]), "simulate");
    let telemetry_before = std::fs::read(dir.path().join("telemetry.csv")).unwrap();
    let strata_before = std::fs::read(dir.path().join("strata.csv")).unwrap();
    assert_ok(&krf(dir.path(), &["preprocess", "--config", &config]), "preprocess");
    assert_eq!(
        telemetry_before,
        std::fs::read(dir.path().join("telemetry.csv")).unwrap()
    );
    assert_eq!(
        strata_before,
        std::fs::read(dir.path().join("strata.csv")).unwrap()
    );
}

#[test]
fn seed_override_is_recorded_in_artifacts() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    assert_ok(
        &krf(dir.path(), &["simulate", "--config", &config, "--seed", "77"]),
        "simulate",
    );
    let telemetry = std::fs::read_to_string(dir.path().join("telemetry.csv")).unwrap();
    assert!(telemetry.starts_with("# seed = 77\n"));
}

#[test]
fn invalid_config_values_exit_one() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        "[fusion]\nmode = \"sideways\"\n",
    );
    let out = krf(dir.path(), &["simulate", "--config", &config]);
    // simulate ignores fusion, so it succeeds; predict must reject the mode
    assert_ok(&out, "simulate");
    let out = krf(dir.path(), &["preprocess", "--config", &config]);
    assert_ok(&out, "preprocess");
    let out = krf(dir.path(), &["fit-variogram", "--config", &config]);
    assert_ok(&out, "fit-variogram");
    let out = krf(dir.path(), &["train", "--config", &config]);
    assert_ok(&out, "train");
    let out = krf(dir.path(), &["predict", "--config", &config]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("sideways"), "unhelpful error: {stderr}");
}

#[test]
fn malformed_config_reports_one_diagnostic_line() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "[fusion\nwindow = 3");
    let out = krf(dir.path(), &["simulate", "--config", &config]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stderr.trim_end().lines().count(), 1, "stderr: {stderr}");
    assert!(stderr.starts_with("error: "));
}

#[test]
fn predict_honors_mode_and_window_overrides() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    for command in ["simulate", "preprocess", "fit-variogram", "train"] {
        assert_ok(&krf(dir.path(), &[command, "--config", &config]), command);
    }
    let out = krf(
        dir.path(),
        &[
            "predict",
            "--config",
            &config,
            "--mode",
            "paper-literal",
            "--window",
            "3",
        ],
    );
    assert_ok(&out, "predict with overrides");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("paper-literal"), "{stdout}");
    assert!(stdout.contains("window 3"), "{stdout}");
    // the default run differs from the overridden one
    let overridden = std::fs::read(dir.path().join("predictions.csv")).unwrap();
    assert_ok(&krf(dir.path(), &["predict", "--config", &config]), "predict default");
    let default = std::fs::read(dir.path().join("predictions.csv")).unwrap();
    assert_ne!(overridden, default);
}

#[test]
fn explicit_fusion_model_skips_the_variogram_artifact() {
    let dir = TempDir::new().unwrap();
    let config_text = format!(
        "{SMALL_CONFIG}
model_kind = \"spherical\"
nugget = 0.01
partial_sill = 0.09
range_m = 20.0
"
    );
    let config = write_config(dir.path(), &config_text);
    for command in ["simulate", "preprocess", "train", "predict", "evaluate"] {
        assert_ok(&krf(dir.path(), &[command, "--config", &config]), command);
    }
    assert!(!dir.path().join("variogram.toml").exists());
}

#[test]
fn grid_search_training_reports_candidates() {
    let dir = TempDir::new().unwrap();
    let config_text = r#"
seed = 6

[simulate]
length_m = 90.0
records_per_ring = 2

[train]
n_trees = 8
max_depth = 4
min_samples_leaf = 2
grid_search = true
cv_folds = 3
grid_max_depth = [2, 5]

[fusion]
window = 6
"#;
    let config = write_config(dir.path(), config_text);
    for command in ["simulate", "preprocess"] {
        assert_ok(&krf(dir.path(), &[command, "--config", &config]), command);
    }
    let out = krf(dir.path(), &["train", "--config", &config]);
    assert_ok(&out, "train with grid search");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(
        stdout.matches("cv trees=").count(),
        2,
        "expected one line per candidate: {stdout}"
    );
    assert!(dir.path().join("forest.json").exists());
}

#[test]
fn fit_variogram_log_transforms_skewed_series() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    // heavy right-skewed series with spatial structure
    let mut rows = String::from("chainage_m,value\n");
    let mut state = 0.0_f64;
    for i in 0..400 {
        // crude autoregressive positive series; exp() skews it hard
        state = 0.9 * state + 0.3 * ((i * 2654435761_u64 % 1000) as f64 / 1000.0 - 0.5);
        rows.push_str(&format!("{},{}\n", i as f64 * 1.5, (3.0 * state).exp()));
    }
    std::fs::write(dir.path().join("borehole.csv"), rows).unwrap();
    let out = krf(dir.path(), &["fit-variogram", "--config", &config]);
    assert_ok(&out, "fit-variogram");
    let artifact = std::fs::read_to_string(dir.path().join("variogram.toml")).unwrap();
    assert!(artifact.contains("transform = \"log\""), "{artifact}");
    assert!(artifact.contains("ks_normal = false"), "{artifact}");
}

//! End-to-end pipeline runs over small synthetic scenes.

use std::path::Path;

use facade_feats::error::Error;
use facade_feats::io::{save_point_cloud, CloudFormat, LabeledPointCloud};
use facade_feats::pipeline::{run_pipeline, RunConfig};
use facade_feats::synthetic::{generate, Scene};

/// ~500-point scene: a planar grid labeled 0 and a line above it labeled 1.
fn plane_plus_line() -> LabeledPointCloud {
    let plane = generate(Scene::Plane, 300, 0);
    let mut points = plane.points;
    let mut labels = vec![0u32; points.len()];
    for i in 0..200 {
        points.push([i as f64 * 0.01 + 1.0, 2.0, 1.0]);
        labels.push(1);
    }
    // A few isolated stragglers whose neighborhoods stay below
    // min_neighbors, so every run exercises the invalid-row paths.
    for i in 0..5 {
        points.push([i as f64 * 2.0, -3.0, 50.0]);
        labels.push(0);
    }
    let mut cloud = LabeledPointCloud::with_labels(points, labels);
    cloud.class_names.insert(0, "plane".to_string());
    cloud.class_names.insert(1, "line".to_string());
    cloud
}

fn write_scene_and_config(dir: &Path, out_name: &str) -> std::path::PathBuf {
    let scene_path = dir.join("scene.xyz");
    if !scene_path.exists() {
        save_point_cloud(&plane_plus_line(), &scene_path, CloudFormat::XyzLabelText).unwrap();
    }
    let config_path = dir.join(format!("{out_name}.toml"));
    let body = format!(
        r#"
input = "{}"
output_dir = "{}"
min_distance = 0.05
radius = 0.8
seed = 3

[forest]
n_trees = 20
"#,
        scene_path.display(),
        dir.join(out_name).display()
    );
    std::fs::write(&config_path, body).unwrap();
    config_path
}

#[test]
fn synthetic_scene_yields_six_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig::load(&write_scene_and_config(dir.path(), "out")).unwrap();
    let manifest = run_pipeline(&config).unwrap();

    assert_eq!(manifest.artifacts.len(), 6);
    for entry in &manifest.artifacts {
        let path = config.output_dir.join(&entry.name);
        assert!(path.exists(), "missing artifact {}", entry.name);
        assert_eq!(entry.sha256.len(), 64);
    }
    // No stale partial files may survive a successful run.
    for item in std::fs::read_dir(&config.output_dir).unwrap() {
        let name = item.unwrap().file_name();
        assert!(
            !name.to_string_lossy().ends_with(".partial"),
            "leftover partial artifact {name:?}"
        );
    }
}

#[test]
fn missing_input_fails_validation_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = write_scene_and_config(dir.path(), "out");
    let mut config = RunConfig::load(&config_path).unwrap();
    config.input = dir.path().join("no-such-cloud.xyz");

    match run_pipeline(&config).unwrap_err() {
        Error::Config(msg) => assert!(msg.contains("no-such-cloud")),
        other => panic!("expected a config error, got {other:?}"),
    }
    assert!(
        !config.output_dir.exists(),
        "validation failure must not create the output directory"
    );
}

#[test]
fn identical_configs_reproduce_identical_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let first = RunConfig::load(&write_scene_and_config(dir.path(), "a")).unwrap();
    let second = RunConfig::load(&write_scene_and_config(dir.path(), "b")).unwrap();
    let m1 = run_pipeline(&first).unwrap();
    let m2 = run_pipeline(&second).unwrap();
    assert_eq!(m1.artifacts, m2.artifacts);
}

/// Worst-case mode scores invalid-feature rows as errors under a synthetic
/// "invalid" predicted class; accuracy can only drop.
#[test]
fn include_invalid_lowers_accuracy_and_adds_invalid_class() {
    let dir = tempfile::tempdir().unwrap();
    let default_cfg = RunConfig::load(&write_scene_and_config(dir.path(), "default")).unwrap();
    let mut worst_cfg = RunConfig::load(&write_scene_and_config(dir.path(), "worst")).unwrap();
    worst_cfg.include_invalid = true;
    run_pipeline(&default_cfg).unwrap();
    run_pipeline(&worst_cfg).unwrap();

    let accuracy_of = |cfg: &RunConfig| -> f64 {
        let report = std::fs::read_to_string(cfg.output_dir.join("report.csv")).unwrap();
        report
            .lines()
            .find_map(|l| l.split("accuracy=").nth(1))
            .and_then(|rest| rest.split(&[';', ' ']).next())
            .unwrap()
            .parse()
            .unwrap()
    };
    let report = std::fs::read_to_string(worst_cfg.output_dir.join("report.csv")).unwrap();
    assert!(report.contains("invalid_as_errors="));
    assert!(report.lines().nth(1).unwrap().contains("invalid"));
    assert!(accuracy_of(&worst_cfg) <= accuracy_of(&default_cfg));
}

/// The schema shipped under data/ must stay in lockstep with the built-in
/// default so configs can reference either interchangeably.
#[test]
fn shipped_merge_schema_matches_builtin() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/default_merge.json");
    let shipped = facade_feats::io::ClassMergeSchema::load(&path).unwrap();
    let builtin = facade_feats::io::default_merge_schema();
    assert_eq!(shipped.mapping, builtin.mapping);
    assert_eq!(shipped.target_names, builtin.target_names);
}

#[test]
fn predictions_separate_the_two_classes() {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig::load(&write_scene_and_config(dir.path(), "out")).unwrap();
    run_pipeline(&config).unwrap();

    let report = std::fs::read_to_string(config.output_dir.join("report.csv")).unwrap();
    let accuracy: f64 = report
        .lines()
        .find_map(|l| l.split("accuracy=").nth(1))
        .and_then(|rest| rest.split(&[';', ' ']).next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(
        accuracy >= 0.9,
        "plane vs line should be nearly separable, accuracy {accuracy}"
    );
}

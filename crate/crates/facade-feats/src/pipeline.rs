//! End-to-end run driver: downsample → extract → train → predict →
//! evaluate → export, from a single TOML configuration.
//!
//! Every stage writes its artifact under the output directory, first to a
//! `.partial` file that is renamed on success, so an aborted run never
//! leaves a truncated artifact behind without the suffix. A `manifest.json`
//! with a SHA-256 per artifact is written last; identical config and inputs
//! reproduce identical manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::downsample::{distance_downsample, DownsampleSpec};
use crate::error::{Error, Result};
use crate::evaluation::{confusion, write_report_csv, ReportMetadata};
use crate::features::{extract_features_with, select_columns, FeatureSet, PlanarityFormula};
use crate::fusion_export::{export_fused, write_feature_table, FusionFormat};
use crate::io::{apply_class_merge, load_point_cloud, save_point_cloud, ClassMergeSchema,
                CloudFormat};
use crate::random_forest::{predict, save_model, train, ForestHyperparams};

fn default_min_neighbors() -> usize {
    10
}

fn default_feature_set() -> String {
    "nine_f".to_string()
}

/// Forest hyperparameters as they appear in the run config; the RNG seed
/// comes from the run-level `seed`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub features_per_split: String,
    pub bootstrap_fraction: f64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 1,
            features_per_split: "sqrt".to_string(),
            bootstrap_fraction: 1.0,
        }
    }
}

impl ForestConfig {
    pub fn to_hyperparams(&self, seed: u64) -> Result<ForestHyperparams> {
        let params = ForestHyperparams {
            n_trees: self.n_trees,
            max_depth: self.max_depth,
            min_samples_leaf: self.min_samples_leaf,
            features_per_split: self.features_per_split.parse()?,
            bootstrap_fraction: self.bootstrap_fraction,
            rng_seed: seed,
        };
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunConfig {
    pub input: PathBuf,
    /// `ascii_ply` or `xyz_label_text`; inferred from the extension when
    /// absent.
    #[serde(default)]
    pub input_format: Option<String>,
    #[serde(default)]
    pub merge_schema: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Downsample spacing in meters.
    pub min_distance: f64,
    /// Feature-extraction neighborhood radius in meters.
    pub radius: f64,
    #[serde(default = "default_min_neighbors")]
    pub min_neighbors: usize,
    /// `nine_f`, `six_f` or `xyz`.
    #[serde(default = "default_feature_set")]
    pub feature_set: String,
    /// Run seed; required so no run is silently nondeterministic.
    pub seed: u64,
    #[serde(default)]
    pub forest: ForestConfig,
    #[serde(default)]
    pub planarity_formula: PlanarityFormula,
    /// Score invalid-feature rows as guaranteed errors (worst-case
    /// accuracy) instead of excluding them from evaluation.
    #[serde(default)]
    pub include_invalid: bool,
    #[serde(default)]
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if !self.input.exists() {
            return Err(Error::Config(format!(
                "input file {} does not exist",
                self.input.display()
            )));
        }
        if let Some(schema) = &self.merge_schema {
            if !schema.exists() {
                return Err(Error::Config(format!(
                    "merge schema {} does not exist",
                    schema.display()
                )));
            }
        }
        if !self.min_distance.is_finite() || self.min_distance <= 0.0 {
            return Err(Error::Config("min_distance must be positive".to_string()));
        }
        if !self.radius.is_finite() || self.radius <= 0.0 {
            return Err(Error::Config("radius must be positive".to_string()));
        }
        if self.min_neighbors < 3 {
            return Err(Error::Config("min_neighbors must be at least 3".to_string()));
        }
        FeatureSet::by_name(&self.feature_set)
            .map_err(|e| Error::Config(e.to_string()))?;
        if let Some(fmt) = &self.input_format {
            fmt.parse::<CloudFormat>()
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        self.forest
            .to_hyperparams(self.seed)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Manifest {
    pub toolkit_version: String,
    pub artifacts: Vec<ManifestEntry>,
}

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Writes to `<path>.partial`, then renames into place.
fn write_artifact(
    dir: &Path,
    name: &str,
    write: impl FnOnce(&Path) -> Result<()>,
) -> Result<PathBuf> {
    let final_path = dir.join(name);
    let partial = dir.join(format!("{name}.partial"));
    write(&partial)?;
    fs::rename(&partial, &final_path).map_err(|e| Error::io(&final_path, e))?;
    Ok(final_path)
}

fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| e.in_stage(name))
}

/// Runs the full pipeline and returns the artifact manifest.
///
/// Artifacts, in stage order: `downsampled.xyz`, `features.csv`,
/// `model.json`, `predictions.txt`, `report.csv`, `fused.csv`.
pub fn run_pipeline(config: &RunConfig) -> Result<Manifest> {
    config.validate()?;
    fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
    let dir = config.output_dir.as_path();
    let mut artifacts: Vec<PathBuf> = Vec::new();

    // load
    let cloud = stage("load", || {
        let format = match &config.input_format {
            Some(f) => f.parse()?,
            None => CloudFormat::infer(&config.input),
        };
        let mut cloud = load_point_cloud(&config.input, format)?;
        if let Some(schema_path) = &config.merge_schema {
            let schema = ClassMergeSchema::load(schema_path)?;
            cloud = apply_class_merge(&cloud, &schema)?;
        }
        cloud.validate()?;
        if cloud.labels.is_none() {
            return Err(Error::invalid(
                "pipeline input must carry labels (training and evaluation need ground truth)",
            ));
        }
        Ok(cloud)
    })?;

    // downsample
    let downsampled = stage("downsample", || {
        let spec = DownsampleSpec::new(config.min_distance)?;
        let down = distance_downsample(&cloud, &spec)?;
        artifacts.push(write_artifact(dir, "downsampled.xyz", |p| {
            save_point_cloud(&down, p, CloudFormat::XyzLabelText)
        })?);
        Ok(down)
    })?;

    // extract
    let table = stage("extract", || {
        let table = extract_features_with(
            &downsampled,
            config.radius,
            config.min_neighbors,
            config.planarity_formula,
        )?;
        artifacts.push(write_artifact(dir, "features.csv", |p| {
            write_feature_table(&downsampled, &table, p)
        })?);
        Ok(table)
    })?;

    let set = FeatureSet::by_name(&config.feature_set)?;
    let labels = downsampled.labels.clone().unwrap_or_default();

    // train
    let (model, selected) = stage("train", || {
        let selected = select_columns(&downsampled, &table, &set, true)?;
        let train_rows: Vec<Vec<f64>> = selected
            .rows
            .iter()
            .zip(&selected.mask)
            .filter(|(_, &keep)| keep)
            .map(|(r, _)| r.clone())
            .collect();
        let train_labels: Vec<u32> = labels
            .iter()
            .zip(&selected.mask)
            .filter(|(_, &keep)| keep)
            .map(|(&l, _)| l)
            .collect();
        if train_rows.is_empty() {
            return Err(Error::invalid(
                "no valid feature rows to train on; check radius and min_neighbors",
            ));
        }
        let params = config.forest.to_hyperparams(config.seed)?;
        let model = train(&train_rows, &train_labels, &selected.column_names, &params)?;
        artifacts.push(write_artifact(dir, "model.json", |p| save_model(&model, p))?);
        Ok((model, selected))
    })?;

    // predict: invalid rows score as the most frequent training class.
    let predictions = stage("predict", || {
        let valid_rows: Vec<Vec<f64>> = selected
            .rows
            .iter()
            .zip(&selected.mask)
            .filter(|(_, &keep)| keep)
            .map(|(r, _)| r.clone())
            .collect();
        let valid_preds = predict(&model, &valid_rows, &selected.column_names)?;
        let fallback = most_frequent(&labels, &selected.mask);
        let mut preds = Vec::with_capacity(selected.rows.len());
        let mut it = valid_preds.into_iter();
        for &keep in &selected.mask {
            preds.push(if keep { it.next().unwrap() } else { fallback });
        }
        artifacts.push(write_artifact(dir, "predictions.txt", |p| {
            let body: String = preds.iter().map(|l| format!("{l}\n")).collect();
            fs::write(p, body).map_err(|e| Error::io(p, e))
        })?);
        Ok(preds)
    })?;

    // evaluate: invalid rows are excluded by default with the exclusion
    // count reported; `include_invalid` scores them as guaranteed errors
    // under a synthetic "invalid" predicted class instead.
    stage("evaluate", || {
        let invalid_rows = selected.mask.iter().filter(|v| !**v).count();
        let mut names: BTreeMap<u32, String> = downsampled.class_names.clone();
        let (pred_eval, truth_eval) = if config.include_invalid {
            let sentinel = labels
                .iter()
                .chain(&predictions)
                .copied()
                .max()
                .unwrap_or(0)
                + 1;
            names.insert(sentinel, "invalid".to_string());
            let preds: Vec<u32> = predictions
                .iter()
                .zip(&selected.mask)
                .map(|(&p, &keep)| if keep { p } else { sentinel })
                .collect();
            (preds, labels.clone())
        } else {
            let mut truth_valid = Vec::new();
            let mut pred_valid = Vec::new();
            for i in 0..labels.len() {
                if selected.mask[i] {
                    truth_valid.push(labels[i]);
                    pred_valid.push(predictions[i]);
                }
            }
            (pred_valid, truth_valid)
        };
        let mut class_ids: Vec<u32> = truth_eval
            .iter()
            .chain(&pred_eval)
            .copied()
            .collect();
        class_ids.sort_unstable();
        class_ids.dedup();
        let matrix = confusion(&pred_eval, &truth_eval, &class_ids)?;
        let mut meta = ReportMetadata::default();
        meta.push("radius", config.radius);
        meta.push("set", &set.name);
        meta.push("seed", config.seed);
        if config.include_invalid {
            meta.push("invalid_as_errors", invalid_rows);
        } else {
            meta.push("excluded", invalid_rows);
        }
        artifacts.push(write_artifact(dir, "report.csv", |p| {
            write_report_csv(&matrix, &names, &meta, p)
        })?);
        Ok(())
    })?;

    // export
    stage("export", || {
        artifacts.push(write_artifact(dir, "fused.csv", |p| {
            export_fused(&downsampled, &table, &set, p, FusionFormat::Csv).map(|_| ())
        })?);
        Ok(())
    })?;

    // manifest (not listed in itself)
    let mut entries: Vec<ManifestEntry> = artifacts
        .iter()
        .map(|p| {
            Ok(ManifestEntry {
                name: p.file_name().unwrap().to_string_lossy().into_owned(),
                sha256: sha256_hex(p)?,
            })
        })
        .collect::<Result<_>>()?;
    entries.sort_by(|a, b| a.name.cmp(&b.name));
    let manifest = Manifest {
        toolkit_version: crate::VERSION.to_string(),
        artifacts: entries,
    };
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::invalid(e.to_string()))?;
    fs::write(&manifest_path, json + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest)
}

fn most_frequent(labels: &[u32], mask: &[bool]) -> u32 {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for (&l, &keep) in labels.iter().zip(mask) {
        if keep {
            *counts.entry(l).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(l, _)| l)
        .unwrap_or(0)
}

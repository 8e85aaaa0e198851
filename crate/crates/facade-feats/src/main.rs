use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use facade_feats::downsample::{distance_downsample, DownsampleSpec};
use facade_feats::error::{Error, Result};
use facade_feats::evaluation::{confusion, write_report, ReportMetadata};
use facade_feats::features::{extract_features_with, FeatureSet, PlanarityFormula};
use facade_feats::fusion_export::{
    export_experiment_suite, export_fused, read_fused_csv, read_feature_table,
    write_feature_table, FusionFormat,
};
use facade_feats::io::{load_point_cloud, save_point_cloud, ClassMergeSchema, CloudFormat};
use facade_feats::pipeline::{run_pipeline, RunConfig};
use facade_feats::random_forest::{
    feature_importance, load_model, predict, save_model, train, FeaturesPerSplit,
    ForestHyperparams,
};
use facade_feats::synthetic::{generate, Scene};

#[derive(Parser)]
#[command(
    name = "facade-feats",
    version,
    about = "Geometric features, Random Forest classification and fusion exports for facade point clouds"
)]
struct Cli {
    /// Cap the number of worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline from a TOML run configuration.
    Run {
        /// Run-configuration file (see README for the schema).
        #[arg(long)]
        config: PathBuf,
    },
    /// Minimum-distance downsampling of a point cloud.
    Downsample {
        /// Minimum spacing between retained points, in meters.
        #[arg(long = "min-dist")]
        min_dist: f64,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        /// ascii_ply or xyz_label_text; inferred from extensions when omitted.
        #[arg(long)]
        format: Option<String>,
    },
    /// Compute covariance geometric features per point.
    Extract {
        /// Neighborhood radius in meters.
        #[arg(long, default_value_t = 0.8)]
        radius: f64,
        /// Rows with fewer neighbors are flagged invalid.
        #[arg(long = "min-neighbors", default_value_t = 10)]
        min_neighbors: usize,
        /// Input cloud (ascii_ply or xyz_label_text).
        #[arg(long = "in")]
        input: PathBuf,
        /// Output feature-table CSV.
        #[arg(long = "out")]
        output: PathBuf,
        /// standard = (l2-l3)/l1; legacy = (l2-l1)/l1 (audit only).
        #[arg(long = "planarity-formula", default_value = "standard")]
        planarity_formula: String,
    },
    /// Train a Random Forest on a fused CSV (features + label).
    TrainRf {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        #[arg(long, default_value_t = 100)]
        trees: usize,
        #[arg(long = "max-depth")]
        max_depth: Option<usize>,
        #[arg(long = "min-samples-leaf", default_value_t = 1)]
        min_samples_leaf: usize,
        /// `sqrt` or an explicit count.
        #[arg(long = "features-per-split", default_value = "sqrt")]
        features_per_split: String,
        #[arg(long = "bootstrap-fraction", default_value_t = 1.0)]
        bootstrap_fraction: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Predict labels for a fused CSV with a trained model.
    PredictRf {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// Output text file, one predicted label per line.
        #[arg(long = "out")]
        output: PathBuf,
    },
    /// Print (and optionally save) the feature-importance ranking.
    Importance {
        #[arg(long)]
        model: PathBuf,
        /// Optional CSV output (feature,score per line, descending).
        #[arg(long = "out")]
        output: Option<PathBuf>,
    },
    /// Score predictions against ground truth.
    Evaluate {
        /// Predicted labels, one integer per line.
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth labels, one integer per line.
        #[arg(long)]
        truth: PathBuf,
        /// Class-name JSON: either {"0": "wall", ...} or a merge schema
        /// (its target_names are used).
        #[arg(long)]
        classes: Option<PathBuf>,
        /// Report directory (report.csv + report.txt).
        #[arg(long = "out")]
        output: PathBuf,
    },
    /// Write early-fusion training files from a feature table.
    ExportFused {
        /// Feature-table CSV produced by `extract`.
        #[arg(long)]
        table: PathBuf,
        /// nine_f, six_f or xyz.
        #[arg(long, default_value = "nine_f")]
        set: String,
        #[arg(long = "out")]
        output: PathBuf,
        /// csv or binary.
        #[arg(long, default_value = "csv")]
        format: String,
        /// Write the XYZ / XYZ+9F / XYZ+6F comparison suite; --out is the
        /// path prefix.
        #[arg(long)]
        suite: bool,
    },
    /// Generate a synthetic labeled test scene.
    GenSynthetic {
        /// plane, line, ball or facade-mock.
        #[arg(long)]
        scene: String,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long = "out")]
        output: PathBuf,
        #[arg(long)]
        format: Option<String>,
    },
}

fn cloud_format(flag: &Option<String>, path: &Path) -> Result<CloudFormat> {
    match flag {
        Some(f) => f.parse(),
        None => Ok(CloudFormat::infer(path)),
    }
}

fn read_labels(path: &Path) -> Result<Vec<u32>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        labels.push(t.parse::<u32>().map_err(|_| {
            Error::parse(path, i + 1, format!("bad label `{t}`"))
        })?);
    }
    Ok(labels)
}

fn load_class_names(path: &Path) -> Result<BTreeMap<u32, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if let Ok(schema) = serde_json::from_str::<ClassMergeSchema>(&text) {
        return Ok(schema.target_names);
    }
    serde_json::from_str::<BTreeMap<u32, String>>(&text)
        .map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Run { config } => {
            let config = RunConfig::load(&config)?;
            if let Some(t) = config.threads {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
            }
            let manifest = run_pipeline(&config)?;
            eprintln!(
                "pipeline complete: {} artifacts in {}",
                manifest.artifacts.len(),
                config.output_dir.display()
            );
        }
        Command::Downsample {
            min_dist,
            input,
            output,
            format,
        } => {
            let in_fmt = cloud_format(&format, &input)?;
            let out_fmt = cloud_format(&format, &output)?;
            let cloud = load_point_cloud(&input, in_fmt)?;
            let spec = DownsampleSpec::new(min_dist)?;
            let down = distance_downsample(&cloud, &spec)?;
            save_point_cloud(&down, &output, out_fmt)?;
            eprintln!("{} -> {} points", cloud.len(), down.len());
        }
        Command::Extract {
            radius,
            min_neighbors,
            input,
            output,
            planarity_formula,
        } => {
            let formula: PlanarityFormula = planarity_formula.parse()?;
            let cloud = load_point_cloud(&input, CloudFormat::infer(&input))?;
            let started = Instant::now();
            let table = extract_features_with(&cloud, radius, min_neighbors, formula)?;
            let secs = started.elapsed().as_secs_f64().max(1e-9);
            eprintln!(
                "extracted {} rows in {:.2}s ({:.0} points/s)",
                table.len(),
                secs,
                table.len() as f64 / secs
            );
            write_feature_table(&cloud, &table, &output)?;
        }
        Command::TrainRf {
            input,
            output,
            trees,
            max_depth,
            min_samples_leaf,
            features_per_split,
            bootstrap_fraction,
            seed,
        } => {
            let data = read_fused_csv(&input)?;
            let params = ForestHyperparams {
                n_trees: trees,
                max_depth,
                min_samples_leaf,
                features_per_split: features_per_split.parse::<FeaturesPerSplit>()?,
                bootstrap_fraction,
                rng_seed: seed,
            };
            let model = train(&data.rows, &data.labels, &data.column_names, &params)?;
            save_model(&model, &output)?;
            eprintln!(
                "trained {} trees on {} rows x {} features",
                model.n_trees(),
                data.rows.len(),
                data.column_names.len()
            );
        }
        Command::PredictRf {
            model,
            input,
            output,
        } => {
            let model = load_model(&model)?;
            let data = read_fused_csv(&input)?;
            let preds = predict(&model, &data.rows, &data.column_names)?;
            let body: String = preds.iter().map(|l| format!("{l}\n")).collect();
            std::fs::write(&output, body).map_err(|e| Error::io(&output, e))?;
            eprintln!("predicted {} rows", preds.len());
        }
        Command::Importance { model, output } => {
            let model = load_model(&model)?;
            let ranking = feature_importance(&model);
            for (name, score) in &ranking {
                println!("{name} {score:.6}");
            }
            if let Some(path) = output {
                let mut body = String::from("feature,score\n");
                for (name, score) in &ranking {
                    body.push_str(&format!("{name},{score}\n"));
                }
                std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            }
        }
        Command::Evaluate {
            pred,
            truth,
            classes,
            output,
        } => {
            let predicted = read_labels(&pred)?;
            let truth_labels = read_labels(&truth)?;
            let class_names = match classes {
                Some(path) => load_class_names(&path)?,
                None => BTreeMap::new(),
            };
            let mut class_ids: Vec<u32> = predicted
                .iter()
                .chain(&truth_labels)
                .copied()
                .collect();
            class_ids.sort_unstable();
            class_ids.dedup();
            let matrix = confusion(&predicted, &truth_labels, &class_ids)?;
            let mut meta = ReportMetadata::default();
            meta.push("points", matrix.total);
            write_report(&matrix, &class_names, &meta, &output)?;
            eprintln!("overall accuracy: {:.4}", matrix.accuracy());
        }
        Command::ExportFused {
            table,
            set,
            output,
            format,
            suite,
        } => {
            let (cloud, table) = read_feature_table(&table)?;
            if suite {
                let paths = export_experiment_suite(&cloud, &table, &output)?;
                for p in &paths {
                    eprintln!("wrote {}", p.display());
                }
            } else {
                let set = FeatureSet::by_name(&set)?;
                let fmt: FusionFormat = format.parse()?;
                let stats = export_fused(&cloud, &table, &set, &output, fmt)?;
                eprintln!(
                    "wrote {} rows ({} omitted) to {}",
                    stats.rows_written,
                    stats.rows_omitted,
                    output.display()
                );
            }
        }
        Command::GenSynthetic {
            scene,
            n,
            seed,
            output,
            format,
        } => {
            let scene: Scene = scene.parse()?;
            let cloud = generate(scene, n, seed);
            let fmt = cloud_format(&format, &output)?;
            save_point_cloud(&cloud, &output, fmt)?;
            eprintln!("wrote {} points to {}", cloud.len(), output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}

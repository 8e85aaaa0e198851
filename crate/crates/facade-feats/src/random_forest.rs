//! Random Forest classifier with Gini feature importance.
//!
//! Trees are grown on bootstrap samples; each node picks the best
//! Gini-impurity split among a random feature subset. Importance is the
//! mean decrease in impurity, weighted by node sample counts, normalized
//! per tree, averaged across trees and renormalized to sum 1.
//!
//! Training is deterministic for a fixed seed: tree `t` draws from its own
//! ChaCha stream seeded with `rng_seed + t`, so parallel and serial training
//! produce identical forests. Tie-breaking at equal split gain is lowest
//! feature index, then lowest threshold.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSet;

const MODEL_MAGIC: &str = "#facade-rf-model";
const MODEL_VERSION: u32 = 1;

/// Candidate-feature count per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturesPerSplit {
    Sqrt,
    Count(usize),
}

impl FeaturesPerSplit {
    fn resolve(&self, n_features: usize) -> usize {
        match self {
            FeaturesPerSplit::Sqrt => ((n_features as f64).sqrt().floor() as usize).max(1),
            FeaturesPerSplit::Count(k) => (*k).clamp(1, n_features),
        }
        .min(n_features)
    }
}

impl std::str::FromStr for FeaturesPerSplit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "sqrt" {
            Ok(FeaturesPerSplit::Sqrt)
        } else {
            s.parse::<usize>()
                .map(FeaturesPerSplit::Count)
                .map_err(|_| {
                    Error::invalid(format!(
                        "features_per_split must be `sqrt` or a positive integer, got `{s}`"
                    ))
                })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestHyperparams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub features_per_split: FeaturesPerSplit,
    /// Bootstrap sample size as a fraction of the training set, in (0, 1].
    pub bootstrap_fraction: f64,
    pub rng_seed: u64,
}

impl Default for ForestHyperparams {
    fn default() -> Self {
        ForestHyperparams {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 1,
            features_per_split: FeaturesPerSplit::Sqrt,
            bootstrap_fraction: 1.0,
            rng_seed: 42,
        }
    }
}

impl ForestHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees < 1 {
            return Err(Error::invalid("n_trees must be at least 1"));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::invalid("min_samples_leaf must be at least 1"));
        }
        if let FeaturesPerSplit::Count(0) = self.features_per_split {
            return Err(Error::invalid("features_per_split must be at least 1"));
        }
        if !(self.bootstrap_fraction > 0.0 && self.bootstrap_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "bootstrap_fraction must be in (0, 1], got {}",
                self.bootstrap_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        /// Class-frequency vector over `class_ids`, sums to 1.
        probs: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<TreeNode>,
}

impl Tree {
    fn leaf_probs(&self, row: &[f64]) -> &[f64] {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { probs } => return probs,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if row[*feature] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }
}

/// Trained ensemble plus per-feature importance scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub hyperparams: ForestHyperparams,
    pub feature_names: Vec<String>,
    /// Sorted ascending; leaf probability vectors index into this.
    pub class_ids: Vec<u32>,
    /// Per-feature Gini importance, aligned with `feature_names`, sums to 1.
    pub importances: Vec<f64>,
    trees: Vec<Tree>,
}

impl ForestModel {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let inv = 1.0 / total as f64;
    1.0 - counts
        .iter()
        .map(|&c| {
            let p = c as f64 * inv;
            p * p
        })
        .sum::<f64>()
}

struct TreeBuilder<'a> {
    rows: &'a [Vec<f64>],
    classes: &'a [usize],
    n_classes: usize,
    n_features: usize,
    params: &'a ForestHyperparams,
    k_features: usize,
    nodes: Vec<TreeNode>,
    /// Weighted impurity decrease accumulated per feature.
    importance: Vec<f64>,
    n_root: usize,
}

impl<'a> TreeBuilder<'a> {
    fn class_counts(&self, samples: &[usize]) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes];
        for &s in samples {
            counts[self.classes[s]] += 1;
        }
        counts
    }

    fn make_leaf(&mut self, counts: &[usize], total: usize) -> u32 {
        let probs: Vec<f64> = counts
            .iter()
            .map(|&c| c as f64 / total as f64)
            .collect();
        self.nodes.push(TreeNode::Leaf { probs });
        (self.nodes.len() - 1) as u32
    }

    fn grow(&mut self, samples: Vec<usize>, depth: usize, rng: &mut ChaCha20Rng) -> u32 {
        let total = samples.len();
        let counts = self.class_counts(&samples);
        let parent_gini = gini(&counts, total);

        let depth_capped = self.params.max_depth.is_some_and(|d| depth >= d);
        if parent_gini == 0.0 || depth_capped || total < 2 * self.params.min_samples_leaf {
            return self.make_leaf(&counts, total);
        }

        // Random feature subset, sorted so tie-breaking favors the lowest
        // feature index.
        let mut candidates: Vec<usize> = (0..self.n_features).collect();
        for i in 0..self.k_features {
            let j = i + rng.gen_range(0..candidates.len() - i);
            candidates.swap(i, j);
        }
        candidates.truncate(self.k_features);
        candidates.sort_unstable();

        let mut best: Option<(f64, usize, f64)> = None; // (decrease, feature, threshold)
        let mut sorted: Vec<(f64, usize)> = Vec::with_capacity(total);
        for &f in &candidates {
            sorted.clear();
            sorted.extend(samples.iter().map(|&s| (self.rows[s][f], self.classes[s])));
            sorted.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

            let mut left = vec![0usize; self.n_classes];
            let mut right = counts.clone();
            for i in 0..total - 1 {
                let (v, c) = sorted[i];
                left[c] += 1;
                right[c] -= 1;
                let nl = i + 1;
                let nr = total - nl;
                if v == sorted[i + 1].0 {
                    continue;
                }
                if nl < self.params.min_samples_leaf || nr < self.params.min_samples_leaf {
                    continue;
                }
                let weighted = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr))
                    / total as f64;
                let decrease = parent_gini - weighted;
                let threshold = v + (sorted[i + 1].0 - v) / 2.0;
                let better = match best {
                    None => decrease > 1e-12,
                    Some((bd, _, _)) => decrease > bd,
                };
                if better {
                    best = Some((decrease, f, threshold));
                }
            }
        }

        let Some((decrease, feature, threshold)) = best else {
            return self.make_leaf(&counts, total);
        };

        self.importance[feature] += (total as f64 / self.n_root as f64) * decrease;

        let (left_samples, right_samples): (Vec<usize>, Vec<usize>) = samples
            .into_iter()
            .partition(|&s| self.rows[s][feature] <= threshold);

        let slot = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { probs: Vec::new() }); // placeholder
        let left = self.grow(left_samples, depth + 1, rng);
        let right = self.grow(right_samples, depth + 1, rng);
        self.nodes[slot] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        slot as u32
    }
}

/// Trains a forest on `rows` (one feature vector per sample) and `labels`.
pub fn train(
    rows: &[Vec<f64>],
    labels: &[u32],
    feature_names: &[String],
    params: &ForestHyperparams,
) -> Result<ForestModel> {
    params.validate()?;
    if rows.is_empty() {
        return Err(Error::invalid("cannot train on zero rows"));
    }
    if rows.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} feature rows but {} labels",
            rows.len(),
            labels.len()
        )));
    }
    let n_features = feature_names.len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n_features {
            return Err(Error::invalid(format!(
                "row {i} has {} values, expected {n_features}",
                row.len()
            )));
        }
        if row.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid(format!("row {i} contains NaN")));
        }
    }

    let mut class_ids: Vec<u32> = labels.to_vec();
    class_ids.sort_unstable();
    class_ids.dedup();
    let classes: Vec<usize> = labels
        .iter()
        .map(|l| class_ids.binary_search(l).unwrap())
        .collect();

    let n = rows.len();
    let m = ((params.bootstrap_fraction * n as f64).ceil() as usize).max(1);
    let k_features = params.features_per_split.resolve(n_features);

    let built: Vec<(Tree, Vec<f64>)> = (0..params.n_trees as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha20Rng::seed_from_u64(params.rng_seed.wrapping_add(t));
            let samples: Vec<usize> = (0..m).map(|_| rng.gen_range(0..n)).collect();
            let mut builder = TreeBuilder {
                rows,
                classes: &classes,
                n_classes: class_ids.len(),
                n_features,
                params,
                k_features,
                nodes: Vec::new(),
                importance: vec![0.0; n_features],
                n_root: m,
            };
            builder.grow(samples, 0, &mut rng);
            let mut importance = builder.importance;
            let sum: f64 = importance.iter().sum();
            if sum > 0.0 {
                for v in &mut importance {
                    *v /= sum;
                }
            }
            (Tree { nodes: builder.nodes }, importance)
        })
        .collect();

    let mut importances = vec![0.0f64; n_features];
    for (_, imp) in &built {
        for (a, b) in importances.iter_mut().zip(imp) {
            *a += b;
        }
    }
    let sum: f64 = importances.iter().sum();
    if sum > 0.0 {
        for v in &mut importances {
            *v /= sum;
        }
    }

    Ok(ForestModel {
        hyperparams: params.clone(),
        feature_names: feature_names.to_vec(),
        class_ids,
        importances,
        trees: built.into_iter().map(|(t, _)| t).collect(),
    })
}

/// Predicts a class id per row; ties break toward the lowest class id.
pub fn predict(
    model: &ForestModel,
    rows: &[Vec<f64>],
    column_names: &[String],
) -> Result<Vec<u32>> {
    if column_names != model.feature_names.as_slice() {
        return Err(Error::ColumnMismatch {
            expected: model.feature_names.join(", "),
            got: column_names.join(", "),
        });
    }
    let inv_trees = 1.0 / model.trees.len() as f64;
    rows.par_iter()
        .map(|row| {
            if row.len() != model.feature_names.len() {
                return Err(Error::invalid(format!(
                    "row has {} values, expected {}",
                    row.len(),
                    model.feature_names.len()
                )));
            }
            let mut acc = vec![0.0f64; model.class_ids.len()];
            for tree in &model.trees {
                for (a, p) in acc.iter_mut().zip(tree.leaf_probs(row)) {
                    *a += p * inv_trees;
                }
            }
            let mut best = 0usize;
            for (i, &v) in acc.iter().enumerate().skip(1) {
                if v > acc[best] {
                    best = i;
                }
            }
            Ok(model.class_ids[best])
        })
        .collect()
}

/// Importance scores sorted descending; equal scores keep feature order.
pub fn feature_importance(model: &ForestModel) -> Vec<(String, f64)> {
    let mut scored: Vec<(String, f64)> = model
        .feature_names
        .iter()
        .cloned()
        .zip(model.importances.iter().copied())
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    scored
}

/// How to pick influential features from an importance ranking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectionRule {
    /// Keep features scoring over the threshold.
    Threshold(f64),
    /// Keep the k highest-ranked features.
    TopK(usize),
}

/// Picks influential geometric features from a descending importance list.
///
/// The coordinate columns x, y, z are never candidates: they are always
/// passed through separately in the fused exports.
pub fn select_top_features(
    importances: &[(String, f64)],
    rule: SelectionRule,
) -> Result<FeatureSet> {
    if importances.is_empty() {
        return Err(Error::invalid("importance list is empty"));
    }
    let geometric = importances
        .iter()
        .filter(|(name, _)| name != "x" && name != "y" && name != "z");
    let columns: Vec<String> = match rule {
        SelectionRule::Threshold(t) => geometric
            .filter(|(_, score)| *score > t)
            .map(|(name, _)| name.clone())
            .collect(),
        SelectionRule::TopK(k) => geometric.take(k).map(|(name, _)| name.clone()).collect(),
    };
    if columns.is_empty() {
        return Err(Error::invalid(
            "no feature passed the selection rule; lower the threshold",
        ));
    }
    Ok(FeatureSet {
        name: "selected".to_string(),
        columns,
    })
}

pub fn save_model(model: &ForestModel, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{MODEL_MAGIC} v{MODEL_VERSION}").map_err(|e| Error::io(path, e))?;
    serde_json::to_writer(&mut w, model).map_err(|e| Error::invalid(e.to_string()))?;
    writeln!(w).and_then(|()| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ForestModel> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut header = String::new();
    reader
        .read_line(&mut header)
        .map_err(|e| Error::io(path, e))?;
    let header = header.trim();
    let Some(version_str) = header.strip_prefix(MODEL_MAGIC) else {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "facade-rf model".to_string(),
        });
    };
    let found: u32 = version_str
        .trim()
        .strip_prefix('v')
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::BadMagic {
            path: path.to_path_buf(),
            expected: "facade-rf model".to_string(),
        })?;
    if found != MODEL_VERSION {
        return Err(Error::Version {
            what: "model".to_string(),
            found,
            supported: MODEL_VERSION,
        });
    }
    let mut body = String::new();
    reader
        .read_to_string(&mut body)
        .map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&body).map_err(|e| Error::parse(path, e.line() + 1, e.to_string()))
}

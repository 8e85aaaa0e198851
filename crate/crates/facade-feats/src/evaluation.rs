//! Accuracy scoring and confusion matrices.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Square class-by-class count matrix; `counts[i][j]` is the number of
/// points of true class `class_ids[i]` predicted as `class_ids[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub class_ids: Vec<u32>,
    pub counts: Vec<Vec<u64>>,
    pub total: u64,
}

impl ConfusionMatrix {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let trace: u64 = (0..self.class_ids.len()).map(|i| self.counts[i][i]).sum();
        trace as f64 / self.total as f64
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|row| row[j]).sum()
    }
}

/// Fraction of positions where prediction equals truth.
pub fn overall_accuracy(predicted: &[u32], truth: &[u32]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predictions vs {} truth labels",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::invalid("cannot score an empty label sequence"));
    }
    let correct = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / truth.len() as f64)
}

pub fn confusion(predicted: &[u32], truth: &[u32], class_ids: &[u32]) -> Result<ConfusionMatrix> {
    if predicted.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predictions vs {} truth labels",
            predicted.len(),
            truth.len()
        )));
    }
    let index: BTreeMap<u32, usize> = class_ids
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, i))
        .collect();
    let k = class_ids.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (&p, &t) in predicted.iter().zip(truth) {
        let ti = *index
            .get(&t)
            .ok_or_else(|| Error::invalid(format!("truth label {t} is not in class_ids")))?;
        let pi = *index
            .get(&p)
            .ok_or_else(|| Error::invalid(format!("predicted label {p} is not in class_ids")))?;
        counts[ti][pi] += 1;
    }
    Ok(ConfusionMatrix {
        class_ids: class_ids.to_vec(),
        counts,
        total: predicted.len() as u64,
    })
}

/// Precision, recall and F1 for one class. `defined` is false when both the
/// class row and column are empty (0/0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub class_id: u32,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub defined: bool,
}

pub fn per_class_metrics(matrix: &ConfusionMatrix) -> Vec<ClassMetrics> {
    (0..matrix.class_ids.len())
        .map(|i| {
            let diag = matrix.counts[i][i] as f64;
            let row = matrix.row_sum(i) as f64;
            let col = matrix.col_sum(i) as f64;
            let defined = row > 0.0 || col > 0.0;
            let precision = if col > 0.0 { diag / col } else { 0.0 };
            let recall = if row > 0.0 { diag / row } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                class_id: matrix.class_ids[i],
                precision,
                recall,
                f1,
                defined,
            }
        })
        .collect()
}

/// Run metadata carried into report headers, in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportMetadata {
    pub entries: Vec<(String, String)>,
}

impl ReportMetadata {
    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }
}

fn class_display_name(names: &BTreeMap<u32, String>, id: u32) -> String {
    names
        .get(&id)
        .cloned()
        .unwrap_or_else(|| format!("class_{id}"))
}

/// Writes `report.csv` (metadata block + count matrix) and `report.txt`
/// (human-readable table with per-class metrics) into `dir`.
pub fn write_report(
    matrix: &ConfusionMatrix,
    class_names: &BTreeMap<u32, String>,
    metadata: &ReportMetadata,
    dir: &Path,
) -> Result<()> {
    if matrix.class_ids.is_empty() || matrix.total == 0 {
        return Err(Error::invalid("cannot report an empty confusion matrix"));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join("report.csv");
    write_report_csv(matrix, class_names, metadata, &csv_path)?;

    let txt_path = dir.join("report.txt");
    let file = File::create(&txt_path).map_err(|e| Error::io(&txt_path, e))?;
    let mut w = BufWriter::new(file);
    write_report_text(matrix, class_names, metadata, &mut w)
        .and_then(|()| w.flush())
        .map_err(|e| Error::io(&txt_path, e))
}

pub fn write_report_csv(
    matrix: &ConfusionMatrix,
    class_names: &BTreeMap<u32, String>,
    metadata: &ReportMetadata,
    path: &Path,
) -> Result<()> {
    if matrix.class_ids.is_empty() || matrix.total == 0 {
        return Err(Error::invalid("cannot report an empty confusion matrix"));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let inner = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        write!(w, "# facade-feats report v1; accuracy={}", matrix.accuracy())?;
        for (k, v) in &metadata.entries {
            write!(w, "; {k}={v}")?;
        }
        writeln!(w)?;
        let names: Vec<String> = matrix
            .class_ids
            .iter()
            .map(|&id| class_display_name(class_names, id))
            .collect();
        writeln!(w, "true\\predicted,{}", names.join(","))?;
        for (i, name) in names.iter().enumerate() {
            let row: Vec<String> = matrix.counts[i].iter().map(|c| c.to_string()).collect();
            writeln!(w, "{name},{}", row.join(","))?;
        }
        Ok(())
    };
    inner(&mut w)
        .and_then(|()| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn write_report_text<W: Write>(
    matrix: &ConfusionMatrix,
    class_names: &BTreeMap<u32, String>,
    metadata: &ReportMetadata,
    w: &mut W,
) -> std::io::Result<()> {
    writeln!(w, "overall accuracy: {:.4}", matrix.accuracy())?;
    for (k, v) in &metadata.entries {
        writeln!(w, "{k}: {v}")?;
    }
    writeln!(w)?;
    writeln!(
        w,
        "{:<16} {:>10} {:>10} {:>10} {:>10}",
        "class", "support", "precision", "recall", "f1"
    )?;
    for m in per_class_metrics(matrix) {
        let i = matrix
            .class_ids
            .iter()
            .position(|&c| c == m.class_id)
            .unwrap();
        let name = class_display_name(class_names, m.class_id);
        if m.defined {
            writeln!(
                w,
                "{:<16} {:>10} {:>10.4} {:>10.4} {:>10.4}",
                name,
                matrix.row_sum(i),
                m.precision,
                m.recall,
                m.f1
            )?;
        } else {
            writeln!(w, "{:<16} {:>10} {:>10} {:>10} {:>10}", name, 0, "-", "-", "-")?;
        }
    }
    Ok(())
}

/// Parses a `report.csv` back into its matrix and metadata entries.
pub fn read_report_csv(path: &Path) -> Result<(ConfusionMatrix, Vec<(String, String)>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();

    let header = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty report"))?
        .map_err(|e| Error::io(path, e))?;
    if !header.starts_with("# facade-feats report") {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "facade-feats report".to_string(),
        });
    }
    let metadata: Vec<(String, String)> = header
        .split(';')
        .skip(1)
        .filter_map(|kv| {
            let (k, v) = kv.split_once('=')?;
            Some((k.trim().to_string(), v.trim().to_string()))
        })
        .collect();

    let columns = lines
        .next()
        .ok_or_else(|| Error::parse(path, 2, "missing column header"))?
        .map_err(|e| Error::io(path, e))?;
    let names: Vec<String> = columns
        .split(',')
        .skip(1)
        .map(|s| s.to_string())
        .collect();

    let mut counts = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<u64> = line
            .split(',')
            .skip(1)
            .map(|t| {
                t.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::parse(path, i + 3, format!("bad count `{t}`")))
            })
            .collect::<Result<_>>()?;
        if row.len() != names.len() {
            return Err(Error::parse(path, i + 3, "row width mismatch"));
        }
        counts.push(row);
    }
    let total: u64 = counts.iter().flatten().sum();
    // Class ids are not serialized by name; synthesize positional ids.
    let class_ids: Vec<u32> = (0..names.len() as u32).collect();
    Ok((
        ConfusionMatrix {
            class_ids,
            counts,
            total,
        },
        metadata,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_perfect() {
        let labels = vec![1, 2, 3, 2, 1];
        assert_eq!(overall_accuracy(&labels, &labels).unwrap(), 1.0);
    }

    #[test]
    fn one_of_four_correct() {
        let acc = overall_accuracy(&[1, 1, 1, 1], &[1, 2, 2, 2]).unwrap();
        assert_eq!(acc, 0.25);
    }

    #[test]
    fn length_mismatch_is_error() {
        assert!(overall_accuracy(&[1], &[1, 2]).is_err());
        assert!(overall_accuracy(&[], &[]).is_err());
    }

    #[test]
    fn hand_counted_confusion() {
        // truth [A, B], predicted [A, A] with A=0, B=1.
        let m = confusion(&[0, 0], &[0, 1], &[0, 1]).unwrap();
        assert_eq!(m.counts[0][0], 1);
        assert_eq!(m.counts[1][0], 1);
        assert_eq!(m.counts[0][1], 0);
        assert_eq!(m.accuracy(), 0.5);
    }

    #[test]
    fn all_correct_is_diagonal() {
        let labels = vec![0, 1, 2, 1, 0, 2];
        let m = confusion(&labels, &labels, &[0, 1, 2]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(m.counts[i][j], 0);
                }
            }
        }
        assert_eq!(m.accuracy(), 1.0);
    }

    #[test]
    fn unknown_label_is_error() {
        assert!(confusion(&[9], &[0], &[0, 1]).is_err());
        assert!(confusion(&[0], &[9], &[0, 1]).is_err());
    }

    #[test]
    fn row_sums_match_independent_tally() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(1);
        let truth: Vec<u32> = (0..1000).map(|_| rng.gen_range(0..5)).collect();
        let predicted: Vec<u32> = (0..1000).map(|_| rng.gen_range(0..5)).collect();
        let m = confusion(&predicted, &truth, &[0, 1, 2, 3, 4]).unwrap();
        assert_eq!(m.total, 1000);
        for (i, &c) in m.class_ids.iter().enumerate() {
            let tally = truth.iter().filter(|&&t| t == c).count() as u64;
            assert_eq!(m.row_sum(i), tally);
        }
        // Cross-check of the two accuracy code paths.
        let acc = overall_accuracy(&predicted, &truth).unwrap();
        assert!((m.accuracy() - acc).abs() < 1e-15);
    }

    #[test]
    fn joint_permutation_leaves_metrics_unchanged() {
        let truth = vec![0, 1, 1, 2, 0, 2, 1];
        let predicted = vec![0, 1, 2, 2, 1, 2, 1];
        let m1 = confusion(&predicted, &truth, &[0, 1, 2]).unwrap();
        let perm = [3usize, 0, 6, 2, 5, 1, 4];
        let t2: Vec<u32> = perm.iter().map(|&i| truth[i]).collect();
        let p2: Vec<u32> = perm.iter().map(|&i| predicted[i]).collect();
        let m2 = confusion(&p2, &t2, &[0, 1, 2]).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn diagonal_matrix_metrics_are_one() {
        let labels = vec![0, 0, 1, 2];
        let m = confusion(&labels, &labels, &[0, 1, 2]).unwrap();
        for c in per_class_metrics(&m) {
            assert!(c.defined);
            assert_eq!((c.precision, c.recall, c.f1), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn absent_class_is_undefined() {
        let m = confusion(&[0, 0], &[0, 0], &[0, 1]).unwrap();
        let metrics = per_class_metrics(&m);
        assert!(metrics[0].defined);
        assert!(!metrics[1].defined);
    }

    #[test]
    fn two_class_hand_arithmetic() {
        // counts[[3,1],[2,4]]: truth A predicted A 3 times, etc.
        let m = ConfusionMatrix {
            class_ids: vec![0, 1],
            counts: vec![vec![3, 1], vec![2, 4]],
            total: 10,
        };
        let metrics = per_class_metrics(&m);
        assert!((metrics[0].recall - 0.75).abs() < 1e-15);
        assert!((metrics[0].precision - 0.6).abs() < 1e-15);
    }

    #[test]
    fn report_round_trip() {
        let truth = vec![0, 1, 1, 2, 0];
        let predicted = vec![0, 1, 2, 2, 1];
        let m = confusion(&predicted, &truth, &[0, 1, 2]).unwrap();
        let names: BTreeMap<u32, String> = [(0, "wall"), (1, "window"), (2, "door")]
            .into_iter()
            .map(|(k, v)| (k, v.to_string()))
            .collect();
        let mut meta = ReportMetadata::default();
        meta.push("radius", 0.8);
        meta.push("set", "six_f");
        meta.push("seed", 42);

        let dir = tempfile::tempdir().unwrap();
        write_report(&m, &names, &meta, dir.path()).unwrap();
        let (back, meta_back) = read_report_csv(&dir.path().join("report.csv")).unwrap();
        assert_eq!(back.counts, m.counts);
        assert_eq!(back.total, m.total);
        let get = |k: &str| meta_back.iter().find(|(a, _)| a == k).map(|(_, v)| v.clone());
        assert_eq!(get("radius").unwrap(), "0.8");
        assert_eq!(get("set").unwrap(), "six_f");
        assert_eq!(get("seed").unwrap(), "42");
        let txt = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
        assert!(txt.contains("overall accuracy"));
        assert!(txt.contains("window"));
    }

    #[test]
    fn empty_matrix_report_is_error() {
        let m = ConfusionMatrix {
            class_ids: vec![],
            counts: vec![],
            total: 0,
        };
        let dir = tempfile::tempdir().unwrap();
        assert!(write_report(&m, &BTreeMap::new(), &ReportMetadata::default(), dir.path()).is_err());
    }
}

//! Early-fusion training files and the feature-table interchange format.
//!
//! A fused file carries `x, y, z, <N_f selected features>, label` per valid
//! point, so a point-network data loader can widen its input to `3 + N_f`
//! by position. Two encodings:
//!
//! - CSV: `# facade-feats v<ver>; radius=<r>; set=<name>; omitted=<n>`
//!   header line, a column-name line, then one comma-separated row per
//!   point. Floats are written in shortest round-trip form.
//! - Packed binary: 16-byte magic `FACADE-FUSED\0\0\0\0`, u32 version,
//!   u32 column count, u64 row count, then row-major little-endian f32
//!   values followed by a u32 label per row.
//!
//! Invalid rows (degenerate neighborhoods) are omitted and the omission
//! count recorded in the header. Values are exported raw; normalization is
//! left to the consumer's pipeline.
//!
//! The feature-table format (`write_feature_table`) is the intermediate
//! between `extract` and the training stages: it keeps every row, including
//! invalid ones, plus neighbor counts and the validity flag.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{FeatureSet, FeatureTable, SelectedMatrix, select_columns, FEATURE_COLUMNS};
use crate::io::LabeledPointCloud;

pub const FUSED_MAGIC: [u8; 16] = *b"FACADE-FUSED\0\0\0\0";
pub const FUSED_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionFormat {
    Csv,
    PackedBinary,
}

impl std::str::FromStr for FusionFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(FusionFormat::Csv),
            "binary" | "packed_binary" => Ok(FusionFormat::PackedBinary),
            other => Err(Error::invalid(format!(
                "unknown fusion format `{other}` (expected csv|binary)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExportStats {
    pub rows_written: usize,
    pub rows_omitted: usize,
}

fn fused_selection(
    cloud: &LabeledPointCloud,
    table: &FeatureTable,
    set: &FeatureSet,
) -> Result<(SelectedMatrix, Vec<u32>)> {
    let labels = cloud
        .labels
        .as_ref()
        .ok_or_else(|| Error::invalid("fusion export requires a labeled cloud"))?
        .clone();
    let selected = select_columns(cloud, table, set, true)?;
    Ok((selected, labels))
}

/// Writes the fused `x,y,z + features + label` file for one feature set.
pub fn export_fused(
    cloud: &LabeledPointCloud,
    table: &FeatureTable,
    set: &FeatureSet,
    path: &Path,
    format: FusionFormat,
) -> Result<ExportStats> {
    let (selected, labels) = fused_selection(cloud, table, set)?;
    let omitted = selected.mask.iter().filter(|v| !**v).count();
    let stats = ExportStats {
        rows_written: selected.rows.len() - omitted,
        rows_omitted: omitted,
    };

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    match format {
        FusionFormat::Csv => {
            write!(
                w,
                "# facade-feats v{}; radius={}; set={}; omitted={}\n{},label\n",
                crate::VERSION,
                table.radius,
                set.name,
                omitted,
                selected.column_names.join(",")
            )
            .map_err(|e| Error::io(path, e))?;
            for ((row, &keep), &label) in selected.rows.iter().zip(&selected.mask).zip(&labels) {
                if !keep {
                    continue;
                }
                let mut line = String::new();
                for v in row {
                    line.push_str(&format!("{v}"));
                    line.push(',');
                }
                line.push_str(&label.to_string());
                writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
            }
        }
        FusionFormat::PackedBinary => {
            let n_cols = selected.column_names.len() + 1;
            w.write_all(&FUSED_MAGIC).map_err(|e| Error::io(path, e))?;
            w.write_all(&FUSED_VERSION.to_le_bytes())
                .map_err(|e| Error::io(path, e))?;
            w.write_all(&(n_cols as u32).to_le_bytes())
                .map_err(|e| Error::io(path, e))?;
            w.write_all(&(stats.rows_written as u64).to_le_bytes())
                .map_err(|e| Error::io(path, e))?;
            for ((row, &keep), &label) in selected.rows.iter().zip(&selected.mask).zip(&labels) {
                if !keep {
                    continue;
                }
                for v in row {
                    w.write_all(&(*v as f32).to_le_bytes())
                        .map_err(|e| Error::io(path, e))?;
                }
                w.write_all(&label.to_le_bytes())
                    .map_err(|e| Error::io(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(stats)
}

/// Writes the three comparison variants `<prefix>_xyz.csv`,
/// `<prefix>_xyz9f.csv` and `<prefix>_xyz6f.csv` with identical row
/// ordering and counts, so accuracy comparisons isolate the feature effect.
pub fn export_experiment_suite(
    cloud: &LabeledPointCloud,
    table: &FeatureTable,
    path_prefix: &Path,
) -> Result<[std::path::PathBuf; 3]> {
    let prefix = path_prefix.to_string_lossy();
    let variants = [
        (FeatureSet::xyz_only(), format!("{prefix}_xyz.csv")),
        (FeatureSet::nine_f(), format!("{prefix}_xyz9f.csv")),
        (FeatureSet::six_f(), format!("{prefix}_xyz6f.csv")),
    ];
    let mut paths = Vec::with_capacity(3);
    for (set, path) in variants {
        let path = std::path::PathBuf::from(path);
        export_fused(cloud, table, &set, &path, FusionFormat::Csv)?;
        paths.push(path);
    }
    Ok([paths[0].clone(), paths[1].clone(), paths[2].clone()])
}

/// A fused dataset read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedData {
    pub column_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<u32>,
    /// key=value pairs from the CSV header; empty for binary files.
    pub metadata: Vec<(String, String)>,
}

pub fn read_fused_csv(path: &Path) -> Result<FusedData> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();

    let header = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty file"))?
        .map_err(|e| Error::io(path, e))?;
    if !header.starts_with("# facade-feats") {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "facade-feats fused CSV".to_string(),
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
    let mut column_names: Vec<String> = columns.split(',').map(|s| s.to_string()).collect();
    if column_names.last().map(String::as_str) != Some("label") {
        return Err(Error::parse(path, 2, "last column must be `label`"));
    }
    column_names.pop();

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 3;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split(',').collect();
        if tokens.len() != column_names.len() + 1 {
            return Err(Error::parse(
                path,
                lineno,
                format!(
                    "expected {} fields, found {}",
                    column_names.len() + 1,
                    tokens.len()
                ),
            ));
        }
        let row: Vec<f64> = tokens[..tokens.len() - 1]
            .iter()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::parse(path, lineno, format!("bad value `{t}`")))
            })
            .collect::<Result<_>>()?;
        let label = tokens[tokens.len() - 1]
            .parse::<u32>()
            .map_err(|_| Error::parse(path, lineno, "bad label"))?;
        rows.push(row);
        labels.push(label);
    }

    Ok(FusedData {
        column_names,
        rows,
        labels,
        metadata,
    })
}

pub fn read_fused_binary(path: &Path) -> Result<FusedData> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 16];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if magic != FUSED_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "facade-feats fused binary".to_string(),
        });
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
    let version = u32::from_le_bytes(u32buf);
    if version != FUSED_VERSION {
        return Err(Error::Version {
            what: "fused binary".to_string(),
            found: version,
            supported: FUSED_VERSION,
        });
    }
    r.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
    let n_cols = u32::from_le_bytes(u32buf) as usize;
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf).map_err(|e| Error::io(path, e))?;
    let n_rows = u64::from_le_bytes(u64buf) as usize;

    let n_values = n_cols - 1; // last column is the label
    let mut rows = Vec::with_capacity(n_rows);
    let mut labels = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        let mut row = Vec::with_capacity(n_values);
        for _ in 0..n_values {
            r.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
            row.push(f32::from_le_bytes(u32buf) as f64);
        }
        r.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
        labels.push(u32::from_le_bytes(u32buf));
        rows.push(row);
    }

    Ok(FusedData {
        column_names: Vec::new(),
        rows,
        labels,
        metadata: Vec::new(),
    })
}

/// Writes the full per-point feature table (all rows, validity flag kept).
pub fn write_feature_table(
    cloud: &LabeledPointCloud,
    table: &FeatureTable,
    path: &Path,
) -> Result<()> {
    if table.len() != cloud.len() {
        return Err(Error::invalid(format!(
            "feature table has {} rows but cloud has {} points",
            table.len(),
            cloud.len()
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let labeled = cloud.labels.is_some();
    let inner = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(w, "# facade-feats table v1; radius={}", table.radius)?;
        write!(w, "x,y,z,{},neighbor_count,valid", table.column_names.join(","))?;
        if labeled {
            write!(w, ",label")?;
        }
        writeln!(w)?;
        for i in 0..table.len() {
            let p = cloud.points[i];
            let mut line = format!("{},{},{}", p[0], p[1], p[2]);
            for v in &table.rows[i] {
                line.push_str(&format!(",{v}"));
            }
            line.push_str(&format!(
                ",{},{}",
                table.neighbor_counts[i],
                if table.valid[i] { 1 } else { 0 }
            ));
            if let Some(labels) = &cloud.labels {
                line.push_str(&format!(",{}", labels[i]));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    };
    inner(&mut w)
        .and_then(|()| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Reads a feature table back together with the cloud it was computed on.
pub fn read_feature_table(path: &Path) -> Result<(LabeledPointCloud, FeatureTable)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();

    let header = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty file"))?
        .map_err(|e| Error::io(path, e))?;
    if !header.starts_with("# facade-feats table") {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "facade-feats feature table".to_string(),
        });
    }
    let radius: f64 = header
        .split(';')
        .skip(1)
        .filter_map(|kv| kv.split_once('='))
        .find(|(k, _)| k.trim() == "radius")
        .and_then(|(_, v)| v.trim().parse().ok())
        .ok_or_else(|| Error::parse(path, 1, "missing radius in header"))?;

    let columns = lines
        .next()
        .ok_or_else(|| Error::parse(path, 2, "missing column header"))?
        .map_err(|e| Error::io(path, e))?;
    let cols: Vec<&str> = columns.split(',').collect();
    let labeled = cols.last() == Some(&"label");
    let expected: usize = 3 + FEATURE_COLUMNS.len() + 2 + usize::from(labeled);
    if cols.len() != expected {
        return Err(Error::parse(
            path,
            2,
            format!("expected {expected} columns, found {}", cols.len()),
        ));
    }

    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut rows = Vec::new();
    let mut valid = Vec::new();
    let mut neighbor_counts = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 3;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split(',').collect();
        if tokens.len() != expected {
            return Err(Error::parse(path, lineno, "row width mismatch"));
        }
        let f = |j: usize| -> Result<f64> {
            tokens[j]
                .parse::<f64>()
                .map_err(|_| Error::parse(path, lineno, format!("bad value `{}`", tokens[j])))
        };
        points.push([f(0)?, f(1)?, f(2)?]);
        let mut row = [0.0f64; 9];
        for (k, slot) in row.iter_mut().enumerate() {
            *slot = f(3 + k)?;
        }
        rows.push(row);
        neighbor_counts.push(
            tokens[12]
                .parse::<usize>()
                .map_err(|_| Error::parse(path, lineno, "bad neighbor count"))?,
        );
        valid.push(tokens[13] == "1");
        if labeled {
            labels.push(
                tokens[14]
                    .parse::<u32>()
                    .map_err(|_| Error::parse(path, lineno, "bad label"))?,
            );
        }
    }

    let cloud = if labeled {
        LabeledPointCloud::with_labels(points, labels)
    } else {
        LabeledPointCloud::new(points)
    };
    let table = FeatureTable {
        column_names: FEATURE_COLUMNS.iter().map(|s| s.to_string()).collect(),
        rows,
        valid,
        neighbor_counts,
        radius,
    };
    Ok((cloud, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn synthetic_table(n: usize, seed: u64) -> (LabeledPointCloud, FeatureTable) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let points: Vec<[f64; 3]> = (0..n)
            .map(|_| [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()])
            .collect();
        let labels: Vec<u32> = (0..n).map(|i| (i % 3) as u32).collect();
        let cloud = LabeledPointCloud::with_labels(points, labels);
        let rows: Vec<[f64; 9]> = (0..n)
            .map(|_| std::array::from_fn(|_| rng.gen::<f64>()))
            .collect();
        let mut valid = vec![true; n];
        if n > 4 {
            valid[2] = false;
            valid[4] = false;
        }
        let table = FeatureTable {
            column_names: FEATURE_COLUMNS.iter().map(|s| s.to_string()).collect(),
            rows,
            valid,
            neighbor_counts: vec![25; n],
            radius: 0.8,
        };
        (cloud, table)
    }

    #[test]
    fn six_f_row_has_ten_fields() {
        let (cloud, table) = synthetic_table(1, 0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.csv");
        export_fused(&cloud, &table, &FeatureSet::six_f(), &path, FusionFormat::Csv).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let data_line = text.lines().nth(2).unwrap();
        assert_eq!(data_line.split(',').count(), 10);
    }

    #[test]
    fn xyz_baseline_has_four_fields() {
        let (cloud, table) = synthetic_table(1, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("xyz.csv");
        export_fused(&cloud, &table, &FeatureSet::xyz_only(), &path, FusionFormat::Csv).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().nth(2).unwrap().split(',').count(), 4);
    }

    #[test]
    fn csv_round_trip_preserves_values() {
        let (cloud, table) = synthetic_table(1000, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fused.csv");
        let stats =
            export_fused(&cloud, &table, &FeatureSet::nine_f(), &path, FusionFormat::Csv).unwrap();
        assert_eq!(stats.rows_omitted, 2);
        assert_eq!(stats.rows_written, 998);
        let back = read_fused_csv(&path).unwrap();
        assert_eq!(back.rows.len(), 998);
        let mut j = 0usize;
        for i in 0..1000 {
            if !table.valid[i] {
                continue;
            }
            for k in 0..3 {
                assert_eq!(back.rows[j][k], cloud.points[i][k]);
            }
            for k in 0..9 {
                assert_eq!(back.rows[j][3 + k], table.rows[i][k]);
            }
            assert_eq!(back.labels[j], cloud.labels.as_ref().unwrap()[i]);
            j += 1;
        }
        let get = |k: &str| back.metadata.iter().find(|(a, _)| a == k).map(|(_, v)| v.clone());
        assert_eq!(get("omitted").unwrap(), "2");
        assert_eq!(get("set").unwrap(), "nine_f");
    }

    #[test]
    fn binary_round_trip() {
        let (cloud, table) = synthetic_table(200, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fused.bin");
        export_fused(
            &cloud,
            &table,
            &FeatureSet::six_f(),
            &path,
            FusionFormat::PackedBinary,
        )
        .unwrap();
        let back = read_fused_binary(&path).unwrap();
        assert_eq!(back.rows.len(), 198);
        assert_eq!(back.rows[0].len(), 9);
        // Binary stores f32; compare at f32 precision.
        let mut j = 0usize;
        for i in 0..200 {
            if !table.valid[i] {
                continue;
            }
            for k in 0..3 {
                assert_eq!(back.rows[j][k], cloud.points[i][k] as f32 as f64);
            }
            assert_eq!(back.labels[j], cloud.labels.as_ref().unwrap()[i]);
            j += 1;
        }
        assert!(j > 0);
    }

    #[test]
    fn binary_bad_magic_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.bin");
        std::fs::write(&bad, b"NOT-A-FUSED-FILE plus padding").unwrap();
        assert!(matches!(
            read_fused_binary(&bad).unwrap_err(),
            Error::BadMagic { .. }
        ));
        let v9 = dir.path().join("v9.bin");
        let mut bytes = FUSED_MAGIC.to_vec();
        bytes.extend(9u32.to_le_bytes());
        bytes.extend(4u32.to_le_bytes());
        bytes.extend(0u64.to_le_bytes());
        std::fs::write(&v9, bytes).unwrap();
        assert!(matches!(
            read_fused_binary(&v9).unwrap_err(),
            Error::Version { found: 9, .. }
        ));
    }

    #[test]
    fn unlabeled_cloud_is_error() {
        let (mut cloud, table) = synthetic_table(10, 4);
        cloud.labels = None;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        assert!(
            export_fused(&cloud, &table, &FeatureSet::six_f(), &path, FusionFormat::Csv).is_err()
        );
    }

    #[test]
    fn suite_writes_three_aligned_files() {
        let (cloud, table) = synthetic_table(300, 5);
        let dir = tempfile::tempdir().unwrap();
        let paths = export_experiment_suite(&cloud, &table, &dir.path().join("b59")).unwrap();
        let xyz = read_fused_csv(&paths[0]).unwrap();
        let nine = read_fused_csv(&paths[1]).unwrap();
        let six = read_fused_csv(&paths[2]).unwrap();
        assert_eq!(xyz.rows.len(), nine.rows.len());
        assert_eq!(xyz.rows.len(), six.rows.len());
        assert_eq!(xyz.rows[0].len(), 3);
        assert_eq!(nine.rows[0].len(), 12);
        assert_eq!(six.rows[0].len(), 9);
        for j in 0..xyz.rows.len() {
            for k in 0..3 {
                assert_eq!(xyz.rows[j][k], nine.rows[j][k]);
                assert_eq!(xyz.rows[j][k], six.rows[j][k]);
            }
            assert_eq!(xyz.labels[j], nine.labels[j]);
            assert_eq!(xyz.labels[j], six.labels[j]);
        }
    }

    #[test]
    fn export_is_deterministic() {
        let (cloud, table) = synthetic_table(150, 6);
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        export_fused(&cloud, &table, &FeatureSet::nine_f(), &a, FusionFormat::Csv).unwrap();
        export_fused(&cloud, &table, &FeatureSet::nine_f(), &b, FusionFormat::Csv).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn feature_table_round_trip() {
        let (cloud, table) = synthetic_table(50, 7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.csv");
        write_feature_table(&cloud, &table, &path).unwrap();
        let (cloud_back, table_back) = read_feature_table(&path).unwrap();
        assert_eq!(cloud_back.points, cloud.points);
        assert_eq!(cloud_back.labels, cloud.labels);
        assert_eq!(table_back.rows, table.rows);
        assert_eq!(table_back.valid, table.valid);
        assert_eq!(table_back.radius, table.radius);
    }
}

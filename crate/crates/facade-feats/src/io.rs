//! Loading, saving and class-merging of labeled point clouds.
//!
//! Two on-disk formats are supported:
//! - `xyz_label_text`: whitespace-separated `x y z [label]`, one point per
//!   line, `#` comment lines ignored.
//! - `ascii_ply`: ASCII PLY with a vertex element carrying float `x y z` and
//!   an optional integer `scalar_Classification` (or `label`) property.
//!   Extra vertex properties are skipped on load and dropped on save.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ordered point cloud with optional per-point class labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledPointCloud {
    /// Coordinates in meters, file order preserved.
    pub points: Vec<[f64; 3]>,
    /// Class id per point, same length as `points` when present.
    pub labels: Option<Vec<u32>>,
    /// Display name per class id; covers every label value that occurs.
    pub class_names: BTreeMap<u32, String>,
}

impl LabeledPointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        LabeledPointCloud {
            points,
            labels: None,
            class_names: BTreeMap::new(),
        }
    }

    pub fn with_labels(points: Vec<[f64; 3]>, labels: Vec<u32>) -> Self {
        assert_eq!(points.len(), labels.len());
        let mut class_names = BTreeMap::new();
        for &l in &labels {
            class_names
                .entry(l)
                .or_insert_with(|| format!("class_{l}"));
        }
        LabeledPointCloud {
            points,
            labels: Some(labels),
            class_names,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sorted set of class ids that actually occur in the labels.
    pub fn occurring_classes(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = match &self.labels {
            Some(labels) => {
                let mut v = labels.clone();
                v.sort_unstable();
                v.dedup();
                v
            }
            None => Vec::new(),
        };
        ids.shrink_to_fit();
        ids
    }

    /// Checks the structural invariants: label length, finite coordinates,
    /// every label named.
    pub fn validate(&self) -> Result<()> {
        if let Some(labels) = &self.labels {
            if labels.len() != self.points.len() {
                return Err(Error::invalid(format!(
                    "label count {} does not match point count {}",
                    labels.len(),
                    self.points.len()
                )));
            }
            for &l in labels {
                if !self.class_names.contains_key(&l) {
                    return Err(Error::invalid(format!("label {l} has no class name")));
                }
            }
        }
        for (i, p) in self.points.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::invalid(format!(
                    "point {i} has non-finite coordinates"
                )));
            }
        }
        Ok(())
    }
}

/// Supported cloud file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudFormat {
    AsciiPly,
    XyzLabelText,
}

impl CloudFormat {
    /// Picks a format from the file extension: `.ply` is PLY, everything
    /// else is treated as xyz text.
    pub fn infer(path: &Path) -> CloudFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("ply") => CloudFormat::AsciiPly,
            _ => CloudFormat::XyzLabelText,
        }
    }
}

impl FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ascii_ply" | "ply" => Ok(CloudFormat::AsciiPly),
            "xyz_label_text" | "xyz" => Ok(CloudFormat::XyzLabelText),
            other => Err(Error::invalid(format!("unknown cloud format `{other}`"))),
        }
    }
}

impl fmt::Display for CloudFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CloudFormat::AsciiPly => write!(f, "ascii_ply"),
            CloudFormat::XyzLabelText => write!(f, "xyz_label_text"),
        }
    }
}

pub fn load_point_cloud(path: &Path, format: CloudFormat) -> Result<LabeledPointCloud> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    match format {
        CloudFormat::XyzLabelText => load_xyz(path, reader),
        CloudFormat::AsciiPly => load_ply(path, reader),
    }
}

pub fn save_point_cloud(cloud: &LabeledPointCloud, path: &Path, format: CloudFormat) -> Result<()> {
    cloud.validate()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = match format {
        CloudFormat::XyzLabelText => save_xyz(cloud, &mut w),
        CloudFormat::AsciiPly => save_ply(cloud, &mut w),
    };
    res.and_then(|()| w.flush()).map_err(|e| Error::io(path, e))
}

fn load_xyz<R: BufRead>(path: &Path, reader: R) -> Result<LabeledPointCloud> {
    let mut points = Vec::new();
    let mut labels: Vec<u32> = Vec::new();
    // None until the first data line fixes the arity.
    let mut has_label: Option<bool> = None;

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        let expect_label = *has_label.get_or_insert(tokens.len() == 4);
        let expected_cols = if expect_label { 4 } else { 3 };
        if tokens.len() != expected_cols {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected {expected_cols} columns, found {}", tokens.len()),
            ));
        }
        let mut coord = [0.0f64; 3];
        for (i, tok) in tokens[..3].iter().enumerate() {
            coord[i] = tok.parse::<f64>().map_err(|_| {
                Error::parse(path, lineno, format!("non-numeric coordinate `{tok}`"))
            })?;
        }
        points.push(coord);
        if expect_label {
            let l = tokens[3].parse::<u32>().map_err(|_| {
                Error::parse(
                    path,
                    lineno,
                    format!("label column must be a non-negative integer, got `{}`", tokens[3]),
                )
            })?;
            labels.push(l);
        }
    }

    Ok(match has_label {
        Some(true) => LabeledPointCloud::with_labels(points, labels),
        _ => LabeledPointCloud::new(points),
    })
}

fn save_xyz<W: Write>(cloud: &LabeledPointCloud, w: &mut W) -> std::io::Result<()> {
    match &cloud.labels {
        Some(labels) => {
            for (p, l) in cloud.points.iter().zip(labels) {
                writeln!(w, "{:.6} {:.6} {:.6} {}", p[0], p[1], p[2], l)?;
            }
        }
        None => {
            for p in &cloud.points {
                writeln!(w, "{:.6} {:.6} {:.6}", p[0], p[1], p[2])?;
            }
        }
    }
    Ok(())
}

fn load_ply<R: BufRead>(path: &Path, reader: R) -> Result<LabeledPointCloud> {
    let mut lines = reader.lines().enumerate();

    let mut next_line = |expect: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, Ok(l))) => Ok((i + 1, l)),
            Some((i, Err(e))) => Err(Error::io(path, e)).map_err(|_| {
                Error::parse(path, i + 1, "read failure inside header")
            }),
            None => Err(Error::parse(path, 0, format!("unexpected end of file, expected {expect}"))),
        }
    };

    let (n1, magic) = next_line("`ply`")?;
    if magic.trim() != "ply" {
        return Err(Error::parse(path, n1, "missing `ply` magic line"));
    }

    // Header: elements in declaration order; we care about `vertex`.
    struct ElementDecl {
        name: String,
        count: usize,
        properties: Vec<String>,
    }
    let mut elements: Vec<ElementDecl> = Vec::new();
    let mut data_start_line;
    loop {
        let (lineno, line) = next_line("`end_header`")?;
        let line = line.trim().to_string();
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("format") => {
                if parts.next() != Some("ascii") {
                    return Err(Error::parse(path, lineno, "only `format ascii 1.0` is supported"));
                }
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = parts
                    .next()
                    .ok_or_else(|| Error::parse(path, lineno, "element without a name"))?;
                let count: usize = parts
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::parse(path, lineno, "element without a valid count"))?;
                elements.push(ElementDecl {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let decl = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, lineno, "property before any element"))?;
                let tokens: Vec<&str> = parts.collect();
                if tokens.first() == Some(&"list") {
                    return Err(Error::parse(path, lineno, "list properties are not supported"));
                }
                let name = tokens
                    .last()
                    .ok_or_else(|| Error::parse(path, lineno, "property without a name"))?;
                decl.properties.push(name.to_string());
            }
            Some("end_header") => {
                data_start_line = lineno + 1;
                break;
            }
            Some(other) => {
                return Err(Error::parse(path, lineno, format!("unknown header keyword `{other}`")));
            }
        }
    }

    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut has_label = false;

    for decl in &elements {
        if decl.name == "vertex" {
            let ix = decl.properties.iter().position(|p| p == "x");
            let iy = decl.properties.iter().position(|p| p == "y");
            let iz = decl.properties.iter().position(|p| p == "z");
            let (ix, iy, iz) = match (ix, iy, iz) {
                (Some(a), Some(b), Some(c)) => (a, b, c),
                _ => {
                    return Err(Error::parse(
                        path,
                        data_start_line,
                        "vertex element lacks x/y/z properties",
                    ))
                }
            };
            let il = decl
                .properties
                .iter()
                .position(|p| p == "scalar_Classification" || p == "label");
            has_label = il.is_some();
            points.reserve(decl.count);

            for _ in 0..decl.count {
                let (lineno, line) = next_line("vertex data")?;
                data_start_line = lineno + 1;
                let tokens: Vec<&str> = line.split_whitespace().collect();
                if tokens.len() != decl.properties.len() {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!(
                            "expected {} values, found {}",
                            decl.properties.len(),
                            tokens.len()
                        ),
                    ));
                }
                let parse_f = |i: usize| -> Result<f64> {
                    tokens[i].parse::<f64>().map_err(|_| {
                        Error::parse(path, lineno, format!("non-numeric token `{}`", tokens[i]))
                    })
                };
                points.push([parse_f(ix)?, parse_f(iy)?, parse_f(iz)?]);
                if let Some(il) = il {
                    // Some writers emit labels as "3.0"; accept integral floats.
                    let raw = tokens[il];
                    let l = raw.parse::<u32>().or_else(|_| {
                        raw.parse::<f64>()
                            .ok()
                            .filter(|v| v.fract() == 0.0 && *v >= 0.0)
                            .map(|v| v as u32)
                            .ok_or(())
                    });
                    match l {
                        Ok(l) => labels.push(l),
                        Err(()) => {
                            return Err(Error::parse(
                                path,
                                lineno,
                                format!("label value `{raw}` is not a non-negative integer"),
                            ))
                        }
                    }
                }
            }
        } else {
            // Skip data rows of elements we do not model.
            for _ in 0..decl.count {
                let (lineno, _) = next_line("element data")?;
                data_start_line = lineno + 1;
            }
        }
    }
    let _ = data_start_line;

    Ok(if has_label {
        LabeledPointCloud::with_labels(points, labels)
    } else {
        LabeledPointCloud::new(points)
    })
}

fn save_ply<W: Write>(cloud: &LabeledPointCloud, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "comment facade-feats v{}", crate::VERSION)?;
    writeln!(w, "element vertex {}", cloud.points.len())?;
    writeln!(w, "property float x")?;
    writeln!(w, "property float y")?;
    writeln!(w, "property float z")?;
    if cloud.labels.is_some() {
        writeln!(w, "property int scalar_Classification")?;
    }
    writeln!(w, "end_header")?;
    match &cloud.labels {
        Some(labels) => {
            for (p, l) in cloud.points.iter().zip(labels) {
                writeln!(w, "{:.6} {:.6} {:.6} {}", p[0], p[1], p[2], l)?;
            }
        }
        None => {
            for p in &cloud.points {
                writeln!(w, "{:.6} {:.6} {:.6}", p[0], p[1], p[2])?;
            }
        }
    }
    Ok(())
}

/// Maps source class ids onto a reduced target class set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassMergeSchema {
    /// Source class id -> target class id. Total over the source schema.
    pub mapping: BTreeMap<u32, u32>,
    /// Target class id -> display name.
    pub target_names: BTreeMap<u32, String>,
}

impl ClassMergeSchema {
    pub fn validate(&self) -> Result<()> {
        for (&src, &tgt) in &self.mapping {
            if !self.target_names.contains_key(&tgt) {
                return Err(Error::invalid(format!(
                    "merge target {tgt} (from source {src}) has no name in target_names"
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ClassMergeSchema> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let schema: ClassMergeSchema = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)
            .map_err(|e| Error::invalid(e.to_string()))?;
        writeln!(w).and_then(|()| w.flush()).map_err(|e| Error::io(path, e))
    }
}

/// Target class ids of the default facade merge schema.
pub mod facade_class {
    pub const WALL: u32 = 0;
    pub const WINDOW: u32 = 1;
    pub const DOOR: u32 = 2;
    pub const MOLDING: u32 = 3;
    pub const COLUMN: u32 = 4;
    pub const ARCH: u32 = 5;
    pub const TERRAIN: u32 = 6;
    pub const ROOF: u32 = 7;
    pub const OTHER: u32 = 8;
}

/// Default facade merge schema: 16 annotated source classes reduced to the
/// representative facade set (wall, window, door, molding, column, arch,
/// terrain, roof, other).
///
/// The source-class numbering follows the annotation order of the original
/// label set (wall, window, door, balcony, molding, deco, column, arch,
/// stair, ground surface, terrain, roof, blinds, outer ceiling surface,
/// interior, other). Confirm it against the dataset documentation before
/// reproduction runs; the schema is a plain config file and can be replaced
/// wholesale with `--merge-schema`.
pub fn default_merge_schema() -> ClassMergeSchema {
    use facade_class::*;
    let mapping: BTreeMap<u32, u32> = [
        (0, WALL),     // wall
        (1, WINDOW),   // window
        (2, DOOR),     // door
        (3, OTHER),    // balcony
        (4, MOLDING),  // molding
        (5, MOLDING),  // deco
        (6, COLUMN),   // column
        (7, ARCH),     // arch
        (8, OTHER),    // stair
        (9, TERRAIN),  // ground surface
        (10, TERRAIN), // terrain
        (11, ROOF),    // roof
        (12, WINDOW),  // blinds
        (13, OTHER),   // outer ceiling surface
        (14, OTHER),   // interior
        (15, OTHER),   // other
    ]
    .into_iter()
    .collect();
    let target_names: BTreeMap<u32, String> = [
        (WALL, "wall"),
        (WINDOW, "window"),
        (DOOR, "door"),
        (MOLDING, "molding"),
        (COLUMN, "column"),
        (ARCH, "arch"),
        (TERRAIN, "terrain"),
        (ROOF, "roof"),
        (OTHER, "other"),
    ]
    .into_iter()
    .map(|(k, v)| (k, v.to_string()))
    .collect();
    ClassMergeSchema {
        mapping,
        target_names,
    }
}

/// Replaces every label by its merge target; points are untouched.
pub fn apply_class_merge(
    cloud: &LabeledPointCloud,
    schema: &ClassMergeSchema,
) -> Result<LabeledPointCloud> {
    schema.validate()?;
    let labels = cloud
        .labels
        .as_ref()
        .ok_or_else(|| Error::invalid("cannot merge classes of an unlabeled cloud"))?;
    let merged: Vec<u32> = labels
        .iter()
        .map(|l| schema.mapping.get(l).copied().ok_or(Error::OrphanClass(*l)))
        .collect::<Result<_>>()?;
    Ok(LabeledPointCloud {
        points: cloud.points.clone(),
        labels: Some(merged),
        class_names: schema.target_names.clone(),
    })
}

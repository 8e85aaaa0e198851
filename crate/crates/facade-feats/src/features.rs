//! Covariance geometric features over fixed-radius neighborhoods.
//!
//! For each point: query neighbors within the radius (the point itself
//! included), form the structure tensor (population covariance of the
//! neighbor coordinates about their mean), eigendecompose it, and derive
//! planarity, omnivariance, surface variation, the three sorted eigenvalues
//! and the second eigenvector.
//!
//! Eigenvector signs are canonicalized so the largest-magnitude component is
//! positive (tie broken by earliest axis); this makes `e2` reproducible
//! across runs and solvers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::LabeledPointCloud;
use crate::spatial_index::{build_index, radius_query};

/// Canonical feature column order. Every table and export indexes into this.
pub const FEATURE_COLUMNS: [&str; 9] = [
    "planarity",
    "surface_variation",
    "omnivariance",
    "pca1",
    "pca2",
    "pca3",
    "e2_x",
    "e2_y",
    "e2_z",
];

/// Eigenstructure of one neighborhood's structure tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodEigen {
    /// Sorted descending, clamped to >= 0.
    pub eigenvalues: [f64; 3],
    /// `eigenvectors[i]` is the unit eigenvector paired with `eigenvalues[i]`.
    pub eigenvectors: [[f64; 3]; 3],
    pub neighbor_count: usize,
}

/// Per-point covariance features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceFeatures {
    pub planarity: f64,
    pub omnivariance: f64,
    pub surface_variation: f64,
    pub pca1: f64,
    pub pca2: f64,
    pub pca3: f64,
    pub e2: [f64; 3],
    pub valid: bool,
}

impl CovarianceFeatures {
    const INVALID: CovarianceFeatures = CovarianceFeatures {
        planarity: 0.0,
        omnivariance: 0.0,
        surface_variation: 0.0,
        pca1: 0.0,
        pca2: 0.0,
        pca3: 0.0,
        e2: [0.0; 3],
        valid: false,
    };

    /// Values in [`FEATURE_COLUMNS`] order.
    pub fn row(&self) -> [f64; 9] {
        [
            self.planarity,
            self.surface_variation,
            self.omnivariance,
            self.pca1,
            self.pca2,
            self.pca3,
            self.e2[0],
            self.e2[1],
            self.e2[2],
        ]
    }
}

/// Which planarity definition to use.
///
/// `Standard` is `(λ2 − λ3)/λ1`, the usual covariance-feature definition and
/// the toolkit default. `Legacy` is `(λ2 − λ1)/λ1`, which is non-positive
/// under the ordering `λ1 ≥ λ2` and exists only so the behavior of sources
/// that printed that variant can be audited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanarityFormula {
    #[default]
    Standard,
    Legacy,
}

impl std::str::FromStr for PlanarityFormula {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(PlanarityFormula::Standard),
            "legacy" => Ok(PlanarityFormula::Legacy),
            other => Err(Error::invalid(format!(
                "unknown planarity formula `{other}` (expected standard|legacy)"
            ))),
        }
    }
}

/// Population covariance (divide by n) of the coordinates about their mean.
pub fn structure_tensor(neighbor_coords: &[[f64; 3]]) -> Result<[[f64; 3]; 3]> {
    let n = neighbor_coords.len();
    if n == 0 {
        return Err(Error::invalid("structure tensor of an empty neighborhood"));
    }
    let inv = 1.0 / n as f64;
    let mut mean = [0.0f64; 3];
    for p in neighbor_coords {
        for k in 0..3 {
            mean[k] += p[k];
        }
    }
    for m in &mut mean {
        *m *= inv;
    }
    let mut cov = [[0.0f64; 3]; 3];
    for p in neighbor_coords {
        let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
        for i in 0..3 {
            for j in i..3 {
                cov[i][j] += d[i] * d[j];
            }
        }
    }
    for i in 0..3 {
        for j in i..3 {
            cov[i][j] *= inv;
            cov[j][i] = cov[i][j];
        }
    }
    Ok(cov)
}

fn max_abs(m: &[[f64; 3]; 3]) -> f64 {
    m.iter()
        .flatten()
        .fold(0.0f64, |acc, &v| acc.max(v.abs()))
}

/// Flips the sign so the largest-magnitude component is positive; ties go to
/// the earliest axis.
pub fn canonicalize_sign(v: [f64; 3]) -> [f64; 3] {
    let mut pivot = 0;
    for k in 1..3 {
        if v[k].abs() > v[pivot].abs() {
            pivot = k;
        }
    }
    if v[pivot] < 0.0 {
        [-v[0], -v[1], -v[2]]
    } else {
        v
    }
}

/// Eigendecomposition of a symmetric 3×3 matrix by cyclic Jacobi rotations.
///
/// Eigenvalues come back sorted descending and clamped at zero; eigenvectors
/// are sign-canonicalized.
pub fn eigen_decompose(tensor: &[[f64; 3]; 3]) -> Result<NeighborhoodEigen> {
    let scale = max_abs(tensor).max(1.0);
    for i in 0..3 {
        for j in i + 1..3 {
            if (tensor[i][j] - tensor[j][i]).abs() > 1e-12 * scale {
                return Err(Error::invalid(format!(
                    "matrix is not symmetric: m[{i}][{j}]={} vs m[{j}][{i}]={}",
                    tensor[i][j], tensor[j][i]
                )));
            }
        }
        for j in 0..3 {
            if !tensor[i][j].is_finite() {
                return Err(Error::invalid("matrix has non-finite entries"));
            }
        }
    }

    let mut a = *tensor;
    // v[c] accumulates eigenvector columns: v[c][r] = V[r][c].
    let mut v = [[0.0f64; 3]; 3];
    for (i, col) in v.iter_mut().enumerate() {
        col[i] = 1.0;
    }

    for _sweep in 0..64 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        if off <= f64::MIN_POSITIVE * 64.0 || off <= (1e-30) * scale * scale {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = a[p][q];
            if apq == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
            let t = if theta >= 0.0 {
                1.0 / (theta + (1.0 + theta * theta).sqrt())
            } else {
                -1.0 / (-theta + (1.0 + theta * theta).sqrt())
            };
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = t * c;

            let app = a[p][p];
            let aqq = a[q][q];
            a[p][p] = app - t * apq;
            a[q][q] = aqq + t * apq;
            a[p][q] = 0.0;
            a[q][p] = 0.0;
            let r = 3 - p - q; // remaining index
            let arp = a[r][p];
            let arq = a[r][q];
            a[r][p] = c * arp - s * arq;
            a[p][r] = a[r][p];
            a[r][q] = s * arp + c * arq;
            a[q][r] = a[r][q];

            for row in 0..3 {
                let vp = v[p][row];
                let vq = v[q][row];
                v[p][row] = c * vp - s * vq;
                v[q][row] = s * vp + c * vq;
            }
        }
    }

    let mut pairs: [(f64, [f64; 3]); 3] = [
        (a[0][0], v[0]),
        (a[1][1], v[1]),
        (a[2][2], v[2]),
    ];
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));

    let eigenvalues = [
        pairs[0].0.max(0.0),
        pairs[1].0.max(0.0),
        pairs[2].0.max(0.0),
    ];
    let eigenvectors = [
        canonicalize_sign(pairs[0].1),
        canonicalize_sign(pairs[1].1),
        canonicalize_sign(pairs[2].1),
    ];

    Ok(NeighborhoodEigen {
        eigenvalues,
        eigenvectors,
        neighbor_count: 0,
    })
}

pub fn covariance_features(eigen: &NeighborhoodEigen) -> CovarianceFeatures {
    covariance_features_with(eigen, PlanarityFormula::Standard)
}

pub fn covariance_features_with(
    eigen: &NeighborhoodEigen,
    formula: PlanarityFormula,
) -> CovarianceFeatures {
    let [l1, l2, l3] = eigen.eigenvalues;
    let sum = l1 + l2 + l3;
    if l1 <= 0.0 || sum <= 0.0 {
        return CovarianceFeatures::INVALID;
    }
    let planarity = match formula {
        PlanarityFormula::Standard => (l2 - l3) / l1,
        PlanarityFormula::Legacy => (l2 - l1) / l1,
    };
    CovarianceFeatures {
        planarity,
        omnivariance: (l1 * l2 * l3).cbrt(),
        surface_variation: l3 / sum,
        pca1: l1,
        pca2: l2,
        pca3: l3,
        e2: eigen.eigenvectors[1],
        valid: true,
    }
}

/// Per-point feature vectors aligned 1:1 with the source cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub column_names: Vec<String>,
    /// One row per cloud point, [`FEATURE_COLUMNS`] order; invalid rows are
    /// all zeros.
    pub rows: Vec<[f64; 9]>,
    pub valid: Vec<bool>,
    pub neighbor_counts: Vec<usize>,
    /// Extraction radius in meters.
    pub radius: f64,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.column_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }
}

pub fn extract_features(
    cloud: &LabeledPointCloud,
    radius: f64,
    min_neighbors: usize,
) -> Result<FeatureTable> {
    extract_features_with(cloud, radius, min_neighbors, PlanarityFormula::Standard)
}

pub fn extract_features_with(
    cloud: &LabeledPointCloud,
    radius: f64,
    min_neighbors: usize,
    formula: PlanarityFormula,
) -> Result<FeatureTable> {
    if !radius.is_finite() || radius <= 0.0 {
        return Err(Error::invalid(format!(
            "radius must be positive and finite, got {radius}"
        )));
    }
    if min_neighbors < 3 {
        return Err(Error::invalid(
            "min_neighbors must be at least 3 (a full-rank tensor needs 3 non-collinear points)",
        ));
    }
    let index = build_index(cloud)?;

    // Row i depends only on point i, so parallel extraction is deterministic.
    let computed: Vec<Result<(CovarianceFeatures, usize)>> = (0..cloud.points.len())
        .into_par_iter()
        .map(|i| {
            let neighbors = radius_query(&index, cloud.points[i], radius)?;
            let count = neighbors.len();
            if count < min_neighbors {
                return Ok((CovarianceFeatures::INVALID, count));
            }
            let coords: Vec<[f64; 3]> = neighbors.iter().map(|&j| cloud.points[j]).collect();
            let tensor = structure_tensor(&coords)?;
            let mut eigen = eigen_decompose(&tensor)?;
            eigen.neighbor_count = count;
            Ok((covariance_features_with(&eigen, formula), count))
        })
        .collect();

    let mut rows = Vec::with_capacity(cloud.points.len());
    let mut valid = Vec::with_capacity(cloud.points.len());
    let mut neighbor_counts = Vec::with_capacity(cloud.points.len());
    for item in computed {
        let (f, count) = item?;
        rows.push(f.row());
        valid.push(f.valid);
        neighbor_counts.push(count);
    }

    Ok(FeatureTable {
        column_names: FEATURE_COLUMNS.iter().map(|s| s.to_string()).collect(),
        rows,
        valid,
        neighbor_counts,
        radius,
    })
}

/// A named, ordered selection of feature columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub name: String,
    pub columns: Vec<String>,
}

impl FeatureSet {
    /// All nine covariance features.
    pub fn nine_f() -> FeatureSet {
        FeatureSet {
            name: "nine_f".to_string(),
            columns: FEATURE_COLUMNS.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// The top-six importance subset: surface variation, planarity, the three
    /// PCA eigenvalues and the y component of the second eigenvector.
    pub fn six_f() -> FeatureSet {
        FeatureSet {
            name: "six_f".to_string(),
            columns: ["surface_variation", "planarity", "pca1", "pca2", "pca3", "e2_y"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }

    /// Coordinates-only baseline: no feature columns.
    pub fn xyz_only() -> FeatureSet {
        FeatureSet {
            name: "xyz".to_string(),
            columns: Vec::new(),
        }
    }

    pub fn by_name(name: &str) -> Result<FeatureSet> {
        match name {
            "nine_f" | "9f" => Ok(FeatureSet::nine_f()),
            "six_f" | "6f" => Ok(FeatureSet::six_f()),
            "xyz" => Ok(FeatureSet::xyz_only()),
            other => Err(Error::invalid(format!(
                "unknown feature set `{other}` (expected nine_f|six_f|xyz)"
            ))),
        }
    }
}

/// Column-selected feature matrix plus a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedMatrix {
    pub column_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// `true` where the source row was valid; invalid rows carry zeros in
    /// the feature columns and must be excluded from training.
    pub mask: Vec<bool>,
}

/// Projects the table onto `set`'s columns, optionally prefixed by x, y, z.
pub fn select_columns(
    cloud: &LabeledPointCloud,
    table: &FeatureTable,
    set: &FeatureSet,
    include_xyz: bool,
) -> Result<SelectedMatrix> {
    if table.len() != cloud.len() {
        return Err(Error::invalid(format!(
            "feature table has {} rows but cloud has {} points",
            table.len(),
            cloud.len()
        )));
    }
    let indices: Vec<usize> = set
        .columns
        .iter()
        .map(|c| table.column_index(c))
        .collect::<Result<_>>()?;

    let mut column_names = Vec::new();
    if include_xyz {
        column_names.extend(["x", "y", "z"].map(String::from));
    }
    column_names.extend(set.columns.iter().cloned());

    let rows: Vec<Vec<f64>> = cloud
        .points
        .iter()
        .zip(&table.rows)
        .map(|(p, row)| {
            let mut out = Vec::with_capacity(column_names.len());
            if include_xyz {
                out.extend_from_slice(p);
            }
            out.extend(indices.iter().map(|&j| row[j]));
            out
        })
        .collect();

    Ok(SelectedMatrix {
        column_names,
        rows,
        mask: table.valid.clone(),
    })
}

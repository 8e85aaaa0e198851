//! Minimum-distance downsampling.
//!
//! Greedy first-come selection over input order: a point is kept iff no
//! earlier-kept point lies within `min_distance`. Kept points retain their
//! original coordinates and labels (no averaging). A uniform grid of cell
//! size `min_distance` accelerates the neighbor check; any conflicting kept
//! point must sit in the 27-cell neighborhood.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::io::LabeledPointCloud;

/// Minimum spacing between retained points, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DownsampleSpec {
    pub min_distance: f64,
}

impl DownsampleSpec {
    pub fn new(min_distance: f64) -> Result<Self> {
        if !min_distance.is_finite() || min_distance <= 0.0 {
            return Err(Error::invalid(format!(
                "min_distance must be positive and finite, got {min_distance}"
            )));
        }
        Ok(DownsampleSpec { min_distance })
    }
}

fn cell_of(p: &[f64; 3], inv_cell: f64) -> (i64, i64, i64) {
    (
        (p[0] * inv_cell).floor() as i64,
        (p[1] * inv_cell).floor() as i64,
        (p[2] * inv_cell).floor() as i64,
    )
}

fn dist_sq(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Greedy minimum-distance subset of `cloud`, deterministic in input order.
pub fn distance_downsample(
    cloud: &LabeledPointCloud,
    spec: &DownsampleSpec,
) -> Result<LabeledPointCloud> {
    let d = spec.min_distance;
    let d_sq = d * d;
    let inv_cell = 1.0 / d;

    let mut grid: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
    let mut kept: Vec<usize> = Vec::new();

    'points: for (i, p) in cloud.points.iter().enumerate() {
        if !p.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid(format!(
                "point {i} has non-finite coordinates"
            )));
        }
        let (cx, cy, cz) = cell_of(p, inv_cell);
        for nx in cx - 1..=cx + 1 {
            for ny in cy - 1..=cy + 1 {
                for nz in cz - 1..=cz + 1 {
                    if let Some(bucket) = grid.get(&(nx, ny, nz)) {
                        for &k in bucket {
                            if dist_sq(p, &cloud.points[k as usize]) < d_sq {
                                continue 'points;
                            }
                        }
                    }
                }
            }
        }
        grid.entry((cx, cy, cz)).or_default().push(i as u32);
        kept.push(i);
    }

    let points: Vec<[f64; 3]> = kept.iter().map(|&i| cloud.points[i]).collect();
    let labels = cloud
        .labels
        .as_ref()
        .map(|ls| kept.iter().map(|&i| ls[i]).collect());
    Ok(LabeledPointCloud {
        points,
        labels,
        class_names: cloud.class_names.clone(),
    })
}

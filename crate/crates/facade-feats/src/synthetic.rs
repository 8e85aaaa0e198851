//! Synthetic labeled scenes for tests and pipeline dry runs.
//!
//! `Plane` and `Line` are regular lattices so that interior neighborhoods
//! are symmetric and the feature limits (planarity 1, surface variation 0)
//! hold exactly rather than up to sampling noise. `Ball` is uniform random
//! scatter. `FacadeMock` is a small labeled wall with window recesses,
//! molding strips and a terrain plane, enough structure for an end-to-end
//! classification run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::io::{facade_class, LabeledPointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scene {
    Plane,
    Line,
    Ball,
    FacadeMock,
}

impl std::str::FromStr for Scene {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plane" => Ok(Scene::Plane),
            "line" => Ok(Scene::Line),
            "ball" => Ok(Scene::Ball),
            "facade-mock" | "facade_mock" => Ok(Scene::FacadeMock),
            other => Err(Error::invalid(format!(
                "unknown scene `{other}` (expected plane|line|ball|facade-mock)"
            ))),
        }
    }
}

/// Generates roughly `n` points (lattice scenes round up to a full grid).
pub fn generate(scene: Scene, n: usize, seed: u64) -> LabeledPointCloud {
    match scene {
        Scene::Plane => plane(n),
        Scene::Line => line(n),
        Scene::Ball => ball(n, seed),
        Scene::FacadeMock => facade_mock(n, seed),
    }
}

/// Square grid on z = 0 over a 4 m × 4 m patch.
fn plane(n: usize) -> LabeledPointCloud {
    let side = (n as f64).sqrt().ceil() as usize;
    let side = side.max(2);
    let extent = 4.0;
    let step = extent / (side - 1) as f64;
    let mut points = Vec::with_capacity(side * side);
    for i in 0..side {
        for j in 0..side {
            points.push([i as f64 * step, j as f64 * step, 0.0]);
        }
    }
    let mut cloud = LabeledPointCloud::with_labels(points, vec![0; side * side]);
    cloud.class_names.insert(0, "plane".to_string());
    cloud
}

/// Evenly spaced points along the x axis, 0.01 m apart.
fn line(n: usize) -> LabeledPointCloud {
    let points: Vec<[f64; 3]> = (0..n).map(|i| [i as f64 * 0.01, 0.0, 0.0]).collect();
    let mut cloud = LabeledPointCloud::with_labels(points, vec![0; n]);
    cloud.class_names.insert(0, "line".to_string());
    cloud
}

/// Uniform scatter in a solid ball of radius 1.2 m around the origin.
fn ball(n: usize, seed: u64) -> LabeledPointCloud {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let radius = 1.2;
    let mut points = Vec::with_capacity(n);
    while points.len() < n {
        let p = [
            rng.gen::<f64>() * 2.0 - 1.0,
            rng.gen::<f64>() * 2.0 - 1.0,
            rng.gen::<f64>() * 2.0 - 1.0,
        ];
        if p.iter().map(|c| c * c).sum::<f64>() <= 1.0 {
            points.push([p[0] * radius, p[1] * radius, p[2] * radius]);
        }
    }
    let mut cloud = LabeledPointCloud::with_labels(points, vec![0; n]);
    cloud.class_names.insert(0, "ball".to_string());
    cloud
}

const WINDOW_RECTS: [[f64; 4]; 3] = [
    // x_min, x_max, z_min, z_max
    [1.0, 2.0, 2.0, 3.5],
    [3.5, 4.5, 2.0, 3.5],
    [6.0, 7.0, 2.0, 3.5],
];

fn in_window(x: f64, z: f64) -> bool {
    WINDOW_RECTS
        .iter()
        .any(|r| x >= r[0] && x <= r[1] && z >= r[2] && z <= r[3])
}

/// Wall at y = 0 (8 m × 5 m) with recessed windows, protruding molding
/// strips and a ground plane in front.
fn facade_mock(n: usize, seed: u64) -> LabeledPointCloud {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);

    let n_wall = n / 2;
    let n_window = n / 5;
    let n_molding = (n * 3) / 20;
    let n_terrain = n - n_wall - n_window - n_molding;

    while points.len() < n_wall {
        let x = rng.gen::<f64>() * 8.0;
        let z = rng.gen::<f64>() * 5.0;
        if in_window(x, z) {
            continue;
        }
        let y = (rng.gen::<f64>() - 0.5) * 0.02;
        points.push([x, y, z]);
        labels.push(facade_class::WALL);
    }
    for _ in 0..n_window {
        let r = &WINDOW_RECTS[rng.gen_range(0..WINDOW_RECTS.len())];
        let x = r[0] + rng.gen::<f64>() * (r[1] - r[0]);
        let z = r[2] + rng.gen::<f64>() * (r[3] - r[2]);
        points.push([x, -0.15, z]);
        labels.push(facade_class::WINDOW);
    }
    for i in 0..n_molding {
        let x = rng.gen::<f64>() * 8.0;
        let z_base = if i % 2 == 0 { 1.4 } else { 3.9 };
        let z = z_base + rng.gen::<f64>() * 0.1;
        points.push([x, 0.12, z]);
        labels.push(facade_class::MOLDING);
    }
    for _ in 0..n_terrain {
        let x = rng.gen::<f64>() * 8.0;
        let y = -(rng.gen::<f64>() * 2.0);
        points.push([x, y, 0.0]);
        labels.push(facade_class::TERRAIN);
    }

    let mut cloud = LabeledPointCloud::with_labels(points, labels);
    for (id, name) in [
        (facade_class::WALL, "wall"),
        (facade_class::WINDOW, "window"),
        (facade_class::MOLDING, "molding"),
        (facade_class::TERRAIN, "terrain"),
    ] {
        cloud.class_names.insert(id, name.to_string());
    }
    cloud
}

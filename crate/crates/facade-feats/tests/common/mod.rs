//! Independent oracles shared by the integration suites.
//!
//! Everything here is deliberately written from the textbook definitions —
//! linear-scan neighbor search, accumulate-and-divide covariance, the
//! closed-form trigonometric eigenvalue solution — so that agreement with the
//! library is evidence rather than tautology.

#![allow(dead_code)]
#![allow(clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Uniform random points in an axis-aligned box.
pub fn random_cloud(n: usize, extent: [f64; 3], seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            [
                rng.gen::<f64>() * extent[0],
                rng.gen::<f64>() * extent[1],
                rng.gen::<f64>() * extent[2],
            ]
        })
        .collect()
}

/// Linear-scan radius search, boundary inclusive, indices ascending.
pub fn brute_force_neighbors(points: &[[f64; 3]], center: [f64; 3], radius: f64) -> Vec<usize> {
    let r2 = radius * radius;
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            let d2: f64 = (0..3).map(|k| (p[k] - center[k]) * (p[k] - center[k])).sum();
            d2 <= r2
        })
        .map(|(i, _)| i)
        .collect()
}

/// Population covariance of the coordinates, one outer product at a time.
pub fn oracle_covariance(coords: &[[f64; 3]]) -> [[f64; 3]; 3] {
    let n = coords.len() as f64;
    let mut mean = [0.0; 3];
    for p in coords {
        for k in 0..3 {
            mean[k] += p[k] / n;
        }
    }
    let mut cov = [[0.0; 3]; 3];
    for p in coords {
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += (p[i] - mean[i]) * (p[j] - mean[j]) / n;
            }
        }
    }
    cov
}

/// Largest-magnitude component positive; ties to the earliest axis.
pub fn oracle_canonicalize(v: [f64; 3]) -> [f64; 3] {
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

/// Closed-form eigenvalues of a symmetric 3×3 matrix via the trigonometric
/// solution of the characteristic cubic, sorted descending.
pub fn oracle_eigenvalues(m: &[[f64; 3]; 3]) -> [f64; 3] {
    let p1 = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
    let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    if p1 == 0.0 {
        let mut d = [m[0][0], m[1][1], m[2][2]];
        d.sort_by(|a, b| b.total_cmp(a));
        return d;
    }
    let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let mut b = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            b[i][j] = (m[i][j] - if i == j { q } else { 0.0 }) / p;
        }
    }
    let det_b = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
        - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let r = (det_b / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos();
    let e2 = 3.0 * q - e1 - e3;
    [e1, e2, e3]
}

/// Eigenvector for a known eigenvalue of a symmetric 3×3 matrix: the
/// largest cross product of two rows of (M − λI), normalized and
/// sign-canonicalized. Only reliable when λ is simple.
pub fn oracle_eigenvector(m: &[[f64; 3]; 3], lambda: f64) -> [f64; 3] {
    let mut a = *m;
    for i in 0..3 {
        a[i][i] -= lambda;
    }
    let cross = |u: [f64; 3], v: [f64; 3]| {
        [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ]
    };
    let candidates = [
        cross(a[0], a[1]),
        cross(a[0], a[2]),
        cross(a[1], a[2]),
    ];
    let norm = |v: &[f64; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let best = candidates
        .into_iter()
        .max_by(|u, v| norm(u).total_cmp(&norm(v)))
        .unwrap();
    let n = norm(&best);
    assert!(n > 0.0, "degenerate eigenvalue passed to the vector oracle");
    oracle_canonicalize([best[0] / n, best[1] / n, best[2] / n])
}

/// Feature vector from eigen-structure, in the library's column order:
/// planarity, surface_variation, omnivariance, pca1-3, e2.
pub fn oracle_feature_row(eigenvalues: [f64; 3], e2: [f64; 3]) -> [f64; 9] {
    let [l1, l2, l3] = eigenvalues;
    [
        (l2 - l3) / l1,
        l3 / (l1 + l2 + l3),
        (l1 * l2 * l3).cbrt(),
        l1,
        l2,
        l3,
        e2[0],
        e2[1],
        e2[2],
    ]
}

/// Full per-point oracle pipeline: brute-force neighbors, textbook
/// covariance, closed-form eigen solve. Returns `None` for points with
/// fewer than `min_neighbors` neighbors (the library flags those invalid).
pub fn oracle_point_features(
    points: &[[f64; 3]],
    i: usize,
    radius: f64,
    min_neighbors: usize,
) -> Option<[f64; 9]> {
    let neighbors = brute_force_neighbors(points, points[i], radius);
    if neighbors.len() < min_neighbors {
        return None;
    }
    let coords: Vec<[f64; 3]> = neighbors.iter().map(|&j| points[j]).collect();
    let cov = oracle_covariance(&coords);
    let mut ev = oracle_eigenvalues(&cov);
    for e in &mut ev {
        *e = e.max(0.0);
    }
    if ev[0] <= 0.0 {
        return None;
    }
    let e2 = oracle_eigenvector(&cov, ev[1]);
    Some(oracle_feature_row(ev, e2))
}

//! KD-tree over point coordinates with exact fixed-radius queries.
//!
//! Median split on the widest-spread axis, leaf size 16. Queries compare
//! squared distances and include the boundary (`dist <= radius`), so a point
//! exactly `radius` away is a neighbor. A built index is immutable and can
//! be queried from any number of threads.

use crate::error::{Error, Result};
use crate::io::LabeledPointCloud;

const LEAF_SIZE: usize = 16;

#[derive(Debug)]
enum Node {
    Leaf {
        start: u32,
        end: u32,
    },
    Split {
        axis: u8,
        value: f64,
        left: u32,
        right: u32,
    },
}

/// Immutable KD-tree over a cloud's coordinates.
#[derive(Debug)]
pub struct KdIndex {
    nodes: Vec<Node>,
    /// Permutation of point indices; leaves own contiguous ranges.
    order: Vec<u32>,
    points: Vec<[f64; 3]>,
    root: Option<u32>,
}

impl KdIndex {
    pub fn point_count(&self) -> usize {
        self.points.len()
    }

    pub fn point(&self, i: usize) -> [f64; 3] {
        self.points[i]
    }

    /// Maximum leaf depth (root = 0); used by the balance check.
    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: u32) -> usize {
            match &nodes[i as usize] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        self.root.map_or(0, |r| go(&self.nodes, r))
    }
}

pub fn build_index(cloud: &LabeledPointCloud) -> Result<KdIndex> {
    for (i, p) in cloud.points.iter().enumerate() {
        if !p.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid(format!(
                "point {i} has non-finite coordinates"
            )));
        }
    }
    let points = cloud.points.clone();
    let mut order: Vec<u32> = (0..points.len() as u32).collect();
    let mut nodes = Vec::new();
    let root = if points.is_empty() {
        None
    } else {
        let n = points.len();
        Some(build_node(&points, &mut order, &mut nodes, 0, n))
    };
    Ok(KdIndex {
        nodes,
        order,
        points,
        root,
    })
}

fn build_node(
    points: &[[f64; 3]],
    order: &mut [u32],
    nodes: &mut Vec<Node>,
    start: usize,
    end: usize,
) -> u32 {
    let len = end - start;
    if len <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: start as u32,
            end: end as u32,
        });
        return (nodes.len() - 1) as u32;
    }

    // Widest-spread axis over this node's points.
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for &i in &order[start..end] {
        let p = &points[i as usize];
        for k in 0..3 {
            min[k] = min[k].min(p[k]);
            max[k] = max[k].max(p[k]);
        }
    }
    let mut axis = 0usize;
    let mut spread = max[0] - min[0];
    for k in 1..3 {
        if max[k] - min[k] > spread {
            spread = max[k] - min[k];
            axis = k;
        }
    }
    if spread == 0.0 {
        // All points coincide; splitting cannot make progress.
        nodes.push(Node::Leaf {
            start: start as u32,
            end: end as u32,
        });
        return (nodes.len() - 1) as u32;
    }

    let mid = start + len / 2;
    order[start..end].select_nth_unstable_by(len / 2, |&a, &b| {
        points[a as usize][axis].total_cmp(&points[b as usize][axis])
    });
    let value = points[order[mid] as usize][axis];

    let slot = nodes.len();
    nodes.push(Node::Leaf { start: 0, end: 0 }); // placeholder
    let left = build_node(points, order, nodes, start, mid);
    let right = build_node(points, order, nodes, mid, end);
    nodes[slot] = Node::Split {
        axis: axis as u8,
        value,
        left,
        right,
    };
    slot as u32
}

/// Indices of all points with `‖p − center‖ ≤ radius`, ascending.
pub fn radius_query(index: &KdIndex, center: [f64; 3], radius: f64) -> Result<Vec<usize>> {
    if !center.iter().all(|c| c.is_finite()) {
        return Err(Error::invalid("query center has non-finite coordinates"));
    }
    if !radius.is_finite() || radius <= 0.0 {
        return Err(Error::invalid(format!(
            "radius must be positive and finite, got {radius}"
        )));
    }
    let mut out = Vec::new();
    if let Some(root) = index.root {
        let r_sq = radius * radius;
        let mut stack = vec![root];
        while let Some(n) = stack.pop() {
            match &index.nodes[n as usize] {
                Node::Leaf { start, end } => {
                    for &i in &index.order[*start as usize..*end as usize] {
                        let p = &index.points[i as usize];
                        let dx = p[0] - center[0];
                        let dy = p[1] - center[1];
                        let dz = p[2] - center[2];
                        if dx * dx + dy * dy + dz * dz <= r_sq {
                            out.push(i as usize);
                        }
                    }
                }
                Node::Split {
                    axis,
                    value,
                    left,
                    right,
                } => {
                    let delta = center[*axis as usize] - value;
                    // Median point sits in the right child, so the right side
                    // covers coords >= value and the left side <= value.
                    if delta <= radius {
                        stack.push(*left);
                    }
                    if -delta <= radius {
                        stack.push(*right);
                    }
                }
            }
        }
    }
    out.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn brute(points: &[[f64; 3]], center: [f64; 3], radius: f64) -> Vec<usize> {
        let r_sq = radius * radius;
        points
            .iter()
            .enumerate()
            .filter(|(_, p)| {
                let d: f64 = (0..3).map(|k| (p[k] - center[k]).powi(2)).sum();
                d <= r_sq
            })
            .map(|(i, _)| i)
            .collect()
    }

    fn random_cloud(n: usize, seed: u64) -> LabeledPointCloud {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        LabeledPointCloud::new(
            (0..n)
                .map(|_| [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()])
                .collect(),
        )
    }

    #[test]
    fn empty_cloud_empty_index() {
        let index = build_index(&LabeledPointCloud::default()).unwrap();
        assert_eq!(index.point_count(), 0);
        assert!(radius_query(&index, [0.0; 3], 1.0).unwrap().is_empty());
    }

    #[test]
    fn singleton_found_at_itself() {
        let index = build_index(&LabeledPointCloud::new(vec![[1.0, 2.0, 3.0]])).unwrap();
        assert_eq!(index.point_count(), 1);
        assert_eq!(radius_query(&index, [1.0, 2.0, 3.0], 0.1).unwrap(), vec![0]);
    }

    #[test]
    fn one_in_one_out() {
        let cloud = LabeledPointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0]]);
        let index = build_index(&cloud).unwrap();
        assert_eq!(radius_query(&index, [0.0; 3], 0.5).unwrap(), vec![0]);
    }

    #[test]
    fn boundary_is_inclusive() {
        let cloud = LabeledPointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0]]);
        let index = build_index(&cloud).unwrap();
        assert_eq!(radius_query(&index, [0.0; 3], 1.0).unwrap(), vec![0, 1]);
    }

    #[test]
    fn matches_brute_force_on_random_probes() {
        let cloud = random_cloud(10_000, 42);
        let index = build_index(&cloud).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..100 {
            let center = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
            let radius = 0.05 + 0.5 * rng.gen::<f64>();
            let got = radius_query(&index, center, radius).unwrap();
            assert_eq!(got, brute(&cloud.points, center, radius));
        }
    }

    #[test]
    fn centroid_probe_matches_brute_force() {
        let cloud = random_cloud(10_000, 5);
        let index = build_index(&cloud).unwrap();
        let got = radius_query(&index, [0.5, 0.5, 0.5], 0.8).unwrap();
        assert_eq!(got, brute(&cloud.points, [0.5, 0.5, 0.5], 0.8));
    }

    #[test]
    fn monotone_in_radius() {
        let cloud = random_cloud(2_000, 8);
        let index = build_index(&cloud).unwrap();
        let small = radius_query(&index, [0.5, 0.5, 0.5], 0.2).unwrap();
        let large = radius_query(&index, [0.5, 0.5, 0.5], 0.4).unwrap();
        for i in &small {
            assert!(large.contains(i));
        }
    }

    #[test]
    fn depth_is_balanced() {
        let cloud = random_cloud(10_000, 3);
        let index = build_index(&cloud).unwrap();
        let n = index.point_count() as f64;
        let bound = (n.log2().ceil() as usize) + 2;
        assert!(index.depth() <= bound, "depth {} > {}", index.depth(), bound);
    }

    #[test]
    fn duplicate_points_all_reported() {
        let cloud = LabeledPointCloud::new(vec![[0.5; 3]; 100]);
        let index = build_index(&cloud).unwrap();
        let got = radius_query(&index, [0.5; 3], 0.01).unwrap();
        assert_eq!(got, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn bad_inputs_rejected() {
        let index = build_index(&random_cloud(10, 0)).unwrap();
        assert!(radius_query(&index, [f64::NAN, 0.0, 0.0], 1.0).is_err());
        assert!(radius_query(&index, [0.0; 3], 0.0).is_err());
        assert!(radius_query(&index, [0.0; 3], f64::INFINITY).is_err());
        let bad = LabeledPointCloud::new(vec![[f64::INFINITY, 0.0, 0.0]]);
        assert!(build_index(&bad).is_err());
    }
}

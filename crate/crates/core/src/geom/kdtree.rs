use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Point3;

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Balanced k-d tree over a fixed set of `dim`-dimensional points.
///
/// Splits on the axis with the widest spread at the median; leaves hold at most
/// 16 points. Query results are exactly those of a linear scan, with distance
/// ties resolved towards the lower point id.
#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    coords: Vec<f64>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    id: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl KdTree {
    /// Builds from a flat row-major coordinate buffer (`coords.len() = n·dim`).
    pub fn from_flat(dim: usize, coords: Vec<f64>) -> Self {
        assert!(dim > 0 && coords.len().is_multiple_of(dim), "coordinate buffer shape");
        let n = coords.len() / dim;
        let mut tree = KdTree {
            dim,
            coords,
            order: (0..n).collect(),
            nodes: Vec::new(),
        };
        if n > 0 {
            tree.build(0, n);
        }
        tree
    }

    pub fn from_points(points: &[Point3<f64>]) -> Self {
        let coords = points.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        Self::from_flat(3, coords)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, id: usize) -> &[f64] {
        &self.coords[id * self.dim..(id + 1) * self.dim]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf { start, end });
        if end - start <= LEAF_SIZE {
            return slot;
        }
        let axis = self.widest_axis(start, end);
        let (dim, coords) = (self.dim, &self.coords);
        let mid = start + (end - start) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            coords[a * dim + axis]
                .total_cmp(&coords[b * dim + axis])
                .then(a.cmp(&b))
        });
        let value = coords[self.order[mid] * dim + axis];
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[slot] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        slot
    }

    fn widest_axis(&self, start: usize, end: usize) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for axis in 0..self.dim {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &self.order[start..end] {
                let v = self.coords[i * self.dim + axis];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best.1 {
                best = (axis, hi - lo);
            }
        }
        best.0
    }

    fn dist2(&self, id: usize, q: &[f64]) -> f64 {
        self.point(id)
            .iter()
            .zip(q)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// The `min(k, len)` nearest points as `(id, distance)`, ascending by
    /// distance then id.
    pub fn knn(&self, query: &[f64], k: usize) -> Vec<(usize, f64)> {
        assert_eq!(query.len(), self.dim, "query dimension");
        if k == 0 || self.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(0, query, k, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.id, c.dist2.sqrt())).collect()
    }

    pub fn knn3(&self, query: &Point3<f64>, k: usize) -> Vec<(usize, f64)> {
        self.knn(&[query.x, query.y, query.z], k)
    }

    /// Nearest point, or `None` for an empty tree.
    pub fn nearest(&self, query: &[f64]) -> Option<(usize, f64)> {
        self.knn(query, 1).into_iter().next()
    }

    fn knn_rec(&self, node: usize, q: &[f64], k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &id in &self.order[start..end] {
                    let c = Candidate {
                        dist2: self.dist2(id, q),
                        id,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near, q, k, heap);
                let worst = heap.peek().map_or(f64::INFINITY, |c| c.dist2);
                if heap.len() < k || diff * diff <= worst {
                    self.knn_rec(far, q, k, heap);
                }
            }
        }
    }

    /// All points within `radius` (inclusive), ascending by id.
    pub fn within_radius(&self, query: &[f64], radius: f64) -> Vec<usize> {
        assert_eq!(query.len(), self.dim, "query dimension");
        let mut out = Vec::new();
        if !self.is_empty() {
            self.radius_rec(0, query, radius * radius, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn radius_rec(&self, node: usize, q: &[f64], r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                out.extend(
                    self.order[start..end]
                        .iter()
                        .copied()
                        .filter(|&id| self.dist2(id, q) <= r2),
                );
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                if diff <= 0.0 || diff * diff <= r2 {
                    self.radius_rec(left, q, r2, out);
                }
                if diff >= 0.0 || diff * diff <= r2 {
                    self.radius_rec(right, q, r2, out);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scan(coords: &[f64], dim: usize, q: &[f64], k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = coords
            .chunks(dim)
            .enumerate()
            .map(|(i, p)| (i, p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()))
            .collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all.into_iter().map(|(i, d)| (i, d.sqrt())).collect()
    }

    #[test]
    fn query_point_in_set_has_zero_distance() {
        let pts = vec![Point3::new(1.0, 2.0, 3.0), Point3::new(-1.0, 0.0, 0.0)];
        let tree = KdTree::from_points(&pts);
        assert_eq!(tree.knn3(&pts[0], 1), vec![(0, 0.0)]);
    }

    #[test]
    fn k_larger_than_size_returns_everything() {
        let pts: Vec<_> = (0..5).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let tree = KdTree::from_points(&pts);
        let res = tree.knn3(&Point3::origin(), 10);
        assert_eq!(res.iter().map(|r| r.0).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn ties_resolve_to_lower_id() {
        // many duplicate points force ties across leaves
        let pts = vec![Point3::new(1.0, 0.0, 0.0); 100];
        let tree = KdTree::from_points(&pts);
        let res = tree.knn3(&Point3::origin(), 5);
        assert_eq!(res.iter().map(|r| r.0).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn matches_linear_scan_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let coords: Vec<f64> = (0..3000).map(|_| rng.random_range(-5.0..5.0)).collect();
        let tree = KdTree::from_flat(3, coords.clone());
        for _ in 0..50 {
            let q: Vec<f64> = (0..3).map(|_| rng.random_range(-6.0..6.0)).collect();
            assert_eq!(tree.knn(&q, 5), scan(&coords, 3, &q, 5));
        }
    }

    #[test]
    fn high_dimensional_queries_match_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let coords: Vec<f64> = (0..64 * 300).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tree = KdTree::from_flat(64, coords.clone());
        for k in [1, 3, 17] {
            let q: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
            assert_eq!(tree.knn(&q, k), scan(&coords, 64, &q, k));
        }
    }

    #[test]
    fn radius_search_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let coords: Vec<f64> = (0..1500).map(|_| rng.random_range(-5.0..5.0)).collect();
        let tree = KdTree::from_flat(3, coords.clone());
        let q = [0.5, -0.2, 1.0];
        let expected: Vec<usize> = coords
            .chunks(3)
            .enumerate()
            .filter(|(_, p)| p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= 4.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(tree.within_radius(&q, 2.0), expected);
    }
}

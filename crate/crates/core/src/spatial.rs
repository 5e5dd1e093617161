//! Exact k-nearest-neighbor queries with a balanced kd-tree.
//!
//! Results are ordered by (distance, index), so ties resolve to the lower
//! index and every query agrees exactly with a brute-force scan.

use std::collections::BinaryHeap;

use crate::error::{Error, Result};

pub const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

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
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Squared Euclidean distance, summed in axis order.
#[inline]
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KdTree {
    /// Builds a tree over `coords` (flat, `dim` values per point).
    pub fn build(dim: usize, coords: &[f64]) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(Error::InvalidArgument("coordinate count is not a multiple of dim".into()));
        }
        let n = coords.len() / dim;
        if n == 0 {
            return Err(Error::Empty("kd-tree input"));
        }
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite {
                what: "coordinate",
                index: i / dim,
            });
        }
        let mut tree = KdTree {
            dim,
            coords: coords.to_vec(),
            order: (0..n).collect(),
            nodes: Vec::with_capacity(2 * n / LEAF_SIZE + 1),
        };
        tree.build_node(0, n);
        Ok(tree)
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let dim = self.dim;
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for &i in &self.order[start..end] {
            for a in 0..dim {
                let c = self.coords[i * dim + a];
                lo[a] = lo[a].min(c);
                hi[a] = hi[a].max(c);
            }
        }
        let axis = (0..dim)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap();
        if hi[axis] - lo[axis] == 0.0 {
            // all points coincide
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = (start + end) / 2;
        let coords = &self.coords;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            coords[a * dim + axis].total_cmp(&coords[b * dim + axis])
        });
        let value = self.coords[self.order[mid] * dim + axis];
        self.nodes.push(Node::Split {
            axis,
            value,
            left: 0,
            right: 0,
        });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        if let Node::Split {
            left: l, right: r, ..
        } = &mut self.nodes[id]
        {
            *l = left;
            *r = right;
        }
        id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// The `k` nearest points to `query` as `(index, distance)`, ascending.
    /// `exclude` removes one point by index (used for self-queries).
    pub fn knn(&self, query: &[f64], k: usize, exclude: Option<usize>) -> Result<Vec<(usize, f64)>> {
        let available = self.len() - usize::from(exclude.is_some_and(|e| e < self.len()));
        if k == 0 || k > available {
            return Err(Error::KTooLarge { k, available });
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, exclude, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        Ok(out.into_iter().map(|c| (c.index, c.dist2.sqrt())).collect())
    }

    /// Neighbors of stored point `i`, excluding itself.
    pub fn knn_of(&self, i: usize, k: usize) -> Result<Vec<(usize, f64)>> {
        self.knn(self.point(i), k, Some(i))
    }

    pub fn nearest(&self, query: &[f64]) -> (usize, f64) {
        let mut heap = BinaryHeap::with_capacity(2);
        self.search(0, query, 1, None, &mut heap);
        let c = heap.pop().expect("tree is non-empty");
        (c.index, c.dist2.sqrt())
    }

    fn search(
        &self,
        node: usize,
        q: &[f64],
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let c = Candidate {
                        dist2: dist2(q, self.point(i)),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
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
                self.search(near, q, k, exclude, heap);
                // prune only strictly farther subtrees; equal distances may hold lower indices
                if heap.len() < k || diff * diff <= heap.peek().unwrap().dist2 {
                    self.search(far, q, k, exclude, heap);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn brute(coords: &[f64], dim: usize, q: &[f64], k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        let mut all: Vec<(f64, usize)> = coords
            .chunks_exact(dim)
            .enumerate()
            .filter(|(i, _)| Some(*i) != exclude)
            .map(|(i, p)| (dist2(q, p), i))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(d, i)| (i, d.sqrt())).collect()
    }

    fn random_coords(n: usize, dim: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn single_point() {
        let t = KdTree::build(3, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(t.nearest(&[0.0, 0.0, 0.0]).0, 0);
        assert!(matches!(t.knn_of(0, 1), Err(Error::KTooLarge { .. })));
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(KdTree::build(3, &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn small_line_example() {
        let t = KdTree::build(3, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 3.0, 0.0, 0.0]).unwrap();
        assert_eq!(t.knn_of(0, 1).unwrap(), vec![(1, 1.0)]);
        let d: Vec<f64> = t.knn_of(0, 2).unwrap().into_iter().map(|x| x.1).collect();
        assert_eq!(d, vec![1.0, 3.0]);
        assert!(t.knn_of(0, 3).is_err());
    }

    #[test]
    fn duplicates_are_both_found() {
        let mut coords = vec![0.5, 0.5, 0.5, 0.5];
        coords.extend(random_coords(40, 2, 1));
        let t = KdTree::build(2, &coords).unwrap();
        let nn = t.knn(&[0.5, 0.5], 2, None).unwrap();
        assert_eq!(nn, vec![(0, 0.0), (1, 0.0)]);
        assert_eq!(t.knn_of(0, 1).unwrap(), vec![(1, 0.0)]);
    }

    #[test]
    fn matches_brute_force_1000_points() {
        let coords = random_coords(1000, 3, 7);
        let t = KdTree::build(3, &coords).unwrap();
        let queries = random_coords(100, 3, 8);
        for q in queries.chunks_exact(3) {
            for k in [1, 5, 17] {
                assert_eq!(t.knn(q, k, None).unwrap(), brute(&coords, 3, q, k, None));
            }
        }
    }

    #[test]
    fn matches_brute_force_k50_self_excluded() {
        let coords = random_coords(500, 3, 11);
        let t = KdTree::build(3, &coords).unwrap();
        for i in (0..500).step_by(7) {
            let q = &coords[i * 3..i * 3 + 3];
            assert_eq!(t.knn_of(i, 50).unwrap(), brute(&coords, 3, q, 50, Some(i)));
        }
    }

    #[test]
    fn ties_on_a_lattice_break_by_index() {
        let mut coords = Vec::new();
        for i in 0..12 {
            for j in 0..12 {
                coords.extend([i as f64, j as f64]);
            }
        }
        let t = KdTree::build(2, &coords).unwrap();
        for q in [[5.0, 5.0], [5.5, 5.5], [0.0, 11.0]] {
            for k in [1, 4, 9, 13] {
                assert_eq!(t.knn(&q, k, None).unwrap(), brute(&coords, 2, &q, k, None));
            }
        }
    }

    proptest! {
        #[test]
        fn knn_equals_brute_force(seed in 0u64..1000, n in 1usize..200, k in 1usize..30) {
            let coords = random_coords(n, 2, seed);
            let t = KdTree::build(2, &coords).unwrap();
            let k = k.min(n);
            let q = random_coords(1, 2, seed + 1);
            let got = t.knn(&q, k, None).unwrap();
            prop_assert_eq!(&got, &brute(&coords, 2, &q, k, None));
            prop_assert!(got.windows(2).all(|w| w[0].1 <= w[1].1));
        }
    }
}

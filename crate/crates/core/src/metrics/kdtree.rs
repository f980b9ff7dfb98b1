//! Static 3-d tree for exact nearest-neighbour queries.
//!
//! Ties in squared distance resolve to the lowest point index, so results are
//! identical to a linear scan that keeps the first minimum.

use std::cmp::Ordering;

use crate::scalar::Scalar;

const LEAF: usize = 8;

#[derive(Debug, Clone)]
enum Node<T> {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: T, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct KdTree<'a, T> {
    points: &'a [[T; 3]],
    /// Point indices, grouped by leaf.
    order: Vec<usize>,
    nodes: Vec<Node<T>>,
}

#[inline]
pub fn dist2<T: Scalar>(a: &[T; 3], b: &[T; 3]) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
fn closer<T: Scalar>(d: T, i: usize, best: (T, usize)) -> bool {
    d < best.0 || (d == best.0 && i < best.1)
}

impl<'a, T: Scalar> KdTree<'a, T> {
    pub fn new(points: &'a [[T; 3]]) -> Self {
        let mut tree = Self {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let slice = &self.order[start..end];
        let axis = (0..3)
            .max_by(|&a, &b| {
                let spread = |ax: usize| {
                    let (lo, hi) = slice.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &i| {
                        let v = self.points[i][ax];
                        (lo.min(v), hi.max(v))
                    });
                    hi - lo
                };
                spread(a).partial_cmp(&spread(b)).unwrap_or(Ordering::Equal)
            })
            .unwrap();
        let mid = (start + end) / 2;
        let pts = self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a][axis].partial_cmp(&pts[b][axis]).unwrap_or(Ordering::Equal)
        });
        let value = pts[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// Index of the nearest point and its squared distance.
    pub fn nearest(&self, q: &[T; 3]) -> Option<(usize, T)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (T::infinity(), usize::MAX);
        self.search(0, q, &mut best);
        Some((best.1, best.0))
    }

    fn search(&self, id: usize, q: &[T; 3], best: &mut (T, usize)) {
        match self.nodes[id] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist2(q, &self.points[i]);
                    if closer(d, i, *best) {
                        *best = (d, i);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < T::zero() { (left, right) } else { (right, left) };
                self.search(near, q, best);
                // equal distances must still be visited for the index tie-break
                if diff * diff <= best.0 {
                    self.search(far, q, best);
                }
            }
        }
    }

    /// The `k` nearest points sorted by (squared distance, index).
    pub fn k_nearest(&self, q: &[T; 3], k: usize) -> Vec<(usize, T)> {
        let mut heap: Vec<(T, usize)> = Vec::with_capacity(k + 1);
        if k > 0 && !self.points.is_empty() {
            self.search_k(0, q, k, &mut heap);
        }
        heap.into_iter().map(|(d, i)| (i, d)).collect()
    }

    fn worst(heap: &[(T, usize)], k: usize) -> Option<(T, usize)> {
        (heap.len() == k).then(|| heap[k - 1])
    }

    fn search_k(&self, id: usize, q: &[T; 3], k: usize, heap: &mut Vec<(T, usize)>) {
        match self.nodes[id] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist2(q, &self.points[i]);
                    if Self::worst(heap, k).is_none_or(|w| closer(d, i, w)) {
                        let at = heap.partition_point(|&(hd, hi)| !closer(d, i, (hd, hi)));
                        heap.insert(at, (d, i));
                        heap.truncate(k);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < T::zero() { (left, right) } else { (right, left) };
                self.search_k(near, q, k, heap);
                if Self::worst(heap, k).is_none_or(|w| diff * diff <= w.0) {
                    self.search_k(far, q, k, heap);
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

    fn brute(points: &[[f64; 3]], q: &[f64; 3]) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = dist2(q, p);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    #[test]
    fn matches_linear_scan_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // integer coordinates make exact ties common
        let points: Vec<[f64; 3]> = (0..500).map(|_| [0; 3].map(|_: i32| rng.gen_range(0..6) as f64)).collect();
        let tree = KdTree::new(&points);
        for _ in 0..500 {
            let q = [0; 3].map(|_: i32| rng.gen_range(-1..7) as f64 + 0.5 * rng.gen_range(0..2) as f64);
            assert_eq!(tree.nearest(&q), Some(brute(&points, &q)));
        }
    }

    #[test]
    fn k_nearest_matches_sorted_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let points: Vec<[f64; 3]> = (0..300).map(|_| [0; 3].map(|_: i32| rng.gen_range(0..5) as f64)).collect();
        let tree = KdTree::new(&points);
        for _ in 0..100 {
            let q = [0; 3].map(|_: i32| rng.gen_range(0.0..5.0));
            let mut all: Vec<(usize, f64)> = points.iter().enumerate().map(|(i, p)| (i, dist2(&q, p))).collect();
            all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            all.truncate(17);
            assert_eq!(tree.k_nearest(&q, 17), all);
        }
    }

    #[test]
    fn empty_and_single() {
        let none: Vec<[f32; 3]> = Vec::new();
        assert_eq!(KdTree::new(&none).nearest(&[0.0; 3]), None);
        let one = [[1.0f32, 2.0, 3.0]];
        assert_eq!(KdTree::new(&one).nearest(&[1.0, 2.0, 4.0]), Some((0, 1.0)));
    }
}

//! Static 3D kd-tree over an owned point set.
//!
//! The tree is implicit: `order` is a permutation of point indices arranged so
//! that the median of every subrange sits at its midpoint.

use crate::geometry::Point3;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point3>,
    order: Vec<u32>,
    axes: Vec<u8>,
}

impl KdTree {
    pub fn new(points: Vec<Point3>) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut axes = vec![0u8; points.len()];
        build(&points, &mut order, &mut axes);
        Self { points, order, axes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    /// Nearest point within `max_dist`: `(index, squared distance)`.
    pub fn nearest(&self, q: &Point3, max_dist: f64) -> Option<(usize, f64)> {
        let mut best = (usize::MAX, max_dist * max_dist);
        let mut off = [0.0; 3];
        self.nearest_in(q, 0, self.points.len(), 0.0, &mut off, &mut best);
        (best.0 != usize::MAX).then_some(best)
    }

    // `rd` is the squared distance from `q` to the cell of the subrange and
    // `off` its per-axis components.
    fn nearest_in(&self, q: &Point3, lo: usize, hi: usize, rd: f64, off: &mut [f64; 3], best: &mut (usize, f64)) {
        if hi - lo <= LEAF_SIZE {
            for &i in &self.order[lo..hi] {
                let d = (self.points[i as usize] - q).norm_squared();
                if d < best.1 || (d == best.1 && (i as usize) < best.0) {
                    *best = (i as usize, d);
                }
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let i = self.order[mid] as usize;
        let axis = self.axes[mid] as usize;
        let d = (self.points[i] - q).norm_squared();
        if d < best.1 || (d == best.1 && i < best.0) {
            *best = (i, d);
        }
        let diff = q[axis] - self.points[i][axis];
        let (first, second) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.nearest_in(q, first.0, first.1, rd, off, best);
        let old = off[axis];
        let far_rd = rd - old * old + diff * diff;
        if far_rd <= best.1 {
            off[axis] = diff;
            self.nearest_in(q, second.0, second.1, far_rd, off, best);
            off[axis] = old;
        }
    }

    /// The `k` nearest points sorted by `(squared distance, index)`.
    pub fn knn(&self, q: &Point3, k: usize) -> Vec<(usize, f64)> {
        let mut heap: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if k > 0 {
            let mut off = [0.0; 3];
            self.knn_in(q, k, 0, self.points.len(), 0.0, &mut off, &mut heap);
        }
        heap.into_iter().map(|(d, i)| (i, d)).collect()
    }

    // `heap` is kept sorted; k is small so insertion is cheap.
    fn push_candidate(heap: &mut Vec<(f64, usize)>, k: usize, cand: (f64, usize)) {
        if heap.len() == k {
            let worst = heap[k - 1];
            if (cand.0, cand.1) >= (worst.0, worst.1) {
                return;
            }
            heap.pop();
        }
        let pos = heap.partition_point(|&(d, i)| (d, i) < (cand.0, cand.1));
        heap.insert(pos, cand);
    }

    fn knn_in(
        &self,
        q: &Point3,
        k: usize,
        lo: usize,
        hi: usize,
        rd: f64,
        off: &mut [f64; 3],
        heap: &mut Vec<(f64, usize)>,
    ) {
        if hi - lo <= LEAF_SIZE {
            for &i in &self.order[lo..hi] {
                let d = (self.points[i as usize] - q).norm_squared();
                Self::push_candidate(heap, k, (d, i as usize));
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let i = self.order[mid] as usize;
        let axis = self.axes[mid] as usize;
        Self::push_candidate(heap, k, ((self.points[i] - q).norm_squared(), i));
        let diff = q[axis] - self.points[i][axis];
        let (first, second) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.knn_in(q, k, first.0, first.1, rd, off, heap);
        let old = off[axis];
        let far_rd = rd - old * old + diff * diff;
        if heap.len() < k || far_rd <= heap[heap.len() - 1].0 {
            off[axis] = diff;
            self.knn_in(q, k, second.0, second.1, far_rd, off, heap);
            off[axis] = old;
        }
    }
}

fn build(points: &[Point3], order: &mut [u32], axes: &mut [u8]) {
    let n = order.len();
    if n <= LEAF_SIZE {
        return;
    }
    let mut lo = Point3::repeat(f64::INFINITY);
    let mut hi = Point3::repeat(f64::NEG_INFINITY);
    for &i in order.iter() {
        let p = &points[i as usize];
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let axis = (hi - lo).imax();
    let mid = n / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis]
            .total_cmp(&points[b as usize][axis])
            .then(a.cmp(&b))
    });
    axes[mid] = axis as u8;
    let (left, right) = order.split_at_mut(mid);
    let (left_axes, right_axes) = axes.split_at_mut(mid);
    build(points, left, left_axes);
    build(points, &mut right[1..], &mut right_axes[1..]);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_knn(points: &[Point3], q: &Point3, k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| ((p - q).norm_squared(), i))
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        all.into_iter().take(k).map(|(d, i)| (i, d)).collect()
    }

    proptest! {
        #[test]
        fn knn_matches_brute_force(
            pts in prop::collection::vec(prop::array::uniform3(-20.0f64..20.0), 1..300),
            q in prop::array::uniform3(-25.0f64..25.0),
            k in 1usize..12,
        ) {
            let points: Vec<Point3> = pts.into_iter().map(Point3::from).collect();
            let q = Point3::from(q);
            let tree = KdTree::new(points.clone());
            prop_assert_eq!(tree.knn(&q, k), brute_knn(&points, &q, k));
            let nn = tree.nearest(&q, f64::INFINITY).unwrap();
            prop_assert_eq!(nn, brute_knn(&points, &q, 1)[0]);
        }
    }

    #[test]
    fn nearest_respects_gate() {
        let tree = KdTree::new(vec![Point3::new(0.0, 0.0, 0.0), Point3::new(3.0, 0.0, 0.0)]);
        assert_eq!(tree.nearest(&Point3::new(1.0, 0.0, 0.0), 0.5), None);
        assert_eq!(tree.nearest(&Point3::new(1.0, 0.0, 0.0), 1.5), Some((0, 1.0)));
    }

    #[test]
    fn empty_tree() {
        let tree = KdTree::new(vec![]);
        assert!(tree.nearest(&Point3::zeros(), 10.0).is_none());
        assert!(tree.knn(&Point3::zeros(), 3).is_empty());
    }

    #[test]
    fn duplicates_break_ties_by_index() {
        let p = Point3::new(1.0, 1.0, 1.0);
        let tree = KdTree::new(vec![p; 20]);
        let knn = tree.knn(&p, 3);
        assert_eq!(knn.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(tree.nearest(&p, 1.0), Some((0, 0.0)));
    }
}

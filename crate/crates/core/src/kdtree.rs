//! Static kd-tree over a flat coordinate buffer of arbitrary dimension.
//!
//! The tree stores only a permutation of point indices plus per-node
//! bounding boxes; coordinates stay with the owner and are passed to each
//! query. Built once, read-only afterwards.

use crate::linalg::dist_sq;

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
struct Node {
    start: usize,
    end: usize,
    /// Children node indices; `usize::MAX` for leaves.
    left: usize,
    right: usize,
}

#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    perm: Vec<usize>,
    nodes: Vec<Node>,
    /// `2 * dim` floats per node: lower corner then upper corner.
    boxes: Vec<f64>,
}

/// Whether a radius query uses the open or the closed ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ball {
    Open,
    Closed,
}

impl Ball {
    #[inline]
    fn contains(self, d2: f64, r2: f64) -> bool {
        match self {
            Ball::Open => d2 < r2,
            Ball::Closed => d2 <= r2,
        }
    }
}

impl KdTree {
    pub fn build(coords: &[f64], dim: usize) -> Self {
        assert!(dim > 0 && coords.len().is_multiple_of(dim));
        let n = coords.len() / dim;
        let mut tree = KdTree { dim, perm: (0..n).collect(), nodes: Vec::new(), boxes: Vec::new() };
        if n > 0 {
            tree.build_node(coords, 0, n);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    fn build_node(&mut self, coords: &[f64], start: usize, end: usize) -> usize {
        let dim = self.dim;
        let id = self.nodes.len();
        self.nodes.push(Node { start, end, left: usize::MAX, right: usize::MAX });
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for &i in &self.perm[start..end] {
            let p = &coords[i * dim..(i + 1) * dim];
            for d in 0..dim {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        self.boxes.extend_from_slice(&lo);
        self.boxes.extend_from_slice(&hi);
        if end - start <= LEAF_SIZE {
            return id;
        }
        let axis = (0..dim)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
            .unwrap_or(0);
        if hi[axis] - lo[axis] == 0.0 {
            // All points coincide; keep as a (large) leaf.
            return id;
        }
        let mid = start + (end - start) / 2;
        self.perm[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            coords[a * dim + axis].total_cmp(&coords[b * dim + axis]).then(a.cmp(&b))
        });
        let left = self.build_node(coords, start, mid);
        let right = self.build_node(coords, mid, end);
        self.nodes[id].left = left;
        self.nodes[id].right = right;
        id
    }

    #[inline]
    fn box_of(&self, node: usize) -> (&[f64], &[f64]) {
        let b = &self.boxes[node * 2 * self.dim..(node + 1) * 2 * self.dim];
        b.split_at(self.dim)
    }

    #[inline]
    fn min_dist_sq_to_box(&self, node: usize, x: &[f64]) -> f64 {
        let (lo, hi) = self.box_of(node);
        let mut s = 0.0;
        for d in 0..self.dim {
            let v = if x[d] < lo[d] {
                lo[d] - x[d]
            } else if x[d] > hi[d] {
                x[d] - hi[d]
            } else {
                0.0
            };
            s += v * v;
        }
        s
    }

    #[inline]
    fn max_dist_sq_to_box(&self, node: usize, x: &[f64]) -> f64 {
        let (lo, hi) = self.box_of(node);
        let mut s = 0.0;
        for d in 0..self.dim {
            let v = (x[d] - lo[d]).abs().max((hi[d] - x[d]).abs());
            s += v * v;
        }
        s
    }

    /// Calls `f(index, squared distance)` for every point in the ball, in
    /// unspecified order.
    pub fn for_each_within<F: FnMut(usize, f64)>(
        &self,
        coords: &[f64],
        x: &[f64],
        r: f64,
        ball: Ball,
        mut f: F,
    ) {
        if self.nodes.is_empty() || !(r >= 0.0) {
            return;
        }
        let r2 = r * r;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            let md = self.min_dist_sq_to_box(node, x);
            if md > r2 || (ball == Ball::Open && md >= r2) {
                continue;
            }
            let nd = &self.nodes[node];
            let fully_inside = ball.contains(self.max_dist_sq_to_box(node, x), r2);
            if nd.left == usize::MAX || fully_inside {
                for &i in &self.perm[nd.start..nd.end] {
                    let d2 = dist_sq(&coords[i * self.dim..(i + 1) * self.dim], x);
                    if fully_inside || ball.contains(d2, r2) {
                        f(i, d2);
                    }
                }
            } else {
                stack.push(nd.right);
                stack.push(nd.left);
            }
        }
    }

    /// Indices within the ball, ascending.
    pub fn within(&self, coords: &[f64], x: &[f64], r: f64, ball: Ball) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(coords, x, r, ball, |i, _| out.push(i));
        out.sort_unstable();
        out
    }

    /// The `k` nearest points as `(index, distance)`, ordered by distance
    /// then index.
    pub fn knn(&self, coords: &[f64], x: &[f64], k: usize) -> Vec<(usize, f64)> {
        self.knn_filtered(coords, x, k, |_| true)
    }

    /// k nearest among points accepted by `keep`.
    pub fn knn_filtered<P: Fn(usize) -> bool>(
        &self,
        coords: &[f64],
        x: &[f64],
        k: usize,
        keep: P,
    ) -> Vec<(usize, f64)> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        // Sorted by (d2, index); small k keeps insertion sort cheap.
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        let worst = |best: &Vec<(f64, usize)>| -> f64 {
            if best.len() < k {
                f64::INFINITY
            } else {
                best[best.len() - 1].0
            }
        };
        let mut stack: Vec<(usize, f64)> = vec![(0, self.min_dist_sq_to_box(0, x))];
        while let Some((node, md)) = stack.pop() {
            if md > worst(&best) {
                continue;
            }
            let nd = &self.nodes[node];
            if nd.left == usize::MAX {
                for &i in &self.perm[nd.start..nd.end] {
                    if !keep(i) {
                        continue;
                    }
                    let d2 = dist_sq(&coords[i * self.dim..(i + 1) * self.dim], x);
                    let key = (d2, i);
                    if best.len() < k || key < best[best.len() - 1] {
                        let pos = best.partition_point(|e| *e < key);
                        best.insert(pos, key);
                        if best.len() > k {
                            best.pop();
                        }
                    }
                }
            } else {
                let dl = self.min_dist_sq_to_box(nd.left, x);
                let dr = self.min_dist_sq_to_box(nd.right, x);
                // Visit the nearer child first (pushed last).
                if dl <= dr {
                    stack.push((nd.right, dr));
                    stack.push((nd.left, dl));
                } else {
                    stack.push((nd.left, dl));
                    stack.push((nd.right, dr));
                }
            }
        }
        best.into_iter().map(|(d2, i)| (i, d2.sqrt())).collect()
    }

    /// Maximizes `eval` over all points, returning `(index, value)` with the
    /// lowest index among maximizers. `bound(lo, hi)` must bound `eval` from
    /// above on the box `[lo, hi]`; boxes whose bound is strictly below the
    /// incumbent are skipped, so the answer equals a full scan.
    pub fn branch_and_bound_max<B, E>(&self, bound: B, mut eval: E) -> Option<(usize, f64)>
    where
        B: Fn(&[f64], &[f64]) -> f64,
        E: FnMut(usize) -> f64,
    {
        use std::cmp::Ordering;
        use std::collections::BinaryHeap;

        struct Item(f64, usize);
        impl PartialEq for Item {
            fn eq(&self, o: &Self) -> bool {
                self.cmp(o) == Ordering::Equal
            }
        }
        impl Eq for Item {}
        impl PartialOrd for Item {
            fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
                Some(self.cmp(o))
            }
        }
        impl Ord for Item {
            fn cmp(&self, o: &Self) -> Ordering {
                self.0.total_cmp(&o.0).then(o.1.cmp(&self.1))
            }
        }

        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<(usize, f64)> = None;
        let mut heap = BinaryHeap::new();
        let (lo, hi) = self.box_of(0);
        heap.push(Item(bound(lo, hi), 0));
        while let Some(Item(b, node)) = heap.pop() {
            if let Some((_, v)) = best {
                if b < v {
                    break;
                }
            }
            let nd = &self.nodes[node];
            if nd.left == usize::MAX {
                for &i in &self.perm[nd.start..nd.end] {
                    let v = eval(i);
                    best = match best {
                        Some((bi, bv)) if bv > v || (bv == v && bi < i) => Some((bi, bv)),
                        _ => Some((i, v)),
                    };
                }
            } else {
                for child in [nd.left, nd.right] {
                    let (lo, hi) = self.box_of(child);
                    let cb = bound(lo, hi);
                    if best.is_none_or(|(_, v)| cb >= v) {
                        heap.push(Item(cb, child));
                    }
                }
            }
        }
        best
    }

    /// Nearest point accepted by `keep`.
    pub fn nearest_filtered<P: Fn(usize) -> bool>(
        &self,
        coords: &[f64],
        x: &[f64],
        keep: P,
    ) -> Option<(usize, f64)> {
        self.knn_filtered(coords, x, 1, keep).into_iter().next()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, dim: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn radius_queries_match_linear_scan() {
        let dim = 3;
        let coords = random_cloud(2000, dim, 1);
        let tree = KdTree::build(&coords, dim);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.2..1.2)).collect();
            let r = rng.gen_range(0.0..0.8);
            for ball in [Ball::Open, Ball::Closed] {
                let got = tree.within(&coords, &x, r, ball);
                let want: Vec<usize> = (0..2000)
                    .filter(|&i| ball.contains(dist_sq(&coords[i * dim..(i + 1) * dim], &x), r * r))
                    .collect();
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn knn_matches_sorted_scan() {
        let dim = 2;
        let coords = random_cloud(500, dim, 3);
        let tree = KdTree::build(&coords, dim);
        let x = [0.1, -0.2];
        let got: Vec<usize> = tree.knn(&coords, &x, 16).into_iter().map(|(i, _)| i).collect();
        let mut all: Vec<(f64, usize)> =
            (0..500).map(|i| (dist_sq(&coords[i * 2..i * 2 + 2], &x), i)).collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let want: Vec<usize> = all[..16].iter().map(|e| e.1).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn branch_and_bound_matches_scan() {
        let dim = 3;
        let coords = random_cloud(3000, dim, 5);
        let tree = KdTree::build(&coords, dim);
        let x = [0.2, 0.1, -0.3];
        // Quantized values force ties.
        let f = |i: usize| (10.0 / (1e-3 + dist_sq(&coords[i * dim..(i + 1) * dim], &x))).floor();
        let bound = |lo: &[f64], hi: &[f64]| {
            let mut s = 0.0;
            for d in 0..dim {
                let v = if x[d] < lo[d] { lo[d] - x[d] } else if x[d] > hi[d] { x[d] - hi[d] } else { 0.0 };
                s += v * v;
            }
            10.0 / (1e-3 + s)
        };
        let got = tree.branch_and_bound_max(bound, f).unwrap();
        let mut want = (0, f(0));
        for i in 1..3000 {
            if f(i) > want.1 {
                want = (i, f(i));
            }
        }
        assert_eq!(got, want);
    }

    #[test]
    fn coincident_points_and_closed_boundary() {
        let coords = vec![0.5; 3 * 40];
        let tree = KdTree::build(&coords, 3);
        assert_eq!(tree.within(&coords, &[0.5, 0.5, 0.5], 0.0, Ball::Open).len(), 0);
        assert_eq!(tree.within(&coords, &[0.5, 0.5, 0.5], 0.0, Ball::Closed).len(), 40);
        let line = vec![0.0, 1.0, 2.0];
        let t = KdTree::build(&line, 1);
        assert_eq!(t.within(&line, &[0.0], 1.0, Ball::Open), vec![0]);
        assert_eq!(t.within(&line, &[0.0], 1.0, Ball::Closed), vec![0, 1]);
    }
}

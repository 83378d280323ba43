//! Exact nearest-neighbor queries via a kd-tree.
//!
//! The tree is built deterministically (median splits ordered by
//! coordinate, then by point index) and queries break distance ties by
//! returning the lowest point index, so results are identical to an
//! ascending brute-force scan with strict `<` updates — bit-for-bit.

/// Static kd-tree over a borrowed point set.
pub struct KdTree3<'a> {
    points: &'a [[f64; 3]],
    /// Point indices permuted into tree order.
    order: Vec<u32>,
    nodes: Vec<Node>,
    root: usize,
}

struct Node {
    axis: u8,
    /// Splitting coordinate (the median point's coordinate on `axis`).
    split: f64,
    /// Index into `order` of the median point stored at this node.
    point_slot: usize,
    left: usize,
    right: usize,
}

const NONE: usize = usize::MAX;

impl<'a> KdTree3<'a> {
    /// Builds a tree over a non-empty point set.
    ///
    /// # Panics
    /// Panics if `points` is empty or contains non-finite coordinates
    /// (callers validate clouds first).
    pub fn build(points: &'a [[f64; 3]]) -> Self {
        assert!(!points.is_empty(), "kd-tree needs at least one point");
        assert!(
            points.iter().all(|p| p.iter().all(|c| c.is_finite())),
            "kd-tree points must be finite"
        );
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let n = points.len();
        let root = build_recursive(points, &mut order, 0, n, 0, &mut nodes);
        KdTree3 {
            points,
            order,
            nodes,
            root,
        }
    }

    /// Returns `(index, squared_distance)` of the nearest point;
    /// distance ties resolve to the lowest index.
    pub fn nearest(&self, query: [f64; 3]) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(self.root, query, &mut best);
        best
    }

    fn search(&self, node: usize, q: [f64; 3], best: &mut (usize, f64)) {
        if node == NONE {
            return;
        }
        let n = &self.nodes[node];
        let idx = self.order[n.point_slot] as usize;
        let p = self.points[idx];
        let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
        if d2 < best.1 || (d2 == best.1 && idx < best.0) {
            *best = (idx, d2);
        }

        let delta = q[n.axis as usize] - n.split;
        let (near, far) = if delta < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.search(near, q, best);
        // Visit the far side unless it is strictly outside the best
        // ball; on exact ties it must still be searched so the
        // lowest-index rule can apply.
        if delta * delta <= best.1 {
            self.search(far, q, best);
        }
    }
}

fn build_recursive(
    points: &[[f64; 3]],
    order: &mut [u32],
    lo: usize,
    hi: usize,
    depth: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    if lo >= hi {
        return NONE;
    }
    let axis = (depth % 3) as u8;
    let mid = lo + (hi - lo) / 2;
    order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
        let ca = points[a as usize][axis as usize];
        let cb = points[b as usize][axis as usize];
        ca.partial_cmp(&cb)
            .expect("finite coordinates")
            .then(a.cmp(&b))
    });
    let split = points[order[mid] as usize][axis as usize];
    let slot = nodes.len();
    nodes.push(Node {
        axis,
        split,
        point_slot: mid,
        left: NONE,
        right: NONE,
    });
    let left = build_recursive(points, order, lo, mid, depth + 1, nodes);
    let right = build_recursive(points, order, mid + 1, hi, depth + 1, nodes);
    nodes[slot].left = left;
    nodes[slot].right = right;
    slot
}

/// Reference scan with the same tie rule: ascending index, strict `<`.
pub fn brute_force_nearest(points: &[[f64; 3]], q: [f64; 3]) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
        if d2 < best.1 {
            best = (i, d2);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::rng::Rng;

    #[test]
    fn matches_brute_force_bitwise_on_random_sets() {
        let mut rng = Rng::new(2);
        for trial in 0..30 {
            let n = 1 + rng.below(300);
            let points: Vec<[f64; 3]> = (0..n)
                .map(|_| {
                    [
                        rng.uniform(-1.0, 1.0),
                        rng.uniform(-1.0, 1.0),
                        rng.uniform(-1.0, 1.0),
                    ]
                })
                .collect();
            let tree = KdTree3::build(&points);
            for _ in 0..50 {
                let q = [
                    rng.uniform(-1.2, 1.2),
                    rng.uniform(-1.2, 1.2),
                    rng.uniform(-1.2, 1.2),
                ];
                let got = tree.nearest(q);
                let want = brute_force_nearest(&points, q);
                assert_eq!(got, want, "trial {trial} query {q:?}");
            }
        }
    }

    #[test]
    fn tie_break_returns_lowest_index() {
        // Two points equidistant from the origin query.
        let points = vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let tree = KdTree3::build(&points);
        let (idx, d2) = tree.nearest([0.0, 0.0, 0.0]);
        assert_eq!(idx, 0);
        assert_eq!(d2, 1.0);
        assert_eq!(tree.nearest([0.0, 0.0, 0.0]), brute_force_nearest(&points, [0.0, 0.0, 0.0]));
    }

    #[test]
    fn duplicate_points_resolve_to_first_occurrence() {
        let points = vec![[0.5, 0.5, 0.5]; 17];
        let tree = KdTree3::build(&points);
        assert_eq!(tree.nearest([0.4, 0.5, 0.5]).0, 0);
    }

    #[test]
    fn single_point_tree() {
        let points = vec![[3.0, -1.0, 2.0]];
        let tree = KdTree3::build(&points);
        let (idx, d2) = tree.nearest([3.0, -1.0, 1.0]);
        assert_eq!(idx, 0);
        assert!((d2 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn queries_on_grid_points_with_exact_ties() {
        // Lattice points make many exact distance ties; the tree must
        // agree with brute force everywhere.
        let mut points = Vec::new();
        for x in 0..4 {
            for y in 0..4 {
                for z in 0..4 {
                    points.push([x as f64, y as f64, z as f64]);
                }
            }
        }
        let tree = KdTree3::build(&points);
        let mut rng = Rng::new(6);
        for _ in 0..200 {
            // Queries at half-integer positions are equidistant to up to
            // 8 lattice points.
            let q = [
                rng.below(7) as f64 * 0.5,
                rng.below(7) as f64 * 0.5,
                rng.below(7) as f64 * 0.5,
            ];
            assert_eq!(tree.nearest(q), brute_force_nearest(&points, q));
        }
    }
}

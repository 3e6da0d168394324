//! Exact nearest-neighbor search over a static point set.

use crate::geometry::{dist2, Point3};

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

/// Balanced kd-tree with axis-median splits and leaves of at most 16 points.
///
/// Immutable after construction; queries borrow it shared.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Point3>,
    /// Original index of each point in `points` (tree order).
    order: Vec<usize>,
    nodes: Vec<Node>,
}

/// Result of a nearest-neighbor query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

impl Neighbor {
    pub fn distance(&self) -> f64 {
        self.dist2.sqrt()
    }
}

impl SpatialIndex {
    pub fn new(points: &[Point3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            build(points, &mut order, 0, points.len(), &mut nodes);
        }
        let points = order.iter().map(|&i| points[i]).collect();
        Self {
            points,
            order,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest point to `q`; ties go to the smallest original index.
    pub fn nearest(&self, q: Point3) -> Option<Neighbor> {
        self.nearest_where(q, |_| true)
    }

    /// Nearest point among those whose original index passes `keep`.
    pub fn nearest_where(&self, q: Point3, keep: impl Fn(usize) -> bool) -> Option<Neighbor> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = Neighbor {
            index: usize::MAX,
            dist2: f64::INFINITY,
        };
        self.search(0, q, &keep, &mut best);
        (best.index != usize::MAX).then_some(best)
    }

    fn search(&self, node: usize, q: Point3, keep: &impl Fn(usize) -> bool, best: &mut Neighbor) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start..end {
                    let idx = self.order[slot];
                    if !keep(idx) {
                        continue;
                    }
                    let d = dist2(q, self.points[slot]);
                    if d < best.dist2 || (d == best.dist2 && idx < best.index) {
                        *best = Neighbor { index: idx, dist2: d };
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
                self.search(near, q, keep, best);
                // `<=` so equal-distance ties on the far side are still visited.
                if diff * diff <= best.dist2 {
                    self.search(far, q, keep, best);
                }
            }
        }
    }
}

fn build(
    points: &[Point3],
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let slice = &mut order[start..end];
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in slice.iter() {
        for k in 0..3 {
            lo[k] = lo[k].min(points[i][k]);
            hi[k] = hi[k].max(points[i][k]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(0);
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    let value = points[slice[mid]][axis];

    nodes.push(Node::Leaf { start: 0, end: 0 });
    let left = build(points, order, start, start + mid, nodes);
    let right = build(points, order, start + mid, end, nodes);
    nodes[id] = Node::Split {
        axis,
        value,
        left,
        right,
    };
    id
}

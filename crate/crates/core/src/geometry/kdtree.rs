//! Exact k-nearest-neighbor search with a bucketed kd-tree.
//!
//! Neighbors are ordered by Euclidean distance, ties broken by ascending
//! point index. When more neighbors are requested than there are points the
//! sorted list is repeated cyclically so neighborhoods stay rectangular.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_BUCKET_SIZE: usize = 16;

#[derive(Clone, Debug)]
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

/// Balanced kd-tree over a fixed set of positions. Immutable once built.
#[derive(Clone, Debug)]
pub struct KdTree {
    dim: usize,
    coords: Vec<f64>,
    order: Vec<usize>,
    nodes: Vec<Node>,
    root: usize,
}

/// `k` neighbor indices for each of `|Q|` query points, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborIndices {
    k: usize,
    indices: Vec<usize>,
}

impl NeighborIndices {
    pub fn new(k: usize, indices: Vec<usize>) -> Result<Self> {
        if k == 0 || !indices.len().is_multiple_of(k) {
            return Err(Error::Dimension(format!(
                "{} neighbor indices do not form rows of {k}",
                indices.len()
            )));
        }
        Ok(Self { k, indices })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn row(&self, q: usize) -> &[usize] {
        &self.indices[q * self.k..(q + 1) * self.k]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    pub fn max_index(&self) -> Option<usize> {
        self.indices.iter().copied().max()
    }
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KdTree {
    pub fn build(positions: &Tensor) -> Result<Self> {
        Self::with_bucket_size(positions, DEFAULT_BUCKET_SIZE)
    }

    pub fn with_bucket_size(positions: &Tensor, bucket: usize) -> Result<Self> {
        let n = positions.rows();
        if n == 0 || positions.is_empty() {
            return Err(Error::EmptyInput("kd-tree positions"));
        }
        let mut tree = Self {
            dim: positions.cols(),
            coords: positions.data().to_vec(),
            order: (0..n).collect(),
            nodes: Vec::new(),
            root: 0,
        };
        tree.root = tree.build_node(0, n, bucket.max(1));
        Ok(tree)
    }

    fn coord(&self, index: usize, axis: usize) -> f64 {
        self.coords[index * self.dim + axis]
    }

    /// Coordinates of input point `index`.
    pub fn point(&self, index: usize) -> &[f64] {
        &self.coords[index * self.dim..(index + 1) * self.dim]
    }

    fn build_node(&mut self, start: usize, end: usize, bucket: usize) -> usize {
        let len = end - start;
        let mut best_axis = 0;
        let mut best_spread = 0.0;
        if len > bucket {
            for axis in 0..self.dim {
                let (lo, hi) = self.order[start..end]
                    .iter()
                    .map(|&i| self.coord(i, axis))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                        (lo.min(v), hi.max(v))
                    });
                if hi - lo > best_spread {
                    best_spread = hi - lo;
                    best_axis = axis;
                }
            }
        }
        // Small buckets and sets of coincident points become leaves.
        if len <= bucket || best_spread == 0.0 {
            self.nodes.push(Node::Leaf { start, end });
            return self.nodes.len() - 1;
        }
        let mid = len / 2;
        let (dim, coords) = (self.dim, &self.coords);
        self.order[start..end].select_nth_unstable_by(mid, |&a, &b| {
            coords[a * dim + best_axis]
                .total_cmp(&coords[b * dim + best_axis])
                .then(a.cmp(&b))
        });
        let value = self.coord(self.order[start + mid], best_axis);
        let left = self.build_node(start, start + mid, bucket);
        let right = self.build_node(start + mid, end, bucket);
        self.nodes.push(Node::Split {
            axis: best_axis,
            value,
            left,
            right,
        });
        self.nodes.len() - 1
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

    /// Number of split levels above the deepest leaf.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], n: usize) -> usize {
            match nodes[n] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, self.root)
    }

    /// Leaf membership of every input index, for structural checks.
    pub fn leaf_indices(&self) -> Vec<Vec<usize>> {
        self.nodes
            .iter()
            .filter_map(|n| match *n {
                Node::Leaf { start, end } => Some(self.order[start..end].to_vec()),
                Node::Split { .. } => None,
            })
            .collect()
    }

    /// The `k` nearest point indices to `query` (see module docs for the
    /// ordering and padding rules).
    pub fn knn(&self, query: &[f64], k: usize) -> Vec<usize> {
        self.knn_with_distances(query, k)
            .into_iter()
            .map(|(i, _)| i)
            .collect()
    }

    /// Like [`KdTree::knn`] with squared distances.
    pub fn knn_with_distances(&self, query: &[f64], k: usize) -> Vec<(usize, f64)> {
        assert_eq!(query.len(), self.dim, "query dimension");
        if k == 0 {
            return Vec::new();
        }
        let wanted = k.min(self.len());
        let mut heap = BinaryHeap::with_capacity(wanted + 1);
        self.search(self.root, query, wanted, &mut heap);
        let sorted: Vec<(usize, f64)> = heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| (c.index, c.dist2))
            .collect();
        sorted.iter().copied().cycle().take(k).collect()
    }

    fn search(&self, node: usize, query: &[f64], k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &index in &self.order[start..end] {
                    let c = Candidate {
                        dist2: squared_distance(query, self.point(index)),
                        index,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("non-empty heap") {
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
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, k, heap);
                // Equal distances may still win on index, so only strictly
                // farther subtrees are pruned.
                let bound = heap.peek().map_or(f64::INFINITY, |c| c.dist2);
                if heap.len() < k || diff * diff <= bound {
                    self.search(far, query, k, heap);
                }
            }
        }
    }

    /// k-NN for every row of `queries`.
    pub fn knn_batch(&self, queries: &Tensor, k: usize) -> Result<NeighborIndices> {
        if queries.cols() != self.dim {
            return Err(Error::Dimension(format!(
                "queries of dimension {} against a {}-d tree",
                queries.cols(),
                self.dim
            )));
        }
        if k == 0 {
            return Err(Error::Parameter("neighborhood size must be >= 1".into()));
        }
        let mut indices = Vec::with_capacity(queries.rows() * k);
        for q in 0..queries.rows() {
            indices.extend(self.knn(queries.row(q), k));
        }
        NeighborIndices::new(k, indices)
    }
}

//! Output-point selection and neighborhood normalisation.

use rand::Rng as _;

use super::kdtree::KdTree;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Rng;

/// Score added to a point each time it is chosen as an output point.
pub const SELECTED_SCORE: u64 = 100;

/// Picks `m` output points from the cloud indexed by `tree`.
///
/// Every point carries an integer score. Each iteration chooses uniformly
/// (via `rng`) among the not-yet-selected points of minimal score, scanning
/// candidates in ascending index order. The chosen point gains
/// [`SELECTED_SCORE`] and each of its `k` nearest neighbors (itself
/// included) gains 1. Once every point has been selected the selected flags
/// are cleared and a new round starts, so an index is never chosen twice
/// before all others have been chosen once.
pub fn sample_output_points(tree: &KdTree, m: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    let n = tree.len();
    let mut scores = vec![0u64; n];
    let mut selected = vec![false; n];
    let mut remaining = n;
    let mut picks = Vec::with_capacity(m);
    let mut candidates = Vec::new();
    for _ in 0..m {
        if remaining == 0 {
            selected.iter_mut().for_each(|s| *s = false);
            remaining = n;
        }
        let min = (0..n)
            .filter(|&i| !selected[i])
            .map(|i| scores[i])
            .min()
            .expect("an unselected point exists");
        candidates.clear();
        candidates.extend((0..n).filter(|&i| !selected[i] && scores[i] == min));
        let q = candidates[rng.gen_range(0..candidates.len())];
        picks.push(q);
        selected[q] = true;
        remaining -= 1;
        scores[q] += SELECTED_SCORE;
        for nb in tree.knn(tree.point(q), k) {
            scores[nb] += 1;
        }
    }
    picks
}

/// Convenience wrapper building the tree first.
pub fn sample_output_points_from(
    positions: &Tensor,
    m: usize,
    k: usize,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(Error::Parameter("output point count must be >= 1".into()));
    }
    let tree = KdTree::build(positions)?;
    Ok(sample_output_points(&tree, m, k, rng))
}

/// Centers `points` (flattened rows of length `center.len()`) on `center`
/// and scales them so the farthest lies on the unit sphere. A degenerate
/// neighborhood (all points on the center) maps to zeros.
pub fn normalize_to_unit_ball(points: &[f64], center: &[f64]) -> Vec<f64> {
    let d = center.len();
    let mut out: Vec<f64> = points
        .chunks_exact(d)
        .flat_map(|p| p.iter().zip(center).map(|(a, c)| a - c))
        .collect();
    let max_norm = out
        .chunks_exact(d)
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    if max_norm > 0.0 {
        out.iter_mut().for_each(|v| *v /= max_norm);
    } else {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
    out
}

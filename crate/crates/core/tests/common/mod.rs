#![allow(dead_code)]

use convpoint::{Rng, Tensor};
use rand::Rng as _;

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// `|a − b| ≤ tol · max(1, |a|)` element-wise.
pub fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * x.abs().max(1.0))
}

/// Reference k-NN: full sort by (squared distance, index), cyclic padding
/// when `k` exceeds the cloud size.
pub fn brute_knn(points: &Tensor, query: &[f64], k: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = (0..points.rows())
        .map(|i| {
            let d = points.row(i).iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            (d, i)
        })
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.iter().map(|&(_, i)| i).cycle().take(k).collect()
}

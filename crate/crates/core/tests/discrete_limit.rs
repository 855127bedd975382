//! With an indicator weighting function and kernel elements placed on the
//! input grid, the operator reduces to a discrete convolution.

mod common;

use common::uniform;
use convpoint::conv::{discrete_conv_oracle, ConvPoint, IndicatorWeighting};
use convpoint::geometry::NeighborIndices;
use convpoint::{Rng, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};

/// Points of the `step`-spaced grid inside the closed unit ball. The grid
/// reaches norm exactly 1 along the axes, so normalising about the origin
/// leaves it unchanged.
fn ball_grid(dim: usize, step: f64) -> Vec<Vec<f64>> {
    let ticks: Vec<f64> = (-4..=4).map(|i| i as f64 * step).filter(|v| v.abs() <= 1.0).collect();
    let mut pts: Vec<Vec<f64>> = vec![vec![]];
    for _ in 0..dim {
        pts = pts
            .into_iter()
            .flat_map(|p| ticks.iter().map(move |t| [p.clone(), vec![*t]].concat()))
            .collect();
    }
    pts.retain(|p| p.iter().map(|v| v * v).sum::<f64>() <= 1.0);
    pts
}

fn check(dim: usize, seed: u64) {
    let mut rng = Rng::seed_from_u64(seed);
    let grid = ball_grid(dim, 0.5);
    let inputs = Tensor::from_rows(&grid).unwrap();
    let x = uniform(&[grid.len(), 1], -1.0, 1.0, &mut rng);

    // Kernel: some grid points plus some off-grid ones that never match.
    let mut kernel: Vec<Vec<f64>> = grid.choose_multiple(&mut rng, 6).cloned().collect();
    kernel.push(vec![0.3; dim]);
    kernel.push(vec![-0.7; dim]);
    let kk = kernel.len();
    let kernel_positions = Tensor::from_rows(&kernel).unwrap();
    let w: Vec<f64> = (0..kk).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let bias = rng.gen_range(-1.0..1.0);

    let mut layer = ConvPoint::new(1, 1, kk, dim, &mut rng).unwrap();
    layer.kernel.positions.value = kernel_positions.clone();
    // The operator averages over the neighborhood; the discrete sum does not.
    let k = grid.len() as f64;
    layer.kernel.weights.value = Tensor::new(&[kk, 1, 1], w.iter().map(|v| v * k).collect()).unwrap();
    layer.kernel.bias.value = Tensor::new(&[1], vec![bias]).unwrap();

    let center = Tensor::zeros(&[1, dim]);
    let neighbors = NeighborIndices::new(grid.len(), (0..grid.len()).collect()).unwrap();
    let indicator = IndicatorWeighting { kernel_size: kk, dim };
    let y = layer.forward_with(&indicator, &inputs, &x, &center, &neighbors).unwrap();
    let expected = discrete_conv_oracle(&inputs, x.data(), &kernel_positions, &w, bias);
    assert!((y.data()[0] - expected).abs() <= 1e-12, "{} vs {expected}", y.data()[0]);
}

#[test]
fn planar_grid() {
    for seed in 0..10 {
        check(2, seed);
    }
}

#[test]
fn volumetric_grid() {
    for seed in 0..10 {
        check(3, seed);
    }
}

#[test]
fn off_grid_kernel_sees_nothing() {
    let dim = 2;
    let grid = ball_grid(dim, 0.5);
    let inputs = Tensor::from_rows(&grid).unwrap();
    let mut layer = ConvPoint::new(1, 1, 1, dim, &mut Rng::seed_from_u64(0)).unwrap();
    layer.kernel.positions.value = Tensor::new(&[1, 2], vec![0.25, 0.25]).unwrap();
    let neighbors = NeighborIndices::new(grid.len(), (0..grid.len()).collect()).unwrap();
    let y = layer
        .forward_with(
            &IndicatorWeighting { kernel_size: 1, dim },
            &inputs,
            &Tensor::filled(&[grid.len(), 1], 1.0),
            &Tensor::zeros(&[1, dim]),
            &neighbors,
        )
        .unwrap();
    assert_eq!(y.data(), &[0.0]);
}

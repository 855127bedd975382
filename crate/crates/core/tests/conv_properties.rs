//! Geometric properties of the point convolution.

mod common;

use common::{close, uniform};
use convpoint::conv::ConvPoint;
use convpoint::geometry::normalize_to_unit_ball;
use convpoint::gradcheck::finite_diff_check;
use convpoint::nn::relu;
use convpoint::{Parameterized, Rng, Tensor};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};

struct Instance {
    layer: ConvPoint,
    positions: Tensor,
    features: Tensor,
    center: Vec<f64>,
}

fn instance(seed: u64) -> Instance {
    let mut rng = Rng::seed_from_u64(seed);
    let d = rng.gen_range(2..=3);
    let (k, kk) = (rng.gen_range(2..=16), rng.gen_range(2..=16));
    let (n, c) = (rng.gen_range(1..=4), rng.gen_range(1..=8));
    let mut layer = ConvPoint::new(n, c, kk, d, &mut rng).unwrap();
    layer.kernel.bias.value = uniform(&[c], -0.5, 0.5, &mut rng);
    // Nonzero MLP biases keep pre-activations off the ReLU kink at exactly 0.
    for l in &mut layer.weighting.layers {
        let len = l.bias.value.len();
        l.bias.value = uniform(&[len], -0.1, 0.1, &mut rng);
    }
    Instance {
        layer,
        positions: uniform(&[k, d], -2.0, 2.0, &mut rng),
        features: uniform(&[k, n], -1.0, 1.0, &mut rng),
        center: (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    }
}

/// Smallest |pre-activation| of the weighting network's hidden layers over
/// the neighborhood. Central differences straddle a ReLU kink when this is
/// comparable to the probe step.
fn kink_margin(i: &Instance) -> f64 {
    let (k, d, kk) = (i.positions.rows(), i.center.len(), i.layer.kernel_size());
    let p = normalize_to_unit_ball(i.positions.data(), &i.center);
    let c = i.layer.kernel.positions.value.data();
    let mut rel = Vec::with_capacity(k * kk * d);
    for j in 0..k {
        for e in 0..kk {
            rel.extend((0..d).map(|a| p[j * d + a] - c[e * d + a]));
        }
    }
    let mut h = Tensor::new(&[k, kk * d], rel).unwrap();
    let mut margin = f64::INFINITY;
    let hidden = i.layer.weighting.layers.len() - 1;
    for layer in &i.layer.weighting.layers[..hidden] {
        let z = layer.forward(&h).unwrap();
        margin = z.data().iter().fold(margin, |m, v| m.min(v.abs()));
        h = relu(&z);
    }
    margin
}

fn output(i: &Instance, positions: &Tensor, features: &Tensor, center: &[f64]) -> Vec<f64> {
    i.layer.conv_forward(positions, features, center).unwrap().0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn permutation(seed in any::<u64>()) {
        let i = instance(seed);
        let mut order: Vec<usize> = (0..i.positions.rows()).collect();
        order.shuffle(&mut Rng::seed_from_u64(seed ^ 1));
        let y = output(&i, &i.positions, &i.features, &i.center);
        let y2 = output(&i, &i.positions.gather_rows(&order), &i.features.gather_rows(&order), &i.center);
        prop_assert!(close(&y, &y2, 1e-9), "{y:?} vs {y2:?}");
    }

    #[test]
    fn translation(seed in any::<u64>(), shift in prop::collection::vec(-10.0f64..10.0, 3)) {
        let i = instance(seed);
        let d = i.center.len();
        let mut moved = i.positions.clone();
        for r in 0..moved.rows() {
            moved.row_mut(r).iter_mut().zip(&shift).for_each(|(p, t)| *p += t);
        }
        let center: Vec<f64> = i.center.iter().zip(&shift[..d]).map(|(c, t)| c + t).collect();
        let y = output(&i, &i.positions, &i.features, &i.center);
        prop_assert!(close(&y, &output(&i, &moved, &i.features, &center), 1e-12));
    }

    #[test]
    fn scale(seed in any::<u64>(), s in 0.1f64..10.0) {
        let i = instance(seed);
        let mut scaled = i.positions.clone();
        for r in 0..scaled.rows() {
            scaled.row_mut(r).iter_mut().zip(&i.center).for_each(|(p, c)| *p = c + s * (*p - c));
        }
        let y = output(&i, &i.positions, &i.features, &i.center);
        prop_assert!(close(&y, &output(&i, &scaled, &i.features, &i.center), 1e-12));
    }

    #[test]
    fn duplication(seed in any::<u64>()) {
        let i = instance(seed);
        let k = i.positions.rows();
        let twice: Vec<usize> = (0..k).chain(0..k).collect();
        let y = output(&i, &i.positions, &i.features, &i.center);
        let y2 = output(&i, &i.positions.gather_rows(&twice), &i.features.gather_rows(&twice), &i.center);
        prop_assert!(close(&y, &y2, 1e-12));
    }

    #[test]
    fn gradients_match_finite_differences(seed in any::<u64>()) {
        let mut i = instance(seed);
        prop_assume!(kink_margin(&i) > 1e-3);
        let mut rng = Rng::seed_from_u64(seed ^ 2);
        let probe = uniform(&[1, i.layer.out_channels()], -1.0, 1.0, &mut rng);
        let (positions, features, center) = (i.positions.clone(), i.features.clone(), i.center.clone());
        let dot = |y: &[f64]| y.iter().zip(probe.data()).map(|(a, b)| a * b).sum::<f64>();

        let (_, cache) = i.layer.conv_forward(&positions, &features, &center).unwrap();
        let mut grads = i.layer.gradient_buffers();
        let dx = i.layer.backward(&cache, &features, &probe, &mut grads).unwrap();
        let report = finite_diff_check(&mut i.layer, &grads, 1e-5, None, |l: &ConvPoint| {
            Ok(dot(&l.conv_forward(&positions, &features, &center)?.0))
        })
        .unwrap();
        prop_assert!(report.max() <= 1e-4, "{report:?}");

        for e in 0..features.len() {
            let mut f = features.clone();
            f.data_mut()[e] += 1e-5;
            let plus = dot(&i.layer.conv_forward(&positions, &f, &center).unwrap().0);
            f.data_mut()[e] -= 2e-5;
            let minus = dot(&i.layer.conv_forward(&positions, &f, &center).unwrap().0);
            let fd = (plus - minus) / 2e-5;
            prop_assert!((dx.data()[e] - fd).abs() <= 1e-4 * fd.abs().max(1.0));
        }
    }
}

//! Data-dependent initialisation.
//!
//! Stage by stage, in forward order, the convolution output is measured on
//! a few training clouds and each channel is shifted and scaled (through
//! its weights and bias) to zero mean and unit variance. Later stages are
//! measured after earlier ones have been adjusted.

use super::dataset::Dataset;
use super::train::prepare_input;
use crate::derive_rng;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::networks::Model;

/// Generator salt keeping calibration draws apart from training draws.
const CALIBRATION_SALT: u64 = 0x5CA1_AB1E;

/// Channels whose spread is below this are left untouched.
const MIN_STD: f64 = 1e-8;

/// Calibrates every trainable stage of `model` on the first `samples`
/// clouds of `data`.
pub fn calibrate<M: Model>(
    model: &mut M,
    data: &Dataset,
    samples: usize,
    input_points: Option<usize>,
    seed: u64,
    execution: Execution,
) -> Result<()> {
    let n = samples.min(data.len());
    if n == 0 {
        return Err(Error::EmptyInput("calibration needs at least one sample"));
    }
    let stages = model.stages_mut().len();
    for l in 0..stages {
        if !model.stages_mut()[l].conv.kernel.weights.trainable {
            continue;
        }
        let model_ref = &*model;
        let partial = map_indexed(execution, n, |i| -> Result<(Vec<f64>, Vec<f64>, usize)> {
            let mut rng = derive_rng(seed ^ CALIBRATION_SALT, i as u64);
            let (cloud, _) = prepare_input(&data.samples[i], input_points, &mut rng)?;
            let (_, trace) = model_ref.forward(&cloud, &mut rng, false)?;
            let y = model_ref.stage_outputs(&trace)[l];
            let c = y.cols();
            let (mut sum, mut sq) = (vec![0.0; c], vec![0.0; c]);
            for r in 0..y.rows() {
                for (t, v) in y.row(r).iter().enumerate() {
                    sum[t] += v;
                    sq[t] += v * v;
                }
            }
            Ok((sum, sq, y.rows()))
        });
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut rows = 0;
        for p in partial {
            let (s, q, r) = p?;
            if sum.is_empty() {
                sum = vec![0.0; s.len()];
                sq = vec![0.0; s.len()];
            }
            sum.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
            sq.iter_mut().zip(&q).for_each(|(a, b)| *a += b);
            rows += r;
        }
        let (mut shift, mut scale) = (Vec::with_capacity(sum.len()), Vec::with_capacity(sum.len()));
        for (s, q) in sum.iter().zip(&sq) {
            let mean = s / rows as f64;
            let std = (q / rows as f64 - mean * mean).max(0.0).sqrt();
            if std > MIN_STD {
                shift.push(mean);
                scale.push(std);
            } else {
                shift.push(0.0);
                scale.push(1.0);
            }
        }
        model.stages_mut()[l].rescale(&shift, &scale)?;
    }
    Ok(())
}

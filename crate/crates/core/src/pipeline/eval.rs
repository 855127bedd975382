use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::metrics::{ConfusionMatrix, Metrics};
use super::train::prepare_input;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::geometry::PointCloud;
use crate::networks::Model;
use crate::nn::argmax_rows;
use crate::tensor::Tensor;
use crate::{derive_rng, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub samplings: usize,
    #[serde(default)]
    pub input_points: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub execution: Execution,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samplings: 1,
            input_points: None,
            seed: 0,
            execution: Execution::Sequential,
        }
    }
}

/// Mean logits of `runs` evaluation-mode forward passes on the same input,
/// each with a fresh spatial sampling drawn from `rng`.
pub fn aggregate_spatial_samplings<M: Model + ?Sized>(
    model: &M,
    cloud: &PointCloud,
    runs: usize,
    rng: &mut Rng,
) -> Result<Tensor> {
    if runs == 0 {
        return Err(Error::Parameter("at least one sampling is required".into()));
    }
    let mut sum = model.forward(cloud, rng, false)?.0;
    for _ in 1..runs {
        sum.add_assign(&model.forward(cloud, rng, false)?.0)?;
    }
    sum.scale(1.0 / runs as f64);
    Ok(sum)
}

/// Metrics for several sampling counts from a single pass.
///
/// For each sample the network runs `max(counts)` times; the metrics for
/// count `c` use the mean of the first `c` runs, which is exactly what
/// [`aggregate_spatial_samplings`] with `c` runs and the same generator
/// returns.
pub fn evaluate_samplings<M: Model + ?Sized>(
    model: &M,
    data: &Dataset,
    counts: &[usize],
    config: &EvalConfig,
) -> Result<Vec<Metrics>> {
    let max = counts.iter().copied().max().unwrap_or(0);
    if counts.contains(&0) || max == 0 {
        return Err(Error::Parameter("sampling counts must be positive".into()));
    }
    let per_sample = map_indexed(config.execution, data.len(), |i| -> Result<(Vec<usize>, Vec<Vec<usize>>)> {
        let sample = &data.samples[i];
        let mut rng = derive_rng(config.seed, i as u64);
        let (cloud, map) = prepare_input(sample, config.input_points, &mut rng)?;
        let targets = sample.targets(&map);
        let mut sum: Option<Tensor> = None;
        let mut predictions = vec![Vec::new(); counts.len()];
        for run in 1..=max {
            let logits = model.forward(&cloud, &mut rng, false)?.0;
            match &mut sum {
                None => sum = Some(logits),
                Some(s) => s.add_assign(&logits)?,
            }
            for (slot, _) in counts.iter().enumerate().filter(|(_, &c)| c == run) {
                let mut mean = sum.clone().expect("at least one run");
                mean.scale(1.0 / run as f64);
                predictions[slot] = argmax_rows(&mean);
            }
        }
        Ok((targets, predictions))
    });
    let mut matrices = vec![ConfusionMatrix::new(data.num_classes); counts.len()];
    for r in per_sample {
        let (targets, predictions) = r?;
        for (m, p) in matrices.iter_mut().zip(&predictions) {
            m.extend(&targets, p);
        }
    }
    Ok(matrices.iter().map(ConfusionMatrix::metrics).collect())
}

pub fn evaluate<M: Model + ?Sized>(model: &M, data: &Dataset, config: &EvalConfig) -> Result<Metrics> {
    Ok(evaluate_samplings(model, data, &[config.samplings], config)?.remove(0))
}

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Sample};
use super::eval::{evaluate, EvalConfig};
use super::metrics::Metrics;
use super::select::fixed_size_select;
use crate::error::{Error, Result};
use super::calibrate::calibrate;
use crate::exec::{map_indexed, Execution};
use crate::geometry::PointCloud;
use crate::networks::Model;
use crate::nn::{argmax_rows, softmax_cross_entropy};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;
use crate::{derive_rng, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: AdamConfig,
    /// Learning-rate multiplier applied after every epoch.
    #[serde(default = "one")]
    pub lr_decay: f64,
    /// Fixed input size; clouds are resampled to it every time they are
    /// used. `None` feeds clouds unchanged.
    #[serde(default)]
    pub input_points: Option<usize>,
    /// Clouds used to calibrate the stages before the first epoch
    /// (see [`calibrate`](super::calibrate)); 0 disables it.
    #[serde(default)]
    pub calibration_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub execution: Execution,
}

fn one() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            batch_size: 16,
            optimizer: AdamConfig::default(),
            lr_decay: 1.0,
            input_points: None,
            calibration_samples: 0,
            seed: 0,
            execution: Execution::Sequential,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.input_points == Some(0) {
            return Err(Error::Parameter("epochs, batch size and input points must be positive".into()));
        }
        if !(self.optimizer.lr > 0.0) || !(self.lr_decay > 0.0) {
            return Err(Error::Parameter("learning rate and decay must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub loss: f64,
    /// Accuracy of the training-mode predictions seen during the epoch.
    pub train_accuracy: f64,
    /// Metrics on the evaluation set, when one is given.
    pub eval: Option<Metrics>,
}

impl EpochLog {
    /// Evaluation OA when available, training accuracy otherwise.
    pub fn accuracy(&self) -> f64 {
        self.eval.as_ref().map_or(self.train_accuracy, |m| m.overall_accuracy)
    }
}

pub(crate) fn prepare_input(
    sample: &Sample,
    input_points: Option<usize>,
    rng: &mut Rng,
) -> Result<(PointCloud, Vec<usize>)> {
    match input_points {
        Some(s) => fixed_size_select(&sample.cloud, s, rng),
        None => Ok((sample.cloud.clone(), (0..sample.cloud.len()).collect())),
    }
}

struct StepResult {
    loss: f64,
    correct: usize,
    count: usize,
    grads: Vec<Tensor>,
}

fn sample_step<M: Model>(model: &M, sample: &Sample, input_points: Option<usize>, mut rng: Rng) -> Result<StepResult> {
    let (cloud, map) = prepare_input(sample, input_points, &mut rng)?;
    let targets = sample.targets(&map);
    let (logits, trace) = model.forward(&cloud, &mut rng, true)?;
    let (loss, dlogits) = softmax_cross_entropy(&logits, &targets)?;
    let correct = argmax_rows(&logits)
        .iter()
        .zip(&targets)
        .filter(|(p, t)| p == t)
        .count();
    let mut grads = model.gradient_buffers();
    model.backward(&trace, &dlogits, &mut grads)?;
    Ok(StepResult {
        loss,
        correct,
        count: targets.len(),
        grads,
    })
}

/// Minibatch training with Adam; see [`train_with`].
pub fn train<M: Model>(model: &mut M, data: &Dataset, eval: Option<&Dataset>, config: &TrainConfig) -> Result<Vec<EpochLog>> {
    train_with(model, data, eval, config, |_| {})
}

/// Minibatch training with Adam, calling `on_epoch` after every epoch.
///
/// Each sample's forward/backward pass draws from its own generator derived
/// from the seed and the sample's position in the run, and per-sample
/// gradients are summed in batch order. Results are therefore identical in
/// sequential and parallel execution.
pub fn train_with<M, F>(
    model: &mut M,
    data: &Dataset,
    eval: Option<&Dataset>,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<Vec<EpochLog>>
where
    M: Model,
    F: FnMut(&EpochLog),
{
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    if config.calibration_samples > 0 {
        calibrate(
            model,
            data,
            config.calibration_samples,
            config.input_points,
            config.seed,
            config.execution,
        )?;
    }
    let mut adam = Adam::new(config.optimizer);
    let mut logs = Vec::with_capacity(config.epochs);
    let n = data.len();
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut derive_rng(config.seed, u64::MAX - epoch as u64));
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let first = (epoch * n + b * config.batch_size) as u64;
            let shared: &M = model;
            let results = map_indexed(config.execution, batch.len(), |i| {
                sample_step(shared, &data.samples[batch[i]], config.input_points, derive_rng(config.seed, first + i as u64))
            });
            let mut total: Option<Vec<Tensor>> = None;
            let mut batch_loss = 0.0;
            for r in results {
                let r = r?;
                batch_loss += r.loss;
                correct += r.correct;
                seen += r.count;
                match &mut total {
                    None => total = Some(r.grads),
                    Some(t) => {
                        for (a, g) in t.iter_mut().zip(&r.grads) {
                            a.add_assign(g)?;
                        }
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged(format!("epoch {}, batch {b}: loss {batch_loss}", epoch + 1)));
            }
            loss_sum += batch_loss;
            let mut grads = total.expect("non-empty batch");
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| g.scale(scale));
            model.zero_grad();
            model.accumulate_gradients(&grads)?;
            adam.step(&mut model.parameters_mut());
        }
        let eval_metrics = match eval {
            Some(set) => Some(evaluate(
                &*model,
                set,
                &EvalConfig {
                    samplings: 1,
                    input_points: config.input_points,
                    seed: config.seed,
                    execution: config.execution,
                },
            )?),
            None => None,
        };
        let log = EpochLog {
            epoch: epoch + 1,
            loss: loss_sum / n as f64,
            train_accuracy: correct as f64 / seen.max(1) as f64,
            eval: eval_metrics,
        };
        on_epoch(&log);
        logs.push(log);
        adam.config.lr *= config.lr_decay;
    }
    Ok(logs)
}

use serde::{Deserialize, Serialize};

use super::stage::{ranges, Stage, StageTrace};
use super::{check_input, LayerSpec, Model};
use crate::conv::ConvPoint;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::nn::{Affine, Dropout, DropoutMask};
use crate::tensor::{Parameter, Parameterized, Tensor};
use crate::Rng;

/// Kernel size of every classification layer.
pub const CLASSIFICATION_KERNEL_SIZE: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassificationConfig {
    pub num_classes: usize,
    pub input_features: usize,
    pub dim: usize,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub dropout: f64,
}

impl ClassificationConfig {
    /// Default five-layer ladder ending on a single point.
    pub fn standard(num_classes: usize, input_features: usize, dim: usize) -> Self {
        let k = CLASSIFICATION_KERNEL_SIZE;
        Self {
            num_classes,
            input_features,
            dim,
            layers: vec![
                LayerSpec::new(64, Some(512), k, 32),
                LayerSpec::new(128, Some(128), k, 32),
                LayerSpec::new(256, Some(32), k, 16),
                LayerSpec::new(256, Some(8), k, 16),
                LayerSpec::new(512, Some(1), k, 8),
            ],
            dropout: 0.0,
        }
    }

    /// Reduced ladder sized for single-core MNIST training.
    pub fn desk(num_classes: usize, input_features: usize, dim: usize) -> Self {
        let k = CLASSIFICATION_KERNEL_SIZE;
        Self {
            num_classes,
            input_features,
            dim,
            layers: vec![
                LayerSpec::new(32, Some(128), k, 16),
                LayerSpec::new(64, Some(32), k, 16),
                LayerSpec::new(96, Some(8), k, 16),
                LayerSpec::new(128, Some(4), k, 8),
                LayerSpec::new(128, Some(1), k, 4),
            ],
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.input_features == 0 || self.dim == 0 {
            return Err(Error::Parameter("classification dimensions must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Parameter("classification net needs at least one layer".into()));
        }
        for l in &self.layers {
            l.validate()?;
        }
        if self.layers.last().and_then(|l| l.points) != Some(1) {
            return Err(Error::Parameter("last classification layer must output a single point".into()));
        }
        Dropout::new(self.dropout)?;
        Ok(())
    }
}

/// Convolutions down to one point, then a fully connected layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationNet {
    config: ClassificationConfig,
    stages: Vec<Stage>,
    fc: Affine,
    dropout: Dropout,
}

pub struct ClassificationTrace {
    stages: Vec<StageTrace>,
    pooled: Tensor,
    mask: DropoutMask,
}

impl ClassificationNet {
    pub fn new(config: ClassificationConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut stages = Vec::with_capacity(config.layers.len());
        let mut width = config.input_features;
        for spec in &config.layers {
            stages.push(Stage::new(width, spec, config.dim, rng)?);
            width = spec.channels;
        }
        let fc = Affine::new(width, config.num_classes, rng);
        let dropout = Dropout::new(config.dropout)?;
        Ok(Self {
            config,
            stages,
            fc,
            dropout,
        })
    }

    pub fn config(&self) -> &ClassificationConfig {
        &self.config
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn convs(&self) -> impl Iterator<Item = &ConvPoint> {
        self.stages.iter().map(|s| &s.conv)
    }

    /// Changes the neighborhood size of layer `layer` without touching
    /// parameters.
    pub fn set_neighbors(&mut self, layer: usize, k: usize) -> Result<()> {
        let spec = self
            .config
            .layers
            .get_mut(layer)
            .ok_or(Error::Index {
                what: "layer",
                index: layer,
                bound: self.stages.len(),
            })?;
        if k == 0 {
            return Err(Error::Parameter("neighborhood size must be >= 1".into()));
        }
        spec.neighbors = k;
        Ok(())
    }
}

impl Parameterized for ClassificationNet {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut v: Vec<&Parameter> = self.stages.iter().flat_map(|c| c.parameters()).collect();
        v.extend(self.fc.parameters());
        v
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v: Vec<&mut Parameter> = self
            .stages
            .iter_mut()
            .flat_map(|c| c.parameters_mut())
            .collect();
        v.extend(self.fc.parameters_mut());
        v
    }
}

impl Model for ClassificationNet {
    type Trace = ClassificationTrace;

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn input_features(&self) -> usize {
        self.config.input_features
    }

    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn forward(&self, cloud: &PointCloud, rng: &mut Rng, training: bool) -> Result<(Tensor, ClassificationTrace)> {
        check_input(cloud, self.config.dim, self.config.input_features)?;
        let mut positions = cloud.positions().clone();
        let mut features = cloud.features().clone();
        let mut stages = Vec::with_capacity(self.stages.len());
        for (stage, spec) in self.stages.iter().zip(&self.config.layers) {
            let (out, trace) = stage.forward(spec, &positions, &features, None, rng)?;
            positions = out.positions;
            features = out.features;
            stages.push(trace);
        }
        let (pooled, mask) = self.dropout.forward(&features, training, rng);
        let logits = self.fc.forward(&pooled)?;
        Ok((logits, ClassificationTrace { stages, pooled, mask }))
    }

    fn backward(&self, trace: &ClassificationTrace, upstream: &Tensor, grads: &mut [Tensor]) -> Result<()> {
        let ranges = ranges(&self.stages, 0);
        let fc_at = ranges.last().map_or(0, |r| r.end);
        if grads.len() != fc_at + 2 {
            return Err(Error::Dimension(format!("{} gradient buffers for the classifier", grads.len())));
        }
        let d = self.fc.backward(&trace.pooled, upstream, &mut grads[fc_at..])?;
        let mut d = self.dropout.backward(&trace.mask, &d);
        for ((stage, st), range) in self.stages.iter().zip(&trace.stages).zip(ranges).rev() {
            d = stage.backward(st, &d, &mut grads[range])?;
        }
        Ok(())
    }

    fn stages_mut(&mut self) -> Vec<&mut Stage> {
        self.stages.iter_mut().collect()
    }

    fn stage_outputs<'a>(&self, trace: &'a ClassificationTrace) -> Vec<&'a Tensor> {
        trace.stages.iter().map(StageTrace::pre_activation).collect()
    }
}

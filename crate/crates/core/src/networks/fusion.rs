use serde::{Deserialize, Serialize};

use super::segmentation::{SegmentationNet, SegmentationTrace};
use super::stage::{ranges, Stage, StageTrace};
use super::{LayerSpec, Model};
use crate::conv::ConvPoint;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::nn::{Affine, Dropout, DropoutMask};
use crate::tensor::{Parameter, Parameterized, Tensor};
use crate::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub channels: usize,
    pub kernel_size: usize,
    pub neighbors: usize,
    pub dropout: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            channels: 96,
            kernel_size: 16,
            neighbors: 8,
            dropout: 0.5,
        }
    }
}

/// Residual fusion of two segmentation networks.
///
/// The input cloud carries the first network's features followed by the
/// second's. Both networks run on the same positions (first, then second,
/// drawing from the same generator); their head inputs are concatenated
/// and passed through two convolutions that keep every point, dropout and a
/// point-wise linear layer. The result is added to the sum of both
/// networks' logits.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionNet {
    config: FusionConfig,
    first: SegmentationNet,
    second: SegmentationNet,
    stages: Vec<Stage>,
    fc: Affine,
    dropout: Dropout,
}

pub struct FusionTrace {
    first: SegmentationTrace,
    second: SegmentationTrace,
    stages: Vec<StageTrace>,
    dropped: Tensor,
    mask: DropoutMask,
}

impl FusionNet {
    pub fn new(first: SegmentationNet, second: SegmentationNet, config: FusionConfig, rng: &mut Rng) -> Result<Self> {
        if first.num_classes() != second.num_classes() || first.dim() != second.dim() {
            return Err(Error::Dimension(
                "fused networks must agree on classes and dimension".into(),
            ));
        }
        let spec = LayerSpec::new(config.channels, None, config.kernel_size, config.neighbors);
        spec.validate()?;
        let dropout = Dropout::new(config.dropout)?;
        let width = first.config().head_width() + second.config().head_width();
        let d = first.dim();
        let stages = vec![
            Stage::new(width, &spec, d, rng)?,
            Stage::new(config.channels, &spec, d, rng)?,
        ];
        let fc = Affine::new(config.channels, first.num_classes(), rng);
        Ok(Self {
            config,
            first,
            second,
            stages,
            fc,
            dropout,
        })
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    pub fn first(&self) -> &SegmentationNet {
        &self.first
    }

    pub fn second(&self) -> &SegmentationNet {
        &self.second
    }

    pub fn first_mut(&mut self) -> &mut SegmentationNet {
        &mut self.first
    }

    pub fn second_mut(&mut self) -> &mut SegmentationNet {
        &mut self.second
    }

    /// Marks both base networks frozen (or trainable again).
    pub fn freeze_base(&mut self, frozen: bool) {
        self.first.set_trainable(!frozen);
        self.second.set_trainable(!frozen);
    }

    pub fn convs(&self) -> impl Iterator<Item = &ConvPoint> {
        self.first
            .convs()
            .chain(self.second.convs())
            .chain(self.stages.iter().map(|s| &s.conv))
    }

    /// Residual branch parameters (fusion convolutions and linear layer).
    pub fn residual_parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v: Vec<&mut Parameter> = self.stages.iter_mut().flat_map(|c| c.parameters_mut()).collect();
        v.extend(self.fc.parameters_mut());
        v
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::new(self.config.channels, None, self.config.kernel_size, self.config.neighbors)
    }
}

fn trainable(net: &SegmentationNet) -> bool {
    net.parameters().iter().any(|p| p.trainable)
}

impl Parameterized for FusionNet {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut v = self.first.parameters();
        v.extend(self.second.parameters());
        v.extend(self.stages.iter().flat_map(|c| c.parameters()));
        v.extend(self.fc.parameters());
        v
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.first.parameters_mut();
        v.extend(self.second.parameters_mut());
        v.extend(self.stages.iter_mut().flat_map(|c| c.parameters_mut()));
        v.extend(self.fc.parameters_mut());
        v
    }
}

impl Model for FusionNet {
    type Trace = FusionTrace;

    fn dim(&self) -> usize {
        self.first.dim()
    }

    fn input_features(&self) -> usize {
        self.first.input_features() + self.second.input_features()
    }

    fn num_classes(&self) -> usize {
        self.first.num_classes()
    }

    fn forward(&self, cloud: &PointCloud, rng: &mut Rng, training: bool) -> Result<(Tensor, FusionTrace)> {
        if cloud.feature_dim() != self.input_features() {
            return Err(Error::Dimension(format!(
                "fusion expects {} features, got {}",
                self.input_features(),
                cloud.feature_dim()
            )));
        }
        let parts = cloud
            .features()
            .split_cols(&[self.first.input_features(), self.second.input_features()])?;
        let cloud_a = PointCloud::new(cloud.positions().clone(), parts[0].clone())?;
        let cloud_b = PointCloud::new(cloud.positions().clone(), parts[1].clone())?;
        let (out_a, first) = self.first.forward(&cloud_a, rng, training)?;
        let (out_b, second) = self.second.forward(&cloud_b, rng, training)?;
        if out_a.rows() != out_b.rows() {
            return Err(Error::Dimension("fused networks produced different point counts".into()));
        }

        let spec = self.spec();
        let positions = cloud.positions();
        let mut features = Tensor::concat_cols(&[&first.head_input, &second.head_input])?;
        let mut stages = Vec::with_capacity(2);
        for stage in &self.stages {
            let (out, trace) = stage.forward(&spec, positions, &features, None, rng)?;
            features = out.features;
            stages.push(trace);
        }
        let (dropped, mask) = self.dropout.forward(&features, training, rng);
        let mut out = self.fc.forward(&dropped)?;
        let mut base = out_a;
        base.add_assign(&out_b)?;
        // (outA + outB) + residual
        base.add_assign(&out)?;
        out = base;
        Ok((
            out,
            FusionTrace {
                first,
                second,
                stages,
                dropped,
                mask,
            },
        ))
    }

    fn backward(&self, trace: &FusionTrace, upstream: &Tensor, grads: &mut [Tensor]) -> Result<()> {
        let na = self.first.parameters().len();
        let nb = self.second.parameters().len();
        let own_ranges = ranges(&self.stages, 0);
        let fc_at = own_ranges.last().map_or(0, |r| r.end);
        let own = fc_at + 2;
        if grads.len() != na + nb + own {
            return Err(Error::Dimension(format!("{} gradient buffers for the fusion net", grads.len())));
        }
        let (ga, rest) = grads.split_at_mut(na);
        let (gb, gf) = rest.split_at_mut(nb);

        let d = self.fc.backward(&trace.dropped, upstream, &mut gf[fc_at..])?;
        let mut d = self.dropout.backward(&trace.mask, &d);
        for ((stage, st), range) in self.stages.iter().zip(&trace.stages).zip(own_ranges).rev() {
            d = stage.backward(st, &d, &mut gf[range])?;
        }

        let wa = self.first.config().head_width();
        let wb = self.second.config().head_width();
        let heads = d.split_cols(&[wa, wb])?;
        if trainable(&self.first) {
            self.first.backward_with_head(&trace.first, upstream, Some(&heads[0]), ga)?;
        }
        if trainable(&self.second) {
            self.second.backward_with_head(&trace.second, upstream, Some(&heads[1]), gb)?;
        }
        Ok(())
    }

    fn stages_mut(&mut self) -> Vec<&mut Stage> {
        let mut v = self.first.stages_mut();
        v.extend(self.second.stages_mut());
        v.extend(self.stages.iter_mut());
        v
    }

    fn stage_outputs<'a>(&self, trace: &'a FusionTrace) -> Vec<&'a Tensor> {
        let mut v = self.first.stage_outputs(&trace.first);
        v.extend(self.second.stage_outputs(&trace.second));
        v.extend(trace.stages.iter().map(StageTrace::pre_activation));
        v
    }
}

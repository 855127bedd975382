//! Networks assembled from point convolutions.
//!
//! * [`ClassificationNet`]: five convolutions shrinking the cloud to one
//!   point, then a fully connected layer.
//! * [`SegmentationNet`]: encoder-decoder with skip connections; decoder
//!   layers convolve onto the positions recorded by the mirrored encoder
//!   layer and concatenate that layer's features.
//! * [`FusionNet`]: residual fusion of two segmentation networks.
//!
//! Every network reports its output as a logit tensor (one row for
//! classification, one row per input point for segmentation) and supports
//! an explicit backward pass driven by the trace of its forward pass.

mod classification;
mod fusion;
mod segmentation;
pub mod stage;

use serde::{Deserialize, Serialize};

pub use classification::{ClassificationConfig, ClassificationNet, ClassificationTrace};
pub use fusion::{FusionConfig, FusionNet, FusionTrace};
pub use segmentation::{SegmentationConfig, SegmentationNet, SegmentationTrace};
pub use stage::{Stage, StageTrace};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::tensor::{Parameter, Parameterized, Tensor};
use crate::Rng;

/// Configuration of one convolution layer: output channels `C`, output point
/// count `|Q|` (`None` keeps every input point), kernel size `|K|` and
/// neighborhood size `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub channels: usize,
    pub points: Option<usize>,
    pub kernel_size: usize,
    pub neighbors: usize,
}

impl LayerSpec {
    pub const fn new(channels: usize, points: Option<usize>, kernel_size: usize, neighbors: usize) -> Self {
        Self {
            channels,
            points,
            kernel_size,
            neighbors,
        }
    }

    /// `(C, |Q|, k)`, with `None` for "same as input".
    pub fn triple(&self) -> (usize, Option<usize>, usize) {
        (self.channels, self.points, self.neighbors)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0
            || self.kernel_size == 0
            || self.neighbors == 0
            || self.points == Some(0)
        {
            return Err(Error::Parameter(format!("layer sizes must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// A network that maps a point cloud to logits.
pub trait Model: Parameterized + Send + Sync {
    type Trace: Send;

    /// Input spatial dimension.
    fn dim(&self) -> usize;

    /// Input feature width.
    fn input_features(&self) -> usize;

    fn num_classes(&self) -> usize;

    /// Runs the network. `rng` drives output-point sampling and, when
    /// `training`, dropout.
    fn forward(&self, cloud: &PointCloud, rng: &mut Rng, training: bool) -> Result<(Tensor, Self::Trace)>;

    /// Accumulates parameter gradients for `upstream = ∂L/∂logits` into
    /// `grads` (ordered as [`Parameterized::parameters`]).
    fn backward(&self, trace: &Self::Trace, upstream: &Tensor, grads: &mut [Tensor]) -> Result<()>;

    /// Convolution stages in forward order.
    fn stages_mut(&mut self) -> Vec<&mut Stage>;

    /// Pre-activations of every stage recorded in `trace`, in the order of
    /// [`Model::stages_mut`].
    fn stage_outputs<'a>(&self, trace: &'a Self::Trace) -> Vec<&'a Tensor>;
}

/// Serializable description of a network, stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Architecture {
    Classification(ClassificationConfig),
    Segmentation(SegmentationConfig),
    Fusion {
        first: SegmentationConfig,
        second: SegmentationConfig,
        fusion: FusionConfig,
    },
}

impl Architecture {
    pub fn build(&self, rng: &mut Rng) -> Result<Network> {
        Ok(match self {
            Architecture::Classification(c) => Network::Classification(ClassificationNet::new(c.clone(), rng)?),
            Architecture::Segmentation(c) => Network::Segmentation(SegmentationNet::new(c.clone(), rng)?),
            Architecture::Fusion { first, second, fusion } => {
                let a = SegmentationNet::new(first.clone(), rng)?;
                let b = SegmentationNet::new(second.clone(), rng)?;
                Network::Fusion(FusionNet::new(a, b, fusion.clone(), rng)?)
            }
        })
    }
}

/// Any of the supported networks.
#[derive(Clone, Debug, PartialEq)]
pub enum Network {
    Classification(ClassificationNet),
    Segmentation(SegmentationNet),
    Fusion(FusionNet),
}

pub enum NetworkTrace {
    Classification(ClassificationTrace),
    Segmentation(SegmentationTrace),
    Fusion(FusionTrace),
}

impl Network {
    pub fn architecture(&self) -> Architecture {
        match self {
            Network::Classification(n) => Architecture::Classification(n.config().clone()),
            Network::Segmentation(n) => Architecture::Segmentation(n.config().clone()),
            Network::Fusion(n) => Architecture::Fusion {
                first: n.first().config().clone(),
                second: n.second().config().clone(),
                fusion: n.config().clone(),
            },
        }
    }

    /// Whether logits are per point (segmentation) rather than per cloud.
    pub fn is_pointwise(&self) -> bool {
        !matches!(self, Network::Classification(_))
    }

    /// Convolution layers in parameter order.
    pub fn conv_layers(&self) -> Vec<&crate::conv::ConvPoint> {
        match self {
            Network::Classification(n) => n.convs().collect(),
            Network::Segmentation(n) => n.convs().collect(),
            Network::Fusion(n) => n.convs().collect(),
        }
    }
}

impl Parameterized for Network {
    fn parameters(&self) -> Vec<&Parameter> {
        match self {
            Network::Classification(n) => n.parameters(),
            Network::Segmentation(n) => n.parameters(),
            Network::Fusion(n) => n.parameters(),
        }
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            Network::Classification(n) => n.parameters_mut(),
            Network::Segmentation(n) => n.parameters_mut(),
            Network::Fusion(n) => n.parameters_mut(),
        }
    }
}

impl Model for Network {
    type Trace = NetworkTrace;

    fn dim(&self) -> usize {
        match self {
            Network::Classification(n) => n.dim(),
            Network::Segmentation(n) => n.dim(),
            Network::Fusion(n) => n.dim(),
        }
    }

    fn input_features(&self) -> usize {
        match self {
            Network::Classification(n) => n.input_features(),
            Network::Segmentation(n) => n.input_features(),
            Network::Fusion(n) => n.input_features(),
        }
    }

    fn num_classes(&self) -> usize {
        match self {
            Network::Classification(n) => n.num_classes(),
            Network::Segmentation(n) => n.num_classes(),
            Network::Fusion(n) => n.num_classes(),
        }
    }

    fn forward(&self, cloud: &PointCloud, rng: &mut Rng, training: bool) -> Result<(Tensor, NetworkTrace)> {
        Ok(match self {
            Network::Classification(n) => {
                let (y, t) = n.forward(cloud, rng, training)?;
                (y, NetworkTrace::Classification(t))
            }
            Network::Segmentation(n) => {
                let (y, t) = n.forward(cloud, rng, training)?;
                (y, NetworkTrace::Segmentation(t))
            }
            Network::Fusion(n) => {
                let (y, t) = n.forward(cloud, rng, training)?;
                (y, NetworkTrace::Fusion(t))
            }
        })
    }

    fn backward(&self, trace: &NetworkTrace, upstream: &Tensor, grads: &mut [Tensor]) -> Result<()> {
        match (self, trace) {
            (Network::Classification(n), NetworkTrace::Classification(t)) => n.backward(t, upstream, grads),
            (Network::Segmentation(n), NetworkTrace::Segmentation(t)) => n.backward(t, upstream, grads),
            (Network::Fusion(n), NetworkTrace::Fusion(t)) => n.backward(t, upstream, grads),
            _ => Err(Error::Parameter("trace does not belong to this network".into())),
        }
    }

    fn stages_mut(&mut self) -> Vec<&mut Stage> {
        match self {
            Network::Classification(n) => n.stages_mut(),
            Network::Segmentation(n) => n.stages_mut(),
            Network::Fusion(n) => n.stages_mut(),
        }
    }

    fn stage_outputs<'a>(&self, trace: &'a NetworkTrace) -> Vec<&'a Tensor> {
        match (self, trace) {
            (Network::Classification(n), NetworkTrace::Classification(t)) => n.stage_outputs(t),
            (Network::Segmentation(n), NetworkTrace::Segmentation(t)) => n.stage_outputs(t),
            (Network::Fusion(n), NetworkTrace::Fusion(t)) => n.stage_outputs(t),
            _ => Vec::new(),
        }
    }
}

fn check_input(cloud: &PointCloud, dim: usize, features: usize) -> Result<()> {
    if cloud.dim() != dim || cloud.feature_dim() != features {
        return Err(Error::Dimension(format!(
            "network expects {dim}-d points with {features} features, got {}-d with {}",
            cloud.dim(),
            cloud.feature_dim()
        )));
    }
    Ok(())
}

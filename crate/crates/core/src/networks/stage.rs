//! Convolution followed by ReLU: the building block shared by all networks.

use std::ops::Range;

use crate::conv::{ConvCache, ConvPoint, LayerOutput, OutputPoints, CONV_PARAMETER_COUNT};
use crate::error::{Error, Result};
use crate::nn::{relu, relu_backward_in_place};
use crate::tensor::{Parameter, Parameterized, Tensor};
use crate::Rng;

use super::LayerSpec;

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub conv: ConvPoint,
}

#[derive(Clone, Debug)]
pub struct StageTrace {
    input: Tensor,
    cache: ConvCache,
    pre_activation: Tensor,
}

impl StageTrace {
    /// Convolution output before the ReLU.
    pub fn pre_activation(&self) -> &Tensor {
        &self.pre_activation
    }
}

impl Stage {
    pub fn new(inputs: usize, spec: &LayerSpec, dim: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            conv: ConvPoint::new(inputs, spec.channels, spec.kernel_size, dim, rng)?,
        })
    }

    pub(crate) fn forward(
        &self,
        spec: &LayerSpec,
        positions: &Tensor,
        features: &Tensor,
        target: Option<&Tensor>,
        rng: &mut Rng,
    ) -> Result<(LayerOutput, StageTrace)> {
        let output = match (target, spec.points) {
            (Some(q), _) => OutputPoints::Given(q),
            (None, Some(m)) => OutputPoints::Sample(m),
            (None, None) => OutputPoints::All,
        };
        let (mut out, cache) = self.conv.apply(positions, features, output, spec.neighbors, rng)?;
        let pre_activation = std::mem::replace(&mut out.features, Tensor::zeros(&[0]));
        out.features = relu(&pre_activation);
        let trace = StageTrace {
            input: features.clone(),
            cache,
            pre_activation,
        };
        Ok((out, trace))
    }

    /// Returns the gradient with respect to the stage input features.
    pub(crate) fn backward(&self, trace: &StageTrace, upstream: &Tensor, grads: &mut [Tensor]) -> Result<Tensor> {
        let mut d = upstream.clone();
        relu_backward_in_place(&trace.pre_activation, &mut d);
        self.conv.backward(&trace.cache, &trace.input, &d, grads)
    }

    /// Replaces output channel `t` by `(y_t − shift_t) / scale_t`, folding
    /// the affine map into the feature weights and bias.
    pub fn rescale(&mut self, shift: &[f64], scale: &[f64]) -> Result<()> {
        let c = self.conv.out_channels();
        if shift.len() != c || scale.len() != c || scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Parameter(format!("rescaling {c} channels needs {c} positive scales")));
        }
        for (i, w) in self.conv.kernel.weights.value.data_mut().iter_mut().enumerate() {
            *w /= scale[i % c];
        }
        for (t, b) in self.conv.kernel.bias.value.data_mut().iter_mut().enumerate() {
            *b = (*b - shift[t]) / scale[t];
        }
        Ok(())
    }

    pub fn parameter_len(&self) -> usize {
        CONV_PARAMETER_COUNT
    }
}

impl Parameterized for Stage {
    fn parameters(&self) -> Vec<&Parameter> {
        self.conv.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.conv.parameters_mut()
    }
}

/// Gradient-buffer ranges of consecutive stages starting at `offset`.
pub(crate) fn ranges(stages: &[Stage], offset: usize) -> Vec<Range<usize>> {
    let mut at = offset;
    stages
        .iter()
        .map(|s| {
            let r = at..at + s.parameter_len();
            at = r.end;
            r
        })
        .collect()
}
